"""
Dependency extraction: manifest bytes -> resolved DependencyTree.

NPM input is a package-lock.json in lockfile format 2 or 3 (the flat "packages"
map keyed by install path). Edges are rebuilt with npm's own lookup rule: a
dependency named X of the package installed at P resolves to the nearest
"<ancestor>/node_modules/X" walking up from P to the project root.

Maven input is the text written by `mvn dependency:tree -DoutputFile=...`:

    com.example:app:jar:1.0.0
    +- org.slf4j:slf4j-api:jar:2.0.9:compile
    |  \\- org.example:inner:jar:1.0:runtime
    \\- junit:junit:jar:4.13.2:test

Depth-0 lines are project modules and collapse into the project root, so their
depth-1 children are Direct. Console logs ("[INFO] " prefixes) are tolerated on
tree lines only. capture_maven_tree() shells out to mvn for projects that do not
have a captured tree yet; the exact command line is returned for the pond.

Scopes (dev/optional/peer for npm, compile/test/... for Maven) are kept as an
opaque node attribute and never filtered. Workspace packages that resolve to a
local path are kept as nodes with local=True; the fetch stage skips them.
"""

from __future__ import annotations

import json
import logging
import re
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

from smell_model import Ecosystem, PackageCoordinate, SmellFlowError

logger = logging.getLogger(__name__)

NODE_MODULES = "node_modules/"
# Dependency sections read from each lockfile entry. devDependencies only count
# for the root; other packages' dev deps are never installed.
NPM_DEP_SECTIONS = ("dependencies", "optionalDependencies", "peerDependencies")
NPM_ROOT_DEP_SECTIONS = ("dependencies", "devDependencies", "optionalDependencies", "peerDependencies")
NPM_ALIAS_PREFIX = "npm:"
LOCAL_VERSION = "local"

MAVEN_TREE_CMD = ("dependency:tree", "-DoutputType=text")


class UnsupportedLockfileVersion(SmellFlowError):
    pass


class MalformedManifest(SmellFlowError):
    pass


class Directness(str, Enum):
    DIRECT = "direct"
    TRANSITIVE = "transitive"


@dataclass(frozen=True)
class DependencyEdge:
    parent: PackageCoordinate
    child: PackageCoordinate
    directness: Directness


@dataclass(frozen=True)
class AliasBinding:
    declared_name: str
    actual: PackageCoordinate
    declared_in: PackageCoordinate

    def __post_init__(self) -> None:
        if self.declared_name == self.actual.name:
            raise ValueError(f"{self.declared_name!r} is not an alias of {self.actual.display}")


@dataclass(frozen=True)
class NodeAttributes:
    scope: str = "prod"
    local: bool = False


@dataclass(frozen=True)
class DependencyTree:
    project: PackageCoordinate
    nodes: frozenset[PackageCoordinate] = frozenset()
    edges: frozenset[DependencyEdge] = frozenset()
    aliases: frozenset[AliasBinding] = frozenset()
    attributes: dict[PackageCoordinate, NodeAttributes] = field(default_factory=dict)

    __hash__ = None  # attributes is a dict

    @property
    def ecosystem(self) -> Ecosystem:
        return self.project.ecosystem

    def attributes_of(self, coord: PackageCoordinate) -> NodeAttributes:
        return self.attributes.get(coord, NodeAttributes())

    def is_local(self, coord: PackageCoordinate) -> bool:
        return self.attributes_of(coord).local

    def remote_nodes(self) -> list[PackageCoordinate]:
        """Nodes with a registry identity, in canonical order."""
        return sorted((n for n in self.nodes if not self.is_local(n)), key=PackageCoordinate.sort_key)

    def direct_dependencies(self) -> list[PackageCoordinate]:
        return sorted(
            {e.child for e in self.edges if e.directness is Directness.DIRECT},
            key=PackageCoordinate.sort_key,
        )

    def aliases_targeting(self, coord: PackageCoordinate) -> list[AliasBinding]:
        return sorted(
            (a for a in self.aliases if a.actual == coord),
            key=lambda a: (a.declared_name, a.declared_in.sort_key()),
        )

    def validate(self) -> list[str]:
        """Return the broken tree invariants, empty when the tree is sound."""
        problems = []
        for edge in self.edges:
            for end in (edge.parent, edge.child):
                if end != self.project and end not in self.nodes:
                    problems.append(f"edge endpoint {end.key} is not a node")
            if (edge.directness is Directness.DIRECT) != (edge.parent == self.project):
                problems.append(f"edge {edge.parent.key} -> {edge.child.key} has wrong directness")
        for alias in self.aliases:
            if alias.actual not in self.nodes:
                problems.append(f"alias {alias.declared_name!r} targets {alias.actual.key}, not a node")
        for coord in self.attributes:
            if coord not in self.nodes:
                problems.append(f"attributes for {coord.key}, not a node")
        return problems


def _edge(project: PackageCoordinate, parent: PackageCoordinate, child: PackageCoordinate) -> DependencyEdge:
    return DependencyEdge(
        parent, child, Directness.DIRECT if parent == project else Directness.TRANSITIVE
    )


# ---------------------------------------------------------------------------
# NPM
# ---------------------------------------------------------------------------

def _npm_name_from_path(path: str) -> str:
    """node_modules/a/node_modules/@s/b -> @s/b; packages/utils -> utils."""
    if NODE_MODULES in path:
        return path.rsplit(NODE_MODULES, 1)[1]
    return path.rstrip("/").rsplit("/", 1)[-1]


def _npm_parent_path(path: str) -> str:
    """Install path of the package whose node_modules holds `path`."""
    if NODE_MODULES not in path:
        return ""
    head = path.rsplit(NODE_MODULES, 1)[0]
    return head.rstrip("/")


def _npm_resolve(packages: dict, from_path: str, dep_name: str) -> Optional[str]:
    """npm lookup: nearest node_modules/<dep_name> walking up from from_path."""
    base = from_path
    while True:
        candidate = f"{base}/{NODE_MODULES}{dep_name}" if base else f"{NODE_MODULES}{dep_name}"
        if candidate in packages:
            return candidate
        if not base:
            return None
        # Step out of the current package, then out of its node_modules folder.
        base = _npm_parent_path(base) if NODE_MODULES in base else ""


def _npm_scope(entry: dict) -> str:
    if entry.get("peer"):
        return "peer"
    if entry.get("dev"):
        return "dev"
    if entry.get("optional") or entry.get("devOptional"):
        return "optional"
    return "prod"


def _parse_alias_spec(spec: str) -> Optional[tuple[str, str]]:
    """'npm:lodash@^4.17.21' -> ('lodash', '^4.17.21'); '@s/x@1' keeps the scope."""
    if not isinstance(spec, str) or not spec.startswith(NPM_ALIAS_PREFIX):
        return None
    target = spec[len(NPM_ALIAS_PREFIX):]
    at = target.rfind("@")
    if at <= 0:
        return target, ""
    return target[:at], target[at + 1:]


def extract_npm(lockfile_bytes: bytes) -> DependencyTree:
    """Parse package-lock.json (format 2 or 3) into a DependencyTree."""
    try:
        doc = json.loads(lockfile_bytes)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedManifest(f"package-lock.json is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedManifest("package-lock.json must be a JSON object")

    version = doc.get("lockfileVersion")
    packages = doc.get("packages")
    if version not in (2, 3) or not isinstance(packages, dict):
        raise UnsupportedLockfileVersion(
            f"lockfileVersion {version!r} is not supported; regenerate the lockfile with npm >= 7"
        )

    root_entry = packages.get("", {})
    if not isinstance(root_entry, dict):
        raise MalformedManifest("packages[''] must be an object")
    try:
        project = PackageCoordinate(
            Ecosystem.NPM,
            root_entry.get("name") or doc.get("name") or "project",
            root_entry.get("version") or doc.get("version") or LOCAL_VERSION,
        )
    except ValueError as exc:
        raise MalformedManifest(f"root package: {exc}") from exc

    # Install paths reached through an "npm:<real>@<range>" specifier -> real name.
    alias_specs: dict[str, str] = {}
    for path, entry in packages.items():
        if not isinstance(entry, dict):
            raise MalformedManifest(f"packages[{path!r}] must be an object")
        for section in NPM_ROOT_DEP_SECTIONS if path == "" else NPM_DEP_SECTIONS:
            deps = entry.get(section) or {}
            if not isinstance(deps, dict):
                raise MalformedManifest(f"packages[{path!r}].{section} must be an object")
            for dep_name, spec in deps.items():
                target = _parse_alias_spec(spec)
                child_path = _npm_resolve(packages, path, dep_name) if target else None
                if child_path is not None:
                    alias_specs[child_path] = target[0]

    # path -> (coordinate, attributes); link entries borrow their target's identity.
    resolved: dict[str, tuple[PackageCoordinate, NodeAttributes]] = {}

    def _resolve_entry(path: str, seen: tuple[str, ...] = ()) -> tuple[PackageCoordinate, NodeAttributes]:
        if path in resolved:
            return resolved[path]
        entry = packages[path]
        if entry.get("link"):
            target = entry.get("resolved")
            if not isinstance(target, str) or target in seen:
                raise MalformedManifest(f"packages[{path!r}] is a link without a usable target")
            if target in packages:
                coord, _ = _resolve_entry(target, seen + (path,))
            else:
                coord = PackageCoordinate(Ecosystem.NPM, _npm_name_from_path(target), LOCAL_VERSION)
            result = (coord, NodeAttributes(scope=_npm_scope(entry), local=True))
        else:
            local = NODE_MODULES not in path
            name = entry.get("name") or alias_specs.get(path) or _npm_name_from_path(path)
            ver = entry.get("version") or (LOCAL_VERSION if local else None)
            if not ver:
                raise MalformedManifest(f"packages[{path!r}] has no version")
            try:
                coord = PackageCoordinate(Ecosystem.NPM, name, ver)
            except ValueError as exc:
                raise MalformedManifest(f"packages[{path!r}]: {exc}") from exc
            result = (coord, NodeAttributes(scope=_npm_scope(entry), local=local))
        resolved[path] = result
        return result

    nodes: set[PackageCoordinate] = set()
    attributes: dict[PackageCoordinate, NodeAttributes] = {}
    for path in sorted(packages):
        if path == "":
            continue
        coord, attrs = _resolve_entry(path)
        nodes.add(coord)
        # Same coordinate at several paths: local wins, then the first scope seen.
        prev = attributes.get(coord)
        if prev is None or (attrs.local and not prev.local):
            attributes[coord] = attrs

    def _coord_at(path: str) -> PackageCoordinate:
        return project if path == "" else resolved[path][0]

    edges: set[DependencyEdge] = set()
    aliases: set[AliasBinding] = set()
    for path in sorted(packages):
        entry = packages[path]
        if entry.get("link"):
            continue
        parent = _coord_at(path)
        sections = NPM_ROOT_DEP_SECTIONS if path == "" else NPM_DEP_SECTIONS
        for section in sections:
            for dep_name in sorted(entry.get(section) or {}):
                child_path = _npm_resolve(packages, path, dep_name)
                if child_path is None:
                    # Unmet optional/peer dependency; nothing installed.
                    continue
                child = _coord_at(child_path)
                if child == parent:
                    continue
                edges.add(_edge(project, parent, child))
                if child.name != dep_name and not resolved[child_path][1].local:
                    aliases.add(AliasBinding(dep_name, child, parent))

    # Aliased installs nobody declares (e.g. a pruned parent) still count, bound to the root.
    declared = {(a.declared_name, a.actual) for a in aliases}
    for path, (coord, attrs) in sorted(resolved.items()):
        if NODE_MODULES not in path or attrs.local:
            continue
        installed_as = _npm_name_from_path(path)
        if installed_as != coord.name and (installed_as, coord) not in declared:
            aliases.add(AliasBinding(installed_as, coord, project))

    tree = DependencyTree(
        project=project,
        nodes=frozenset(nodes),
        edges=frozenset(edges),
        aliases=frozenset(aliases),
        attributes=attributes,
    )
    logger.debug(f"npm lockfile: {len(nodes)} nodes, {len(edges)} edges, {len(aliases)} aliases")
    return tree


# ---------------------------------------------------------------------------
# Maven
# ---------------------------------------------------------------------------

_INFO_PREFIX = re.compile(r"^\[(INFO|WARNING)\]\s?")
_TREE_PREFIX = re.compile(r"^((?:\|  |   |\+- |\\- )*)(.*)$")
_MAVEN_PART = re.compile(r"^[A-Za-z0-9_.\-$]+$")


def _parse_maven_coordinate(text: str, lineno: int, is_root: bool) -> tuple[PackageCoordinate, str, bool]:
    """Split 'g:a:type[:classifier]:version[:scope]' into (coordinate, scope, optional)."""
    optional = False
    body = text.strip()
    if body.startswith("(") and body.endswith(")"):
        # verbose output: "(g:a:jar:1.0:compile - omitted for duplicate)"
        body = body[1:-1].split(" - ", 1)[0].strip()
    if body.endswith(" (optional)"):
        optional = True
        body = body[: -len(" (optional)")].strip()
    parts = body.split(":")
    if is_root:
        if len(parts) not in (4, 5):
            raise MalformedManifest(f"line {lineno}: {text!r} is not a 'groupId:artifactId:type:version' root")
        group, artifact, version = parts[0], parts[1], parts[-1]
        scope = ""
    else:
        if len(parts) not in (5, 6):
            raise MalformedManifest(
                f"line {lineno}: {text!r} is not a 'groupId:artifactId:type[:classifier]:version:scope' line"
            )
        group, artifact, version, scope = parts[0], parts[1], parts[-2], parts[-1]
    if not all(_MAVEN_PART.match(p) for p in parts):
        raise MalformedManifest(f"line {lineno}: {text!r} has an invalid coordinate segment")
    try:
        coord = PackageCoordinate(Ecosystem.MAVEN, f"{group}:{artifact}", version)
    except ValueError as exc:
        raise MalformedManifest(f"line {lineno}: {exc}") from exc
    return coord, scope, optional


def extract_maven(tree_text: bytes) -> DependencyTree:
    """Parse dependency-plugin tree output into a DependencyTree."""
    try:
        text = tree_text.decode("utf-8") if isinstance(tree_text, (bytes, bytearray)) else tree_text
    except UnicodeDecodeError as exc:
        raise MalformedManifest(f"dependency tree is not UTF-8: {exc}") from exc

    project: Optional[PackageCoordinate] = None
    nodes: set[PackageCoordinate] = set()
    edges: set[DependencyEdge] = set()
    attributes: dict[PackageCoordinate, NodeAttributes] = {}
    # stack[d] is the coordinate currently open at depth d.
    stack: list[PackageCoordinate] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _INFO_PREFIX.sub("", raw.rstrip())
        if not line.strip():
            continue
        prefix, body = _TREE_PREFIX.match(line).groups()
        depth = len(prefix) // 3
        if depth == 0:
            coord, _, _ = _parse_maven_coordinate(body, lineno, is_root=True)
            if project is None:
                project = coord
            # Extra modules of a multi-module build fold into the project root.
            stack = [project]
            continue
        if project is None or depth > len(stack):
            raise MalformedManifest(f"line {lineno}: {raw!r} is indented below no parent")
        coord, scope, optional = _parse_maven_coordinate(body, lineno, is_root=False)
        stack = stack[:depth]
        parent = stack[-1]
        stack.append(coord)
        if coord == project:
            continue
        nodes.add(coord)
        attributes.setdefault(coord, NodeAttributes(scope=f"{scope}+optional" if optional else scope))
        if parent != coord:
            edges.add(_edge(project, parent, coord))

    if project is None:
        raise MalformedManifest("dependency tree has no root coordinate line")

    return DependencyTree(
        project=project,
        nodes=frozenset(nodes),
        edges=frozenset(edges),
        aliases=frozenset(),
        attributes=attributes,
    )


def capture_maven_tree(project_dir: Path, mvn: str = "mvn", timeout: int = 900) -> tuple[bytes, list[str]]:
    """
    Run the dependency plugin in project_dir and return (tree text, command line).

    Raises MalformedManifest when mvn is missing or the build fails, since there
    is no tree to analyze either way.
    """
    if shutil.which(mvn) is None:
        raise MalformedManifest(f"'{mvn}' not found on PATH; capture the tree with mvn {' '.join(MAVEN_TREE_CMD)}")
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "dependency-tree.txt"
        cmd = [mvn, "-q", "-B", *MAVEN_TREE_CMD, f"-DoutputFile={out}", "-DappendOutput=true"]
        logger.info(f"Running {' '.join(cmd)} in {project_dir}")
        proc = subprocess.run(cmd, cwd=project_dir, capture_output=True, text=True, timeout=timeout)
        if proc.returncode != 0:
            tail = (proc.stdout + proc.stderr).strip().splitlines()[-20:]
            raise MalformedManifest("mvn dependency:tree failed:\n" + "\n".join(tail))
        # Recorded without the temp path so the pond stays reproducible.
        recorded = [mvn, "-q", "-B", *MAVEN_TREE_CMD, "-DoutputFile=<tmp>/dependency-tree.txt", "-DappendOutput=true"]
        return out.read_bytes(), recorded


def load_dependency_tree(ecosystem: Ecosystem, manifest: Path, run_build_tool: bool = False) -> tuple[DependencyTree, Optional[list[str]]]:
    """Read the manifest at `manifest` (or run mvn) and extract its tree."""
    if ecosystem is Ecosystem.NPM:
        path = manifest / "package-lock.json" if manifest.is_dir() else manifest
        return extract_npm(path.read_bytes()), None
    if run_build_tool:
        project_dir = manifest if manifest.is_dir() else manifest.parent
        text, command = capture_maven_tree(project_dir)
        return extract_maven(text), command
    return extract_maven(manifest.read_bytes()), None
