"""
Dirty pond: the persisted result of one project analysis.

The pond is the only thing report rendering, the CI gate and prevalence
aggregation read, so it is self-contained (tree, facts, findings, markers,
summary, effective config) and canonical: JSON with sorted keys, two-space
indent, UTF-8, trailing newline, every collection ordered by coordinate then
smell id. Writing the same pond twice gives the same bytes.

schema_version gates parsing. Version 1 is the only one this code reads; the
field set is documented in docs/pond-schema.md and evolves additively.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Optional, Union

from manifest_extractor import AliasBinding, DependencyEdge, DependencyTree, Directness, NodeAttributes
from smell_engine import (
    AnalysisNote,
    Indeterminate,
    PackageFacts,
    SmellFinding,
    SmellSummary,
    summarize,
)
from smell_model import (
    TOOL_VERSION,
    PackageCoordinate,
    SmellFlowError,
    format_timestamp,
    is_supported,
    parse_timestamp,
    to_utc_second,
)

SCHEMA_VERSION = 1


class PondIOError(SmellFlowError):
    pass


class SchemaMismatch(SmellFlowError):
    pass


class PondValidationError(SmellFlowError):
    def __init__(self, where: str, problems: list[str]):
        self.where = where
        self.problems = list(problems)
        super().__init__(f"{where}: " + "; ".join(self.problems))


@dataclass(frozen=True)
class FetchProvenance:
    mode: str = "offline"
    request_count: int = 0
    request_log_digest: str = ""

    def to_dict(self) -> dict:
        return {"mode": self.mode, "request_count": self.request_count, "request_log_digest": self.request_log_digest}

    @classmethod
    def from_dict(cls, d: dict) -> FetchProvenance:
        return cls(d["mode"], d["request_count"], d["request_log_digest"])


# ---------------------------------------------------------------------------
# Tree encoding
# ---------------------------------------------------------------------------

def canonical_tree(tree: DependencyTree) -> DependencyTree:
    """Same tree with an attribute entry for every node."""
    return DependencyTree(
        project=tree.project,
        nodes=frozenset(tree.nodes),
        edges=frozenset(tree.edges),
        aliases=frozenset(tree.aliases),
        attributes={n: tree.attributes_of(n) for n in tree.nodes},
    )


def tree_to_dict(tree: DependencyTree) -> dict:
    nodes = sorted(tree.nodes, key=PackageCoordinate.sort_key)
    edges = sorted(tree.edges, key=lambda e: (e.parent.sort_key(), e.child.sort_key()))
    aliases = sorted(tree.aliases, key=lambda a: (a.actual.sort_key(), a.declared_name, a.declared_in.sort_key()))
    return {
        "project": tree.project.to_dict(),
        "nodes": [
            {**n.to_dict(), "scope": tree.attributes_of(n).scope, "local": tree.attributes_of(n).local}
            for n in nodes
        ],
        "edges": [
            {"parent": e.parent.to_dict(), "child": e.child.to_dict(), "directness": e.directness.value}
            for e in edges
        ],
        "aliases": [
            {"declared_name": a.declared_name, "actual": a.actual.to_dict(), "declared_in": a.declared_in.to_dict()}
            for a in aliases
        ],
    }


def tree_from_dict(d: dict) -> DependencyTree:
    attributes = {}
    for node in d["nodes"]:
        coord = PackageCoordinate.from_dict(node)
        attributes[coord] = NodeAttributes(scope=node["scope"], local=node["local"])
    return DependencyTree(
        project=PackageCoordinate.from_dict(d["project"]),
        nodes=frozenset(attributes),
        edges=frozenset(
            DependencyEdge(
                PackageCoordinate.from_dict(e["parent"]),
                PackageCoordinate.from_dict(e["child"]),
                Directness(e["directness"]),
            )
            for e in d["edges"]
        ),
        aliases=frozenset(
            AliasBinding(
                a["declared_name"],
                PackageCoordinate.from_dict(a["actual"]),
                PackageCoordinate.from_dict(a["declared_in"]),
            )
            for a in d["aliases"]
        ),
        attributes=attributes,
    )


# ---------------------------------------------------------------------------
# Pond
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DirtyPond:
    project: PackageCoordinate
    analyzed_at: datetime
    tree: DependencyTree
    facts: tuple[PackageFacts, ...] = ()
    findings: tuple[SmellFinding, ...] = ()
    indeterminate: tuple[Indeterminate, ...] = ()
    notes: tuple[AnalysisNote, ...] = ()
    summary: Optional[SmellSummary] = None
    config: dict = field(default_factory=dict)
    fetch: FetchProvenance = FetchProvenance()
    command: Optional[tuple[str, ...]] = None
    tool_version: str = TOOL_VERSION
    schema_version: int = SCHEMA_VERSION

    __hash__ = None

    def __post_init__(self) -> None:
        canonical = {
            "analyzed_at": to_utc_second(self.analyzed_at),
            "tree": canonical_tree(self.tree),
            "facts": tuple(sorted(self.facts, key=lambda f: f.coordinate.sort_key())),
            "findings": tuple(sorted(self.findings, key=SmellFinding.sort_key)),
            "indeterminate": tuple(sorted(self.indeterminate, key=Indeterminate.sort_key)),
            "notes": tuple(sorted(self.notes, key=AnalysisNote.sort_key)),
            "config": json.loads(json.dumps(self.config, sort_keys=True)),
        }
        if self.command is not None:
            canonical["command"] = tuple(self.command)
        for name, value in canonical.items():
            object.__setattr__(self, name, value)
        if self.summary is None:
            object.__setattr__(self, "summary", summarize(self.findings, self.tree, self.indeterminate))

    @property
    def ecosystem(self):
        return self.project.ecosystem

    def facts_for(self, coord: PackageCoordinate) -> Optional[PackageFacts]:
        return next((f for f in self.facts if f.coordinate == coord), None)

    def indeterminate_packages(self) -> set[PackageCoordinate]:
        return {m.coordinate for m in self.indeterminate}

    def with_findings(self, findings) -> DirtyPond:
        """Copy with new findings and a recomputed summary."""
        return replace(self, findings=tuple(findings), summary=None)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "tool_version": self.tool_version,
            "project": self.project.to_dict(),
            "analyzed_at": format_timestamp(self.analyzed_at),
            "command": list(self.command) if self.command is not None else None,
            "config": self.config,
            "fetch": self.fetch.to_dict(),
            "tree": tree_to_dict(self.tree),
            "facts": [f.to_dict() for f in self.facts],
            "findings": [f.to_dict() for f in self.findings],
            "indeterminate": [m.to_dict() for m in self.indeterminate],
            "notes": [n.to_dict() for n in self.notes],
            "summary": self.summary.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> DirtyPond:
        return cls(
            schema_version=d["schema_version"],
            tool_version=d["tool_version"],
            project=PackageCoordinate.from_dict(d["project"]),
            analyzed_at=parse_timestamp(d["analyzed_at"]),
            command=tuple(d["command"]) if d["command"] is not None else None,
            config=d["config"],
            fetch=FetchProvenance.from_dict(d["fetch"]),
            tree=tree_from_dict(d["tree"]),
            facts=tuple(PackageFacts.from_dict(f) for f in d["facts"]),
            findings=tuple(SmellFinding.from_dict(f) for f in d["findings"]),
            indeterminate=tuple(Indeterminate.from_dict(m) for m in d["indeterminate"]),
            notes=tuple(AnalysisNote.from_dict(n) for n in d["notes"]),
            summary=SmellSummary.from_dict(d["summary"]),
        )


def validate_pond(pond: DirtyPond) -> list[str]:
    """Broken pond invariants, empty when the pond is sound."""
    problems = [f"tree: {p}" for p in pond.tree.validate()]
    eco = pond.ecosystem
    if pond.tree.project != pond.project:
        problems.append(f"tree project {pond.tree.project.key} differs from pond project {pond.project.key}")

    seen: set[tuple] = set()
    for f in pond.findings:
        pair = (f.coordinate, f.smell)
        if pair in seen:
            problems.append(f"duplicate finding {f.smell.slug} on {f.coordinate.key}")
        seen.add(pair)
        if f.coordinate.ecosystem is not eco or not is_supported(f.smell, eco):
            problems.append(f"finding {f.smell.slug} on {f.coordinate.key} is not supported for {eco.value}")
        if f.coordinate not in pond.tree.nodes:
            problems.append(f"finding on {f.coordinate.key}, which is not in the tree")
        if f.ignored_reason is not None and not f.ignored_reason.strip():
            problems.append(f"finding {f.smell.slug} on {f.coordinate.key} is ignored without a justification")

    for m in pond.indeterminate:
        if (m.coordinate, m.smell) in seen:
            problems.append(f"{m.smell.slug} on {m.coordinate.key} is both a finding and indeterminate")
        if not is_supported(m.smell, eco):
            problems.append(f"indeterminate {m.smell.slug} on {m.coordinate.key} is not supported for {eco.value}")

    fact_coords = [f.coordinate for f in pond.facts]
    if len(fact_coords) != len(set(fact_coords)):
        problems.append("facts list a package more than once")
    for coord in fact_coords:
        if coord not in pond.tree.nodes:
            problems.append(f"facts for {coord.key}, which is not in the tree")

    if pond.summary != summarize(pond.findings, pond.tree, pond.indeterminate):
        problems.append("summary does not match the findings")
    return problems


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def dumps_pond(pond: DirtyPond) -> str:
    return json.dumps(pond.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def loads_pond(text: str, where: str = "<pond>") -> DirtyPond:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PondValidationError(where, [f"not JSON ({exc})"]) from exc
    if not isinstance(data, dict):
        raise PondValidationError(where, ["top level is not an object"])
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaMismatch(f"{where}: schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
    try:
        pond = DirtyPond.from_dict(data)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise PondValidationError(where, [f"malformed field ({type(exc).__name__}: {exc})"]) from exc
    problems = validate_pond(pond)
    if problems:
        raise PondValidationError(where, problems)
    return pond


def write_pond(pond: DirtyPond, path: Union[str, Path]) -> None:
    """Validate and write atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    problems = validate_pond(pond)
    if problems:
        raise PondValidationError(str(path), problems)
    text = dumps_pond(pond)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise PondIOError(f"cannot write pond {path}: {exc}") from exc


def read_pond(path: Union[str, Path]) -> DirtyPond:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise PondIOError(f"cannot read pond {path}: {exc}") from exc
    return loads_pond(text, str(path))
