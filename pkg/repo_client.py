"""
Source repository checks for a normalized source URL.

  check_repo       does the repository exist and answer? Forge hosts are asked
                   through their API; any other host gets a plain HTTP probe and
                   is reported as NON_REPO_HOST with the probe outcome.
  check_fork       fork flag and upstream, from the same repository metadata.
  resolve_release  release commit (sha hint) first, then single-ref lookups of
                   tag candidates in TAG_PATTERNS order; the first hit wins.

A package costs at most 1 + len(candidates) (+1 for a sha hint) API calls, and
the FetchClient cache makes repeated lookups of the same repository free.
Hosts sit behind RepoHost so another forge can be added next to GitHubHost.
"""

from __future__ import annotations

import logging
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from string import Formatter
from typing import Optional
from urllib.parse import quote, urlparse

from registry_client import FetchIssue
from shared import FetchClient, FixtureKey, NetworkError
from smell_model import Ecosystem

logger = logging.getLogger(__name__)

GITHUB_API = "https://api.github.com"

# Release tag patterns, in lookup order. Placeholders: {version}, {name},
# {artifactId}. Candidates that are not valid git ref names (a Maven
# "group:artifact" name, say) are skipped.
TAG_PATTERNS: tuple[str, ...] = (
    "v{version}",
    "{version}",
    "{name}-{version}",
    "{name}@{version}",
    "release-{version}",
    "release/{version}",
    "r{version}",
)
MAVEN_TAG_PATTERNS: tuple[str, ...] = ("{artifactId}-{version}",)
TAG_PLACEHOLDERS = frozenset({"version", "name", "artifactId"})

FACET_REPOSITORY = "repository"
FACET_FORK = "fork"
FACET_RELEASE = "release"

_COMMIT_ID = re.compile(r"^[0-9a-fA-F]{7,40}$")
_BAD_REF_CHARS = re.compile(r"[\x00-\x20\x7f~^:?*\[\\]")


class Accessibility(str, Enum):
    ACCESSIBLE = "accessible"
    NOT_FOUND = "not_found"
    GONE = "gone"
    NON_REPO_HOST = "non_repo_host"


class ResolutionKind(str, Enum):
    RESOLVED_BY_SHA = "resolved_by_sha"
    RESOLVED_BY_TAG = "resolved_by_tag"
    UNRESOLVED = "unresolved"


class ShaStatus(str, Enum):
    ABSENT = "absent"
    MALFORMED = "malformed"
    NONEXISTENT = "nonexistent"
    FOUND = "found"


@dataclass(frozen=True)
class TagResolution:
    kind: ResolutionKind
    matched_pattern: Optional[str] = None
    matched_ref: Optional[str] = None
    sha_status: ShaStatus = ShaStatus.ABSENT

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "matched_pattern": self.matched_pattern,
            "matched_ref": self.matched_ref,
            "sha_status": self.sha_status.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> TagResolution:
        return cls(
            kind=ResolutionKind(d["kind"]),
            matched_pattern=d["matched_pattern"],
            matched_ref=d["matched_ref"],
            sha_status=ShaStatus(d["sha_status"]),
        )


@dataclass(frozen=True)
class RepoAccess:
    accessibility: Accessibility
    http_status: Optional[int] = None
    probe_reachable: Optional[bool] = None
    probe_error: Optional[str] = None


@dataclass(frozen=True)
class RepoFacts:
    url: str
    accessibility: Optional[Accessibility] = None  # None only when the check failed
    http_status: Optional[int] = None
    probe_reachable: Optional[bool] = None
    probe_error: Optional[str] = None  # transport failure of the web probe
    is_fork: Optional[bool] = None
    fork_parent: Optional[str] = None
    tag_resolution: Optional[TagResolution] = None
    checked_candidates: tuple[str, ...] = ()
    fetch_errors: tuple[FetchIssue, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "fetch_errors", tuple(sorted(set(self.fetch_errors))))
        object.__setattr__(self, "checked_candidates", tuple(self.checked_candidates))
        if self.accessibility is not Accessibility.ACCESSIBLE and (
            self.is_fork is not None or self.tag_resolution is not None
        ):
            raise ValueError(f"{self.url}: fork and release facts need an accessible repository")

    def failed(self, facet: str) -> bool:
        return any(issue.facet == facet for issue in self.fetch_errors)

    def to_dict(self) -> dict:
        return {
            "url": self.url,
            "accessibility": self.accessibility.value if self.accessibility else None,
            "http_status": self.http_status,
            "probe_reachable": self.probe_reachable,
            "probe_error": self.probe_error,
            "is_fork": self.is_fork,
            "fork_parent": self.fork_parent,
            "tag_resolution": self.tag_resolution.to_dict() if self.tag_resolution else None,
            "checked_candidates": list(self.checked_candidates),
            "fetch_errors": [{"facet": i.facet, "message": i.message} for i in self.fetch_errors],
        }

    @classmethod
    def from_dict(cls, d: dict) -> RepoFacts:
        return cls(
            url=d["url"],
            accessibility=Accessibility(d["accessibility"]) if d["accessibility"] else None,
            http_status=d["http_status"],
            probe_reachable=d["probe_reachable"],
            probe_error=d.get("probe_error"),
            is_fork=d["is_fork"],
            fork_parent=d["fork_parent"],
            tag_resolution=TagResolution.from_dict(d["tag_resolution"]) if d["tag_resolution"] else None,
            checked_candidates=tuple(d["checked_candidates"]),
            fetch_errors=tuple(FetchIssue(i["facet"], i["message"]) for i in d["fetch_errors"]),
        )


# ---------------------------------------------------------------------------
# Tag candidates
# ---------------------------------------------------------------------------

def is_valid_ref_name(ref: str) -> bool:
    """Subset of `git check-ref-format` rules that matter for tag names."""
    if not ref or ref == "@" or ref.startswith("/") or ref.endswith("/") or ref.endswith("."):
        return False
    if ".." in ref or "//" in ref or "@{" in ref or _BAD_REF_CHARS.search(ref):
        return False
    return all(part and not part.startswith(".") and not part.endswith(".lock") for part in ref.split("/"))


def pattern_placeholders(pattern: str) -> set[str]:
    return {field for _, field, _, _ in Formatter().parse(pattern) if field is not None}


def tag_candidates(
    version: str,
    name: str,
    ecosystem: Ecosystem,
    extra_patterns: tuple[str, ...] = (),
) -> list[tuple[str, str]]:
    """Ordered, de-duplicated (pattern, tag) pairs for one package version."""
    artifact = name.split(":", 1)[1] if ecosystem is Ecosystem.MAVEN else name.rsplit("/", 1)[-1]
    patterns = TAG_PATTERNS + (MAVEN_TAG_PATTERNS if ecosystem is Ecosystem.MAVEN else ()) + tuple(extra_patterns)
    seen: set[str] = set()
    candidates = []
    for pattern in patterns:
        try:
            tag = pattern.format(version=version, name=name, artifactId=artifact)
        except (KeyError, IndexError, ValueError):
            logger.warning(f"Ignoring tag pattern {pattern!r}: unknown placeholder")
            continue
        if tag in seen or not is_valid_ref_name(tag):
            continue
        seen.add(tag)
        candidates.append((pattern, tag))
    return candidates


# ---------------------------------------------------------------------------
# Hosts
# ---------------------------------------------------------------------------

class RepoHost(ABC):
    hosts: frozenset[str] = frozenset()

    def handles(self, url: str) -> bool:
        return (urlparse(url).hostname or "").lower() in self.hosts

    @abstractmethod
    def repository(self, url: str, client: FetchClient) -> tuple[RepoAccess, dict]:
        """Accessibility plus the host's repository metadata (empty unless accessible)."""

    @abstractmethod
    def commit_exists(self, url: str, sha: str, client: FetchClient) -> bool: ...

    @abstractmethod
    def tag_exists(self, url: str, tag: str, client: FetchClient) -> bool: ...

    @abstractmethod
    def fork_parent(self, metadata: dict) -> tuple[bool, Optional[str]]: ...


class GitHubHost(RepoHost):
    hosts = frozenset({"github.com"})

    @staticmethod
    def slug(url: str) -> Optional[str]:
        parts = [p for p in urlparse(url).path.split("/") if p]
        if len(parts) < 2:
            return None
        repo = parts[1][:-4] if parts[1].endswith(".git") else parts[1]
        return f"{parts[0]}/{repo}"

    def repository(self, url: str, client: FetchClient) -> tuple[RepoAccess, dict]:
        slug = self.slug(url)
        if slug is None:
            return RepoAccess(Accessibility.NOT_FOUND), {}
        resp = client.get(f"{GITHUB_API}/repos/{slug}", FixtureKey("github", slug, "-", "repo"))
        if resp.status == 200:
            meta = resp.json()
            if meta.get("disabled"):
                return RepoAccess(Accessibility.GONE, resp.status), {}
            return RepoAccess(Accessibility.ACCESSIBLE, resp.status), meta
        if resp.status == 404:
            return RepoAccess(Accessibility.NOT_FOUND, resp.status), {}
        if resp.status in (410, 451):
            return RepoAccess(Accessibility.GONE, resp.status), {}
        raise NetworkError(f"GitHub returned HTTP {resp.status} for {slug}")

    def commit_exists(self, url: str, sha: str, client: FetchClient) -> bool:
        slug = self.slug(url)
        resp = client.get(f"{GITHUB_API}/repos/{slug}/commits/{sha}", FixtureKey("github", slug, sha, "commit"))
        if resp.status == 200:
            return True
        if resp.status in (404, 422):
            return False
        raise NetworkError(f"GitHub returned HTTP {resp.status} for commit {sha} of {slug}")

    def tag_exists(self, url: str, tag: str, client: FetchClient) -> bool:
        slug = self.slug(url)
        ref_url = f"{GITHUB_API}/repos/{slug}/git/ref/tags/{quote(tag, safe='/@')}"
        resp = client.get(ref_url, FixtureKey("github", slug, tag, "tag"))
        if resp.status == 200:
            return True
        if resp.status == 404:
            return False
        raise NetworkError(f"GitHub returned HTTP {resp.status} for tag {tag} of {slug}")

    def fork_parent(self, metadata: dict) -> tuple[bool, Optional[str]]:
        if not metadata.get("fork"):
            return False, None
        parent = metadata.get("parent") or metadata.get("source") or {}
        return True, parent.get("html_url")


REPO_HOSTS: tuple[RepoHost, ...] = (GitHubHost(),)


def host_for(url: str, hosts: tuple[RepoHost, ...] = REPO_HOSTS) -> Optional[RepoHost]:
    return next((h for h in hosts if h.handles(url)), None)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def check_repo(url: str, client: FetchClient, hosts: tuple[RepoHost, ...] = REPO_HOSTS) -> RepoAccess:
    host = host_for(url, hosts)
    if host is not None:
        access, _ = host.repository(url, client)
        return access
    # Not a forge we can query: record whether the URL answers at all. A host
    # that cannot be reached is recorded on the facts, not as a failed lookup.
    try:
        resp = client.get(url, FixtureKey("web", url, "-", "probe"))
    except NetworkError as exc:
        return RepoAccess(Accessibility.NON_REPO_HOST, None, False, str(exc))
    return RepoAccess(Accessibility.NON_REPO_HOST, resp.status, resp.status < 400)


def _accessible_host(url: str, client: FetchClient, hosts: tuple[RepoHost, ...]) -> tuple[RepoHost, dict]:
    host = host_for(url, hosts)
    if host is None:
        raise ValueError(f"{url} is not on a supported repository host")
    access, meta = host.repository(url, client)
    if access.accessibility is not Accessibility.ACCESSIBLE:
        raise ValueError(f"{url} is {access.accessibility.value}; repository checks need an accessible repository")
    return host, meta


def check_fork(url: str, client: FetchClient, hosts: tuple[RepoHost, ...] = REPO_HOSTS) -> tuple[bool, Optional[str]]:
    host, meta = _accessible_host(url, client, hosts)
    return host.fork_parent(meta)


def resolve_release(
    url: str,
    version: str,
    sha_hint: Optional[str],
    client: FetchClient,
    *,
    name: str,
    ecosystem: Ecosystem,
    extra_patterns: tuple[str, ...] = (),
    hosts: tuple[RepoHost, ...] = REPO_HOSTS,
) -> tuple[TagResolution, tuple[str, ...]]:
    """Return the resolution and the tag candidates actually looked up, in order."""
    if not version:
        raise ValueError("version must be non-empty")
    host, _ = _accessible_host(url, client, hosts)

    sha_status = ShaStatus.ABSENT
    if sha_hint:
        if not _COMMIT_ID.match(sha_hint):
            sha_status = ShaStatus.MALFORMED
        elif host.commit_exists(url, sha_hint, client):
            return TagResolution(ResolutionKind.RESOLVED_BY_SHA, matched_ref=sha_hint, sha_status=ShaStatus.FOUND), ()
        else:
            sha_status = ShaStatus.NONEXISTENT

    checked: list[str] = []
    for pattern, tag in tag_candidates(version, name, ecosystem, extra_patterns):
        checked.append(tag)
        if host.tag_exists(url, tag, client):
            return TagResolution(ResolutionKind.RESOLVED_BY_TAG, pattern, tag, sha_status), tuple(checked)
    return TagResolution(ResolutionKind.UNRESOLVED, sha_status=sha_status), tuple(checked)


def fetch_repo_facts(
    url: str,
    version: str,
    sha_hint: Optional[str],
    client: FetchClient,
    *,
    name: str,
    ecosystem: Ecosystem,
    extra_patterns: tuple[str, ...] = (),
    hosts: tuple[RepoHost, ...] = REPO_HOSTS,
) -> RepoFacts:
    """All repository facets for one package; network failures land in fetch_errors."""
    try:
        access = check_repo(url, client, hosts)
    except NetworkError as exc:
        return RepoFacts(url=url, fetch_errors=(FetchIssue(FACET_REPOSITORY, str(exc)),))
    if access.accessibility is not Accessibility.ACCESSIBLE:
        return RepoFacts(
            url=url,
            accessibility=access.accessibility,
            http_status=access.http_status,
            probe_reachable=access.probe_reachable,
            probe_error=access.probe_error,
        )

    issues: list[FetchIssue] = []
    is_fork: Optional[bool] = None
    parent: Optional[str] = None
    try:
        is_fork, parent = check_fork(url, client, hosts)
    except NetworkError as exc:
        issues.append(FetchIssue(FACET_FORK, str(exc)))

    resolution: Optional[TagResolution] = None
    checked: tuple[str, ...] = ()
    try:
        resolution, checked = resolve_release(
            url, version, sha_hint, client,
            name=name, ecosystem=ecosystem, extra_patterns=extra_patterns, hosts=hosts,
        )
    except NetworkError as exc:
        issues.append(FetchIssue(FACET_RELEASE, str(exc)))

    return RepoFacts(
        url=url,
        accessibility=access.accessibility,
        http_status=access.http_status,
        is_fork=is_fork,
        fork_parent=parent,
        tag_resolution=resolution,
        checked_candidates=checked,
        fetch_errors=tuple(issues),
    )
