"""
Smell detection: registry facts + repository facts + the dependency tree in,
findings out. No I/O.

Each of the nine smells is one predicate over the facts of a single package.
A predicate whose input facet failed to fetch yields an Indeterminate marker
instead of a finding, so a failed lookup is never reported as clean. Smells the
ecosystem does not support are never emitted, not even as Indeterminate.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from manifest_extractor import DependencyTree
from registry_client import (
    FACET_DEPRECATED,
    FACET_PROVENANCE,
    FACET_SIGNATURE,
    FACET_SOURCE_URL,
    ProvenanceStatus,
    RegistryFacts,
    SignatureStatus,
)
from repo_client import (
    FACET_FORK,
    FACET_RELEASE,
    FACET_REPOSITORY,
    Accessibility,
    RepoFacts,
    ResolutionKind,
    ShaStatus,
)
from smell_model import (
    PackageCoordinate,
    Severity,
    SmellId,
    default_severity,
    is_supported,
)


class Confidence(str, Enum):
    DEFINITE = "definite"
    HEURISTIC = "heuristic"


@dataclass(frozen=True)
class PackageFacts:
    coordinate: PackageCoordinate
    registry: RegistryFacts
    repo: Optional[RepoFacts] = None

    def __post_init__(self) -> None:
        if self.registry.coordinate != self.coordinate:
            raise ValueError(f"registry facts for {self.registry.coordinate.key} filed under {self.coordinate.key}")
        if self.repo is not None and self.repo.url != self.registry.source_url:
            raise ValueError(f"{self.coordinate.key}: repository facts need the normalized source URL")

    def to_dict(self) -> dict:
        return {
            "coordinate": self.coordinate.to_dict(),
            "registry": self.registry.to_dict(),
            "repo": self.repo.to_dict() if self.repo else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> PackageFacts:
        return cls(
            coordinate=PackageCoordinate.from_dict(d["coordinate"]),
            registry=RegistryFacts.from_dict(d["registry"]),
            repo=RepoFacts.from_dict(d["repo"]) if d["repo"] else None,
        )


@dataclass(frozen=True)
class SmellFinding:
    coordinate: PackageCoordinate
    smell: SmellId
    severity: Severity
    evidence: str
    confidence: Confidence = Confidence.DEFINITE
    ignored_reason: Optional[str] = None

    def sort_key(self) -> tuple:
        return (self.coordinate.sort_key(), int(self.smell))

    @property
    def ignored(self) -> bool:
        return self.ignored_reason is not None

    def to_dict(self) -> dict:
        return {
            "coordinate": self.coordinate.to_dict(),
            "smell": int(self.smell),
            "severity": self.severity.label,
            "evidence": self.evidence,
            "confidence": self.confidence.value,
            "ignored_reason": self.ignored_reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SmellFinding:
        return cls(
            coordinate=PackageCoordinate.from_dict(d["coordinate"]),
            smell=SmellId(d["smell"]),
            severity=Severity.parse(d["severity"]),
            evidence=d["evidence"],
            confidence=Confidence(d["confidence"]),
            ignored_reason=d["ignored_reason"],
        )


@dataclass(frozen=True)
class Indeterminate:
    coordinate: PackageCoordinate
    smell: SmellId
    reason: str

    def sort_key(self) -> tuple:
        return (self.coordinate.sort_key(), int(self.smell), self.reason)

    def to_dict(self) -> dict:
        return {"coordinate": self.coordinate.to_dict(), "smell": int(self.smell), "reason": self.reason}

    @classmethod
    def from_dict(cls, d: dict) -> Indeterminate:
        return cls(PackageCoordinate.from_dict(d["coordinate"]), SmellId(d["smell"]), d["reason"])


@dataclass(frozen=True)
class AnalysisNote:
    """Observation that is not a smell (unverified signature, reachable non-forge URL, ...)."""

    coordinate: PackageCoordinate
    smell: Optional[SmellId]
    message: str
    confidence: Confidence = Confidence.HEURISTIC

    def sort_key(self) -> tuple:
        return (self.coordinate.sort_key(), int(self.smell or 0), self.message)

    def to_dict(self) -> dict:
        return {
            "coordinate": self.coordinate.to_dict(),
            "smell": int(self.smell) if self.smell else None,
            "message": self.message,
            "confidence": self.confidence.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> AnalysisNote:
        return cls(
            coordinate=PackageCoordinate.from_dict(d["coordinate"]),
            smell=SmellId(d["smell"]) if d["smell"] else None,
            message=d["message"],
            confidence=Confidence(d["confidence"]),
        )


@dataclass(frozen=True)
class SeverityPolicy:
    overrides: dict[SmellId, Severity] = field(default_factory=dict)

    def severity_for(self, smell: SmellId) -> Severity:
        return self.overrides.get(smell, default_severity(smell))


@dataclass(frozen=True)
class Detection:
    findings: tuple[SmellFinding, ...] = ()
    indeterminate: tuple[Indeterminate, ...] = ()
    notes: tuple[AnalysisNote, ...] = ()


# ---------------------------------------------------------------------------
# detect
# ---------------------------------------------------------------------------

def _issue(facts_errors, facet: str) -> str:
    for issue in facts_errors:
        if issue.facet == facet:
            return f"{facet} lookup failed: {issue.message}"
    return f"{facet} lookup failed"


def detect(facts: PackageFacts, tree: DependencyTree, policy: SeverityPolicy = SeverityPolicy()) -> Detection:
    coord = facts.coordinate
    reg = facts.registry
    repo = facts.repo
    findings: list[SmellFinding] = []
    unknown: list[Indeterminate] = []
    notes: list[AnalysisNote] = []

    def emit(smell: SmellId, evidence: str, confidence: Confidence = Confidence.DEFINITE) -> None:
        if is_supported(smell, coord.ecosystem):
            findings.append(SmellFinding(coord, smell, policy.severity_for(smell), evidence, confidence))

    def undecided(smell: SmellId, reason: str) -> None:
        if is_supported(smell, coord.ecosystem):
            unknown.append(Indeterminate(coord, smell, reason))

    url_failed = reg.failed(FACET_SOURCE_URL)
    url_reason = _issue(reg.fetch_errors, FACET_SOURCE_URL)
    repo_failed = repo is not None and repo.failed(FACET_REPOSITORY)
    repo_reason = _issue(repo.fetch_errors, FACET_REPOSITORY) if repo is not None else ""
    accessible = repo is not None and repo.accessibility is Accessibility.ACCESSIBLE

    # 1. No source code URL
    if url_failed:
        undecided(SmellId.NO_SOURCE_CODE_URL, url_reason)
    elif reg.source_url is None:
        if reg.raw_source_url:
            emit(SmellId.NO_SOURCE_CODE_URL, f"repository URL {reg.raw_source_url!r} is not a usable URL")
        else:
            emit(SmellId.NO_SOURCE_CODE_URL, "repository URL: absent")

    # 2. Invalid source code URL
    if url_failed:
        undecided(SmellId.INVALID_SOURCE_CODE_URL, url_reason)
    elif reg.source_url is not None:
        if repo is None:
            undecided(SmellId.INVALID_SOURCE_CODE_URL, f"{reg.source_url} was not checked")
        elif repo_failed:
            undecided(SmellId.INVALID_SOURCE_CODE_URL, repo_reason)
        elif repo.accessibility in (Accessibility.NOT_FOUND, Accessibility.GONE):
            status = f"HTTP {repo.http_status}" if repo.http_status else repo.accessibility.value
            emit(SmellId.INVALID_SOURCE_CODE_URL, f"{repo.url} returned {status}")
        elif repo.accessibility is Accessibility.NON_REPO_HOST:
            if repo.probe_reachable:
                notes.append(AnalysisNote(
                    coord, SmellId.INVALID_SOURCE_CODE_URL,
                    f"{repo.url} answers (HTTP {repo.http_status}) but is not on a known repository host; "
                    "release tag and fork checks skipped",
                ))
            elif repo.probe_error:
                emit(
                    SmellId.INVALID_SOURCE_CODE_URL,
                    f"{repo.url} is not on a known repository host and could not be reached ({repo.probe_error})",
                    Confidence.HEURISTIC,
                )
            else:
                emit(
                    SmellId.INVALID_SOURCE_CODE_URL,
                    f"{repo.url} is not on a known repository host and returned HTTP {repo.http_status}",
                    Confidence.HEURISTIC,
                )

    # 3. Inaccessible commit SHA / release tag
    if url_failed:
        undecided(SmellId.INACCESSIBLE_TAG, url_reason)
    elif repo_failed:
        undecided(SmellId.INACCESSIBLE_TAG, repo_reason)
    elif accessible:
        resolution = repo.tag_resolution
        if repo.failed(FACET_RELEASE) or resolution is None:
            undecided(SmellId.INACCESSIBLE_TAG, _issue(repo.fetch_errors, FACET_RELEASE))
        elif resolution.kind is ResolutionKind.UNRESOLVED:
            tried = ", ".join(repo.checked_candidates) or "no candidates"
            sha = f"commit {reg.sha_hint} {resolution.sha_status.value}; " if reg.sha_hint else ""
            emit(SmellId.INACCESSIBLE_TAG, f"no release commit or tag for {coord.version} in {repo.url} ({sha}tags tried: {tried})")
        elif resolution.sha_status in (ShaStatus.MALFORMED, ShaStatus.NONEXISTENT):
            notes.append(AnalysisNote(
                coord, SmellId.INACCESSIBLE_TAG,
                f"release commit {reg.sha_hint} is {resolution.sha_status.value}; "
                f"resolved through tag {resolution.matched_ref}",
            ))

    # 4. Deprecated
    if reg.failed(FACET_DEPRECATED):
        undecided(SmellId.DEPRECATED, _issue(reg.fetch_errors, FACET_DEPRECATED))
    elif reg.deprecated:
        emit(SmellId.DEPRECATED, f"deprecated: {reg.deprecation_message or 'true'}")

    # 5. Fork
    if url_failed:
        undecided(SmellId.FORK, url_reason)
    elif repo_failed:
        undecided(SmellId.FORK, repo_reason)
    elif accessible:
        if repo.failed(FACET_FORK) or repo.is_fork is None:
            undecided(SmellId.FORK, _issue(repo.fetch_errors, FACET_FORK))
        elif repo.is_fork:
            emit(
                SmellId.FORK,
                f"{repo.url} is a fork of {repo.fork_parent or 'an unnamed upstream'}",
                Confidence.HEURISTIC,
            )

    # 6/7. Code signature
    if reg.failed(FACET_SIGNATURE):
        reason = _issue(reg.fetch_errors, FACET_SIGNATURE)
        undecided(SmellId.NO_CODE_SIGNATURE, reason)
        undecided(SmellId.INVALID_CODE_SIGNATURE, reason)
    elif reg.signature is SignatureStatus.MISSING:
        emit(SmellId.NO_CODE_SIGNATURE, f"signature: missing ({reg.signature_detail})")
    elif reg.signature is SignatureStatus.INVALID:
        emit(SmellId.INVALID_CODE_SIGNATURE, f"signature: invalid ({reg.signature_detail})")
    elif reg.signature is SignatureStatus.PRESENT:
        notes.append(AnalysisNote(coord, None, f"signature present but not verified: {reg.signature_detail}"))

    # 8. Aliased
    bindings = tree.aliases_targeting(coord)
    if bindings:
        emit(
            SmellId.ALIASED,
            "; ".join(f"installed as '{b.declared_name}' by {b.declared_in.display}" for b in bindings),
        )

    # 9. No provenance
    if reg.failed(FACET_PROVENANCE):
        undecided(SmellId.NO_PROVENANCE, _issue(reg.fetch_errors, FACET_PROVENANCE))
    elif reg.provenance is ProvenanceStatus.MISSING:
        emit(SmellId.NO_PROVENANCE, f"provenance: missing ({reg.provenance_detail})")

    return Detection(tuple(findings), tuple(unknown), tuple(notes))


# ---------------------------------------------------------------------------
# summarize
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmellSummary:
    per_smell: dict[SmellId, int]
    per_severity: dict[Severity, int]
    affected: dict[SmellId, tuple[PackageCoordinate, ...]]
    indeterminate_count: int
    total_packages: int
    ignored_count: int = 0

    __hash__ = None

    @property
    def total_findings(self) -> int:
        return sum(self.per_smell.values())

    @property
    def affected_packages(self) -> int:
        return len({c for coords in self.affected.values() for c in coords})

    def to_dict(self) -> dict:
        return {
            "per_smell": {str(int(s)): n for s, n in self.per_smell.items()},
            "per_severity": {sev.label: n for sev, n in self.per_severity.items()},
            "affected": {str(int(s)): [c.to_dict() for c in coords] for s, coords in self.affected.items()},
            "indeterminate_count": self.indeterminate_count,
            "total_packages": self.total_packages,
            "ignored_count": self.ignored_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SmellSummary:
        return cls(
            per_smell={SmellId(int(k)): v for k, v in d["per_smell"].items()},
            per_severity={Severity.parse(k): v for k, v in d["per_severity"].items()},
            affected={
                SmellId(int(k)): tuple(PackageCoordinate.from_dict(c) for c in coords)
                for k, coords in d["affected"].items()
            },
            indeterminate_count=d["indeterminate_count"],
            total_packages=d["total_packages"],
            ignored_count=d["ignored_count"],
        )


def summarize(
    findings: Iterable[SmellFinding],
    tree: DependencyTree,
    indeterminate: Iterable[Indeterminate] = (),
) -> SmellSummary:
    findings = list(findings)
    per_smell = Counter(f.smell for f in findings)
    per_severity = Counter(f.severity for f in findings)
    affected: dict[SmellId, set[PackageCoordinate]] = {s: set() for s in SmellId}
    for f in findings:
        affected[f.smell].add(f.coordinate)
    return SmellSummary(
        per_smell={s: per_smell.get(s, 0) for s in SmellId},
        per_severity={sev: per_severity.get(sev, 0) for sev in Severity},
        affected={s: tuple(sorted(coords, key=PackageCoordinate.sort_key)) for s, coords in affected.items()},
        indeterminate_count=len(list(indeterminate)),
        total_packages=len(tree.nodes),
        ignored_count=sum(1 for f in findings if f.ignored),
    )
