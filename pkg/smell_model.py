"""
Core vocabulary for supply chain smell analysis.

Everything the other modules agree on lives here: ecosystems, package
coordinates, the nine smells, the severity scale, which smells each ecosystem
can be checked for, and the per-smell guidance text that ends up in reports.

Default severities are not hand-picked. PRACTITIONER_RATINGS holds the raw
interview rating counts per smell, and each default is the most common actual
rating ("no rating" answers excluded). A tie goes to the higher severity, so a
4/4 Medium/High split defaults to High. Every default can be overridden per
project through the gate config (see ci_gate.py).
"""

from __future__ import annotations

import re
from datetime import datetime, timezone
from dataclasses import dataclass
from enum import Enum, IntEnum

TOOL_NAME = "smell-flow"
TOOL_VERSION = "1.0.0"


class SmellFlowError(Exception):
    """Base class for every error raised by the analyzer."""


# ---------------------------------------------------------------------------
# Ecosystems and coordinates
# ---------------------------------------------------------------------------

class Ecosystem(str, Enum):
    NPM = "npm"
    MAVEN = "maven"


# Range operators, wildcards and Maven version ranges. A resolved version has none.
_NOT_CONCRETE = re.compile(r"[\s^~<>=*|\[\](),]|(^|\.)[xX](\.|$)")


@dataclass(frozen=True, order=True)
class PackageCoordinate:
    """One exact package version. Maven names are "groupId:artifactId"."""

    ecosystem: Ecosystem
    name: str
    version: str

    def __post_init__(self) -> None:
        if not isinstance(self.ecosystem, Ecosystem):
            object.__setattr__(self, "ecosystem", Ecosystem(self.ecosystem))
        if not self.name:
            raise ValueError("package name must be non-empty")
        if self.ecosystem is Ecosystem.MAVEN:
            parts = self.name.split(":")
            if len(parts) != 2 or not all(parts):
                raise ValueError(f"maven name must be 'groupId:artifactId', got {self.name!r}")
        if not self.version or _NOT_CONCRETE.search(self.version):
            raise ValueError(f"{self.name}: version {self.version!r} is not a concrete resolved version")

    @property
    def key(self) -> str:
        return f"{self.ecosystem.value}:{self.name}@{self.version}"

    @property
    def display(self) -> str:
        return f"{self.name}@{self.version}"

    @property
    def group_id(self) -> str:
        return self.name.split(":", 1)[0] if self.ecosystem is Ecosystem.MAVEN else ""

    @property
    def artifact_id(self) -> str:
        if self.ecosystem is Ecosystem.MAVEN:
            return self.name.split(":", 1)[1]
        return self.name.rsplit("/", 1)[-1]

    def sort_key(self) -> tuple[str, str, str]:
        return (self.ecosystem.value, self.name, self.version)

    def to_dict(self) -> dict:
        return {"ecosystem": self.ecosystem.value, "name": self.name, "version": self.version}

    @classmethod
    def from_dict(cls, d: dict) -> PackageCoordinate:
        return cls(Ecosystem(d["ecosystem"]), d["name"], d["version"])


# ---------------------------------------------------------------------------
# Smells and severities
# ---------------------------------------------------------------------------

class SmellId(IntEnum):
    NO_SOURCE_CODE_URL = 1
    INVALID_SOURCE_CODE_URL = 2
    INACCESSIBLE_TAG = 3
    DEPRECATED = 4
    FORK = 5
    NO_CODE_SIGNATURE = 6
    INVALID_CODE_SIGNATURE = 7
    ALIASED = 8
    NO_PROVENANCE = 9

    @property
    def slug(self) -> str:
        return self.name.lower()

    @property
    def title(self) -> str:
        return SMELL_TITLES[self]

    @classmethod
    def parse(cls, value: str | int) -> SmellId:
        """Accept 5, "5", "fork", "FORK" or "Fork"."""
        if isinstance(value, int):
            return cls(value)
        text = str(value).strip()
        if text.isdigit():
            return cls(int(text))
        try:
            return cls[text.upper().replace("-", "_").replace(" ", "_")]
        except KeyError:
            raise ValueError(f"unknown smell {value!r}") from None


SMELL_TITLES: dict[SmellId, str] = {
    SmellId.NO_SOURCE_CODE_URL: "No Source Code URL",
    SmellId.INVALID_SOURCE_CODE_URL: "Invalid Source Code URL",
    SmellId.INACCESSIBLE_TAG: "Inaccessible Commit SHA/Release Tag",
    SmellId.DEPRECATED: "Deprecated",
    SmellId.FORK: "Fork",
    SmellId.NO_CODE_SIGNATURE: "No Code Signature",
    SmellId.INVALID_CODE_SIGNATURE: "Invalid Code Signature",
    SmellId.ALIASED: "Aliased",
    SmellId.NO_PROVENANCE: "No Provenance",
}


class Severity(IntEnum):
    LOW = 1
    MEDIUM = 2
    HIGH = 3
    CRITICAL = 4

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, value: str | Severity) -> Severity:
        """Accept "high", "High", "H" or a Severity."""
        if isinstance(value, Severity):
            return value
        text = str(value).strip().upper()
        for sev in cls:
            if text in (sev.name, sev.name[0]):
                return sev
        raise ValueError(f"unknown severity {value!r}")


class Support(str, Enum):
    SUPPORTED = "supported"
    UNSUPPORTED = "unsupported"


# Maven Central has no deprecation marker, no aliasing and no provenance files.
_MAVEN_UNSUPPORTED = frozenset({SmellId.DEPRECATED, SmellId.ALIASED, SmellId.NO_PROVENANCE})

SUPPORT_MATRIX: dict[tuple[SmellId, Ecosystem], Support] = {
    (smell, eco): (
        Support.UNSUPPORTED
        if eco is Ecosystem.MAVEN and smell in _MAVEN_UNSUPPORTED
        else Support.SUPPORTED
    )
    for smell in SmellId
    for eco in Ecosystem
}


def is_supported(smell: SmellId, eco: Ecosystem) -> bool:
    return SUPPORT_MATRIX[(smell, eco)] is Support.SUPPORTED


def supported_smells(eco: Ecosystem) -> list[SmellId]:
    return [s for s in SmellId if is_supported(s, eco)]


# Interview rating counts per smell (11 practitioners). "No rating" answers are
# kept in UNRATED_COUNTS and never take part in the default.
PRACTITIONER_RATINGS: dict[SmellId, dict[Severity, int]] = {
    SmellId.NO_SOURCE_CODE_URL:      {Severity.LOW: 1, Severity.MEDIUM: 2, Severity.HIGH: 5, Severity.CRITICAL: 3},
    SmellId.INVALID_SOURCE_CODE_URL: {Severity.LOW: 1, Severity.MEDIUM: 3, Severity.HIGH: 3, Severity.CRITICAL: 4},
    SmellId.INACCESSIBLE_TAG:        {Severity.LOW: 1, Severity.MEDIUM: 3, Severity.HIGH: 5, Severity.CRITICAL: 2},
    SmellId.DEPRECATED:              {Severity.LOW: 1, Severity.MEDIUM: 4, Severity.HIGH: 4, Severity.CRITICAL: 2},
    SmellId.FORK:                    {Severity.LOW: 3, Severity.MEDIUM: 7, Severity.HIGH: 1, Severity.CRITICAL: 0},
    SmellId.NO_CODE_SIGNATURE:       {Severity.LOW: 2, Severity.MEDIUM: 2, Severity.HIGH: 4, Severity.CRITICAL: 2},
    SmellId.INVALID_CODE_SIGNATURE:  {Severity.LOW: 1, Severity.MEDIUM: 0, Severity.HIGH: 1, Severity.CRITICAL: 8},
    SmellId.ALIASED:                 {Severity.LOW: 3, Severity.MEDIUM: 2, Severity.HIGH: 1, Severity.CRITICAL: 0},
    SmellId.NO_PROVENANCE:           {Severity.LOW: 7, Severity.MEDIUM: 2, Severity.HIGH: 1, Severity.CRITICAL: 0},
}

UNRATED_COUNTS: dict[SmellId, int] = {
    SmellId.NO_SOURCE_CODE_URL: 0,
    SmellId.INVALID_SOURCE_CODE_URL: 0,
    SmellId.INACCESSIBLE_TAG: 0,
    SmellId.DEPRECATED: 0,
    SmellId.FORK: 0,
    SmellId.NO_CODE_SIGNATURE: 1,
    SmellId.INVALID_CODE_SIGNATURE: 1,
    SmellId.ALIASED: 5,
    SmellId.NO_PROVENANCE: 1,
}


def modal_severity(counts: dict[Severity, int]) -> Severity:
    """Most common rating; ties resolve to the higher severity."""
    return max(counts, key=lambda sev: (counts[sev], sev))


DEFAULT_SEVERITIES: dict[SmellId, Severity] = {
    smell: modal_severity(counts) for smell, counts in PRACTITIONER_RATINGS.items()
}


def default_severity(smell: SmellId) -> Severity:
    return DEFAULT_SEVERITIES[smell]


# ---------------------------------------------------------------------------
# Report metadata: where each fact comes from, why it matters, what to do
# ---------------------------------------------------------------------------

INFORMATION_SOURCE: dict[SmellId, str] = {
    SmellId.NO_SOURCE_CODE_URL: "package registry",
    SmellId.INVALID_SOURCE_CODE_URL: "package registry + source repository",
    SmellId.INACCESSIBLE_TAG: "source repository",
    SmellId.DEPRECATED: "package registry",
    SmellId.FORK: "source repository",
    SmellId.NO_CODE_SIGNATURE: "package registry",
    SmellId.INVALID_CODE_SIGNATURE: "package registry",
    SmellId.ALIASED: "dependency list",
    SmellId.NO_PROVENANCE: "package registry",
}

ATTACK_VECTORS: dict[SmellId, tuple[str, ...]] = {
    SmellId.NO_SOURCE_CODE_URL: (
        "distribute a malicious version of a legitimate package",
        "develop and advertise a distinct malicious package",
    ),
    SmellId.INVALID_SOURCE_CODE_URL: (
        "distribute a malicious version of a legitimate package",
        "develop and advertise a distinct malicious package",
    ),
    SmellId.INACCESSIBLE_TAG: ("inject into the sources of a legitimate package",),
    SmellId.DEPRECATED: ("exploit known vulnerabilities in unmaintained code",),
    SmellId.FORK: ("inject into the sources of a legitimate package",),
    SmellId.NO_CODE_SIGNATURE: ("distribute a malicious version of a legitimate package",),
    SmellId.INVALID_CODE_SIGNATURE: ("distribute a malicious version of a legitimate package",),
    SmellId.ALIASED: ("redirect a dependency to an attacker-controlled package",),
    SmellId.NO_PROVENANCE: (
        "distribute a malicious version of a legitimate package",
        "compromise the build system",
    ),
}

SMELL_CONTEXT: dict[SmellId, str] = {
    SmellId.NO_SOURCE_CODE_URL: (
        "The registry metadata names no source repository, so nobody can compare the "
        "published artifact against its code. Mismatches between a release and its "
        "repository are one of the few early signals of a hijacked package."
    ),
    SmellId.INVALID_SOURCE_CODE_URL: (
        "The registry points at a repository that no longer answers. The package looks "
        "transparent but its code cannot be inspected, whether the link went stale "
        "after a move or was never real."
    ),
    SmellId.INACCESSIBLE_TAG: (
        "The repository exists but neither the release commit nor a release tag for this "
        "version could be found. Without them the exact source of the installed version is "
        "unknown and the build cannot be reproduced."
    ),
    SmellId.DEPRECATED: (
        "The maintainers have marked this version as deprecated. Deprecated packages "
        "stop receiving fixes, and their abandoned infrastructure can be taken over."
    ),
    SmellId.FORK: (
        "The linked repository is a fork of another project. Forks are often legitimate, "
        "but they are also an easy way to ship modified code under a trusted-looking name."
    ),
    SmellId.NO_CODE_SIGNATURE: (
        "This release carries no cryptographic signature, so its origin and integrity "
        "cannot be checked after it leaves the publisher."
    ),
    SmellId.INVALID_CODE_SIGNATURE: (
        "A signature exists but does not verify against the published artifact. The "
        "artifact may have been modified after signing, or signed with the wrong key."
    ),
    SmellId.ALIASED: (
        "This package is installed under a different name than its own. Aliases hide "
        "which package is really resolved and can quietly redirect a dependency."
    ),
    SmellId.NO_PROVENANCE: (
        "No build attestation is published for this version, so there is no signed "
        "record of which source revision and which build pipeline produced it."
    ),
}

_CTA_METADATA = (
    "Submit a pull request to the dependency's maintainers with correct repository "
    "metadata and proper release tagging."
)

CALL_TO_ACTION: dict[SmellId, str] = {
    SmellId.NO_SOURCE_CODE_URL: _CTA_METADATA,
    SmellId.INVALID_SOURCE_CODE_URL: _CTA_METADATA,
    SmellId.INACCESSIBLE_TAG: _CTA_METADATA,
    SmellId.DEPRECATED: (
        "Confirm with the maintainers that the deprecation is intended, and double-check "
        "for alternative versions or replacement packages that are not deprecated."
    ),
    SmellId.FORK: (
        "Manual inspection needed: review the package and its repository to verify that "
        "the fork is not malicious and that its divergence from upstream is explained."
    ),
    SmellId.NO_CODE_SIGNATURE: (
        "Open an issue in the dependency's repository to request that releases are signed "
        "in its CI/CD pipeline."
    ),
    SmellId.INVALID_CODE_SIGNATURE: (
        "Verify the signature yourself, contact the maintainers, and open an issue "
        "requesting that the signing step in their CI/CD pipeline is fixed."
    ),
    SmellId.ALIASED: (
        "Manual inspection needed: check the aliased package and its repository to verify "
        "that the alias is intended and not malicious."
    ),
    SmellId.NO_PROVENANCE: (
        "Open an issue in the dependency's repository to request provenance and build "
        "attestations from its CI/CD pipeline."
    ),
}


def call_to_action(smell: SmellId) -> str:
    return CALL_TO_ACTION[smell]


# ---------------------------------------------------------------------------
# Timestamps: UTC, second precision, RFC 3339 text
# ---------------------------------------------------------------------------

def to_utc_second(dt: datetime) -> datetime:
    if dt.tzinfo is None:
        raise ValueError("timestamps must be timezone-aware")
    return dt.astimezone(timezone.utc).replace(microsecond=0)


def utc_now() -> datetime:
    return to_utc_second(datetime.now(timezone.utc))


def format_timestamp(dt: datetime) -> str:
    return to_utc_second(dt).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    return to_utc_second(datetime.fromisoformat(text.replace("Z", "+00:00")))
