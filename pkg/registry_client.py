"""
Registry metadata for one package version.

NPM (registry.npmjs.org, version document /<name>/<version>):
  source_url     repository field (string or {url, directory}), normalized
  deprecated     non-empty "deprecated" message
  signature      dist.signatures verified with the registry's ECDSA P-256 keys
                 from /-/npm/v1/keys; the signed message is
                 "<name>@<version>:<dist.integrity>"
  provenance     dist.attestations present and the attestations endpoint
                 returns a SLSA provenance predicate
  sha_hint       gitHead

Maven (repo1.maven.org, <artifact>-<version>.pom):
  source_url     <scm><url>, then <connection>, then <developerConnection>;
                 inherited through at most MAX_PARENT_DEPTH parent POMs
  signature      detached <artifact>-<version>.pom.asc verified with PGPy against
                 a local keyring directory, then the configured keyservers
  sha_hint       <scm><tag> when it looks like a commit id
  deprecated and provenance are never populated (no registry support).

Failures of the primary document (version manifest / POM) raise NetworkError or
RateLimited; a 404 there yields facts with every facet in fetch_errors. Failures
of secondary requests degrade only the facet they feed. FixtureMissing always
propagates.
"""

from __future__ import annotations

import base64
import binascii
import logging
import re
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import quote, urlparse

import pgpy
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec

from shared import FetchClient, FixtureKey, NetworkError
from smell_model import (
    Ecosystem,
    PackageCoordinate,
    format_timestamp,
    parse_timestamp,
    to_utc_second,
    utc_now,
)

logger = logging.getLogger(__name__)

NPM_REGISTRY = "https://registry.npmjs.org"
NPM_KEYS_URL = f"{NPM_REGISTRY}/-/npm/v1/keys"
MAVEN_CENTRAL = "https://repo1.maven.org/maven2"
DEFAULT_KEYSERVERS = ("https://keyserver.ubuntu.com", "https://keys.openpgp.org")
MAX_PARENT_DEPTH = 10
SLSA_PROVENANCE = "slsa.dev/provenance"

FACET_SOURCE_URL = "source_url"
FACET_DEPRECATED = "deprecated"
FACET_SIGNATURE = "signature"
FACET_PROVENANCE = "provenance"
NPM_FACETS = (FACET_SOURCE_URL, FACET_DEPRECATED, FACET_SIGNATURE, FACET_PROVENANCE)
MAVEN_FACETS = (FACET_SOURCE_URL, FACET_SIGNATURE)

_COMMIT_ID = re.compile(r"^[0-9a-fA-F]{7,40}$")


class SignatureStatus(str, Enum):
    MISSING = "missing"
    PRESENT = "present"            # found, not verifiable (key unavailable)
    VERIFIED_VALID = "verified_valid"
    INVALID = "invalid"


class ProvenanceStatus(str, Enum):
    MISSING = "missing"
    PRESENT = "present"


@dataclass(frozen=True, order=True)
class FetchIssue:
    facet: str
    message: str


@dataclass(frozen=True)
class RegistryFacts:
    coordinate: PackageCoordinate
    fetched_at: datetime
    source_url: Optional[str] = None
    raw_source_url: Optional[str] = None
    deprecated: Optional[bool] = None
    deprecation_message: Optional[str] = None
    signature: Optional[SignatureStatus] = None
    signature_detail: str = ""
    provenance: Optional[ProvenanceStatus] = None
    provenance_detail: str = ""
    sha_hint: Optional[str] = None
    fetch_errors: tuple[FetchIssue, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "fetched_at", to_utc_second(self.fetched_at))
        object.__setattr__(self, "fetch_errors", tuple(sorted(set(self.fetch_errors))))
        if self.coordinate.ecosystem is Ecosystem.MAVEN and (
            self.deprecated is not None or self.provenance is not None
        ):
            raise ValueError(f"{self.coordinate.key}: maven facts carry no deprecation or provenance")

    def failed(self, facet: str) -> bool:
        return any(issue.facet == facet for issue in self.fetch_errors)

    @classmethod
    def unavailable(cls, coord: PackageCoordinate, reason: str, fetched_at: datetime) -> RegistryFacts:
        facets = NPM_FACETS if coord.ecosystem is Ecosystem.NPM else MAVEN_FACETS
        return cls(
            coordinate=coord,
            fetched_at=fetched_at,
            fetch_errors=tuple(FetchIssue(f, reason) for f in facets),
        )

    def to_dict(self) -> dict:
        return {
            "coordinate": self.coordinate.to_dict(),
            "fetched_at": format_timestamp(self.fetched_at),
            "source_url": self.source_url,
            "raw_source_url": self.raw_source_url,
            "deprecated": self.deprecated,
            "deprecation_message": self.deprecation_message,
            "signature": self.signature.value if self.signature else None,
            "signature_detail": self.signature_detail,
            "provenance": self.provenance.value if self.provenance else None,
            "provenance_detail": self.provenance_detail,
            "sha_hint": self.sha_hint,
            "fetch_errors": [{"facet": i.facet, "message": i.message} for i in self.fetch_errors],
        }

    @classmethod
    def from_dict(cls, d: dict) -> RegistryFacts:
        return cls(
            coordinate=PackageCoordinate.from_dict(d["coordinate"]),
            fetched_at=parse_timestamp(d["fetched_at"]),
            source_url=d["source_url"],
            raw_source_url=d["raw_source_url"],
            deprecated=d["deprecated"],
            deprecation_message=d["deprecation_message"],
            signature=SignatureStatus(d["signature"]) if d["signature"] else None,
            signature_detail=d["signature_detail"],
            provenance=ProvenanceStatus(d["provenance"]) if d["provenance"] else None,
            provenance_detail=d["provenance_detail"],
            sha_hint=d["sha_hint"],
            fetch_errors=tuple(FetchIssue(i["facet"], i["message"]) for i in d["fetch_errors"]),
        )


# ---------------------------------------------------------------------------
# Source URL normalization
# ---------------------------------------------------------------------------

FORGE_HOSTS = frozenset({"github.com", "gitlab.com", "bitbucket.org"})
_SHORTHAND_HOSTS = {"github": "github.com", "gitlab": "gitlab.com", "bitbucket": "bitbucket.org"}
_SHORTHAND = re.compile(r"^(github|gitlab|bitbucket):([\w.-]+/[\w.-]+?)(?:\.git)?/?$")
_BARE_SHORTHAND = re.compile(r"^([\w-][\w.-]*)/([\w.-]+?)(?:\.git)?/?$")
_SCP_LIKE = re.compile(r"^(?:[\w.-]+@)?([\w-]+(?:\.[\w-]+)+):(?!\d+/)/?(.+)$")
_SCM_PREFIX = re.compile(r"^scm:[a-z0-9]+:", re.IGNORECASE)
_URL_SCHEMES = ("https", "http", "git", "ssh", "git+ssh")


def normalize_source_url(raw: Optional[str]) -> Optional[str]:
    """Canonical https repository URL for a registry/SCM repository value, or None."""
    if not isinstance(raw, str):
        return None
    value = raw.strip()
    if not value or any(ch.isspace() for ch in value):
        return None
    value = _SCM_PREFIX.sub("", value)
    if value.startswith("git+"):
        value = value[4:]

    if m := _SHORTHAND.match(value):
        value = f"https://{_SHORTHAND_HOSTS[m[1]]}/{m[2]}"
    elif value.startswith("gist:"):
        value = f"https://gist.github.com/{value[5:]}"
    elif "://" not in value and (m := _BARE_SHORTHAND.match(value)) and "." not in m[1]:
        value = f"https://github.com/{m[1]}/{m[2]}"
    elif "://" not in value and (m := _SCP_LIKE.match(value)):
        value = f"https://{m[1]}/{m[2]}"

    parsed = urlparse(value)
    if parsed.scheme.lower() not in _URL_SCHEMES:
        return None
    try:
        host = (parsed.hostname or "").lower()
    except ValueError:
        return None
    if "." not in host:
        return None
    if host.startswith("www.") and host[4:] in FORGE_HOSTS:
        host = host[4:]
    path = parsed.path.rstrip("/")
    if path.endswith(".git"):
        path = path[:-4].rstrip("/")
    if host in FORGE_HOSTS and len([s for s in path.split("/") if s]) < 2:
        return None
    return f"https://{host}{path}"


# ---------------------------------------------------------------------------
# PGP keyring
# ---------------------------------------------------------------------------

class Keyring:
    """
    Public keys for Maven signature checks, by 16-hex key id.

    Keys are taken from `directory/*.asc` first, then looked up on each keyserver
    in order (HKP machine-readable endpoint). A key that nobody serves returns
    None, which the caller reports as an unverified signature.
    """

    def __init__(
        self,
        client: FetchClient,
        keyservers: tuple[str, ...] = DEFAULT_KEYSERVERS,
        directory: Optional[Path] = None,
    ):
        self.client = client
        self.keyservers = tuple(keyservers)
        self._keys: dict[str, pgpy.PGPKey] = {}
        self._lock = threading.Lock()
        if directory is not None:
            for path in sorted(Path(directory).glob("*.asc")):
                try:
                    key, _ = pgpy.PGPKey.from_file(str(path))
                except Exception as exc:
                    logger.warning(f"Skipping unreadable key file {path}: {exc}")
                    continue
                self._add(key)

    def _add(self, key: pgpy.PGPKey) -> None:
        with self._lock:
            self._keys[key.fingerprint.keyid.upper()] = key
            for subkey_id in key.subkeys:
                self._keys[str(subkey_id).upper()] = key

    def lookup(self, keyid: str) -> Optional[pgpy.PGPKey]:
        keyid = keyid.upper()
        with self._lock:
            if keyid in self._keys:
                return self._keys[keyid]
        for server in self.keyservers:
            host = urlparse(server).netloc
            url = f"{server.rstrip('/')}/pks/lookup?op=get&options=mr&search=0x{keyid}"
            try:
                resp = self.client.get(url, FixtureKey("pgp", keyid, host, "key"))
            except NetworkError as exc:
                logger.info(f"Keyserver {host} unavailable for {keyid}: {exc}")
                continue
            if not resp.ok:
                continue
            try:
                key, _ = pgpy.PGPKey.from_blob(resp.text)
            except Exception as exc:
                logger.info(f"Keyserver {host} returned an unreadable key for {keyid}: {exc}")
                continue
            self._add(key)
            with self._lock:
                if keyid in self._keys:
                    return self._keys[keyid]
        return None


def verify_detached_signature(
    data: bytes, armored_signature: str, keyring: Optional[Keyring]
) -> tuple[SignatureStatus, str]:
    """Check a detached OpenPGP signature over `data`."""
    try:
        signature = pgpy.PGPSignature.from_blob(armored_signature)
    except Exception as exc:
        return SignatureStatus.INVALID, f"signature file is not a readable OpenPGP signature ({exc})"
    keyid = str(signature.signer).upper()
    key = keyring.lookup(keyid) if keyring is not None else None
    if key is None:
        return SignatureStatus.PRESENT, f"signed by key {keyid}; key not available"
    try:
        verified = bool(key.verify(data, signature))
    except Exception as exc:
        return SignatureStatus.INVALID, f"verification with key {keyid} failed ({exc})"
    if verified:
        return SignatureStatus.VERIFIED_VALID, f"signature by key {keyid} verified"
    return SignatureStatus.INVALID, f"signature by key {keyid} does not match the artifact"


# ---------------------------------------------------------------------------
# NPM
# ---------------------------------------------------------------------------

def npm_manifest_url(coord: PackageCoordinate) -> str:
    return f"{NPM_REGISTRY}/{quote(coord.name, safe='@')}/{quote(coord.version, safe='')}"


def _npm_registry_keys(client: FetchClient) -> tuple[dict[str, dict], Optional[str]]:
    """Registry signing keys by keyid, or ({}, reason) when they cannot be fetched."""
    try:
        resp = client.get(NPM_KEYS_URL, FixtureKey("npm", "-", "-", "keys"))
    except NetworkError as exc:
        return {}, f"registry keys unavailable ({exc})"
    if not resp.ok:
        return {}, f"registry keys unavailable (HTTP {resp.status})"
    try:
        keys = resp.json().get("keys") or []
    except ValueError:
        return {}, "registry keys response is not JSON"
    return {k["keyid"]: k for k in keys if isinstance(k, dict) and "keyid" in k}, None


def verify_npm_signatures(
    coord: PackageCoordinate, integrity: Optional[str], signatures: list[dict], keys: dict[str, dict]
) -> tuple[SignatureStatus, str]:
    keyids = ", ".join(sorted(str(s.get("keyid")) for s in signatures))
    if not integrity:
        return SignatureStatus.PRESENT, f"registry signature by {keyids}; no dist.integrity to check"
    message = f"{coord.name}@{coord.version}:{integrity}".encode("utf-8")
    checked = []
    for sig in signatures:
        key = keys.get(sig.get("keyid"))
        if key is None:
            continue
        checked.append(sig.get("keyid"))
        try:
            public_key = serialization.load_der_public_key(base64.b64decode(key["key"]))
            public_key.verify(base64.b64decode(sig["sig"]), message, ec.ECDSA(hashes.SHA256()))
        except (InvalidSignature, ValueError, TypeError, KeyError, binascii.Error):
            continue
        return SignatureStatus.VERIFIED_VALID, f"registry signature by {sig['keyid']} verified"
    if checked:
        return SignatureStatus.INVALID, f"registry signature by {', '.join(checked)} does not verify"
    return SignatureStatus.PRESENT, f"registry signature by {keyids}; signing key not published"


def _npm_provenance(
    coord: PackageCoordinate, dist: dict, client: FetchClient
) -> tuple[Optional[ProvenanceStatus], str, Optional[FetchIssue]]:
    attestations = dist.get("attestations")
    if not isinstance(attestations, dict):
        return ProvenanceStatus.MISSING, "no build attestation published", None
    url = attestations.get("url") or f"{NPM_REGISTRY}/-/npm/v1/attestations/{coord.name}@{coord.version}"
    try:
        resp = client.get(url, FixtureKey("npm", coord.name, coord.version, "attestations"))
    except NetworkError as exc:
        return None, "", FetchIssue(FACET_PROVENANCE, str(exc))
    if resp.status == 404:
        return ProvenanceStatus.MISSING, f"attestations listed but {url} returned 404", None
    if not resp.ok:
        return None, "", FetchIssue(FACET_PROVENANCE, f"attestations endpoint returned HTTP {resp.status}")
    try:
        entries = resp.json().get("attestations") or []
    except ValueError:
        return None, "", FetchIssue(FACET_PROVENANCE, "attestations response is not JSON")
    predicates = sorted({str(e.get("predicateType", "")) for e in entries if isinstance(e, dict)})
    if any(SLSA_PROVENANCE in p for p in predicates):
        return ProvenanceStatus.PRESENT, "provenance attestation: " + ", ".join(predicates), None
    return ProvenanceStatus.MISSING, "attestations carry no provenance predicate", None


def _npm_repository_value(manifest: dict) -> Optional[str]:
    repo = manifest.get("repository")
    if isinstance(repo, dict):
        repo = repo.get("url")
    return repo if isinstance(repo, str) and repo.strip() else None


def _fetch_npm(coord: PackageCoordinate, client: FetchClient, fetched_at: datetime) -> RegistryFacts:
    resp = client.get(npm_manifest_url(coord), FixtureKey("npm", coord.name, coord.version, "manifest"))
    if not resp.ok:
        if resp.status >= 500 or resp.status == 429:
            raise NetworkError(f"registry returned HTTP {resp.status} for {coord.display}")
        return RegistryFacts.unavailable(coord, f"registry returned HTTP {resp.status}", fetched_at)
    try:
        manifest = resp.json()
        if not isinstance(manifest, dict):
            raise ValueError("not an object")
    except ValueError as exc:
        return RegistryFacts.unavailable(coord, f"registry manifest unreadable ({exc})", fetched_at)

    issues: list[FetchIssue] = []
    raw_url = _npm_repository_value(manifest)
    deprecation = manifest.get("deprecated")
    deprecated = isinstance(deprecation, str) and bool(deprecation.strip()) or deprecation is True
    git_head = manifest.get("gitHead")

    dist = manifest.get("dist") if isinstance(manifest.get("dist"), dict) else {}
    signatures = [s for s in dist.get("signatures") or [] if isinstance(s, dict)]
    if not signatures:
        signature, signature_detail = SignatureStatus.MISSING, "no registry signature in dist.signatures"
    else:
        keys, reason = _npm_registry_keys(client)
        if reason:
            signature, signature_detail = SignatureStatus.PRESENT, reason
        else:
            signature, signature_detail = verify_npm_signatures(coord, dist.get("integrity"), signatures, keys)

    provenance, provenance_detail, issue = _npm_provenance(coord, dist, client)
    if issue:
        issues.append(issue)

    return RegistryFacts(
        coordinate=coord,
        fetched_at=fetched_at,
        source_url=normalize_source_url(raw_url),
        raw_source_url=raw_url,
        deprecated=deprecated,
        deprecation_message=deprecation.strip() if deprecated and isinstance(deprecation, str) else None,
        signature=signature,
        signature_detail=signature_detail,
        provenance=provenance,
        provenance_detail=provenance_detail,
        sha_hint=git_head if isinstance(git_head, str) and _COMMIT_ID.match(git_head) else None,
        fetch_errors=tuple(issues),
    )


# ---------------------------------------------------------------------------
# Maven
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Pom:
    scm_url: Optional[str]
    scm_tag: Optional[str]
    parent: Optional[tuple[str, str, str]]


def maven_pom_url(group: str, artifact: str, version: str) -> str:
    return f"{MAVEN_CENTRAL}/{group.replace('.', '/')}/{artifact}/{version}/{artifact}-{version}.pom"


def _parse_pom(body: bytes) -> _Pom:
    root = ET.fromstring(body)
    for el in root.iter():
        if isinstance(el.tag, str) and "}" in el.tag:
            el.tag = el.tag.split("}", 1)[1]

    def text(path: str) -> Optional[str]:
        value = root.findtext(path)
        return value.strip() if value and value.strip() else None

    parent = None
    if root.find("parent") is not None:
        pg, pa, pv = text("parent/groupId"), text("parent/artifactId"), text("parent/version")
        if pg and pa and pv:
            parent = (pg, pa, pv)

    props = {el.tag: (el.text or "").strip() for el in root.findall("properties/*")}
    group = text("groupId") or (parent[0] if parent else "")
    version = text("version") or (parent[2] if parent else "")
    artifact = text("artifactId") or ""
    props.update({
        "project.groupId": group, "groupId": group, "pom.groupId": group,
        "project.artifactId": artifact, "artifactId": artifact, "pom.artifactId": artifact,
        "project.version": version, "version": version, "pom.version": version,
    })

    def interpolate(value: Optional[str]) -> Optional[str]:
        if value is None:
            return None
        return re.sub(r"\$\{([^}]+)\}", lambda m: props.get(m.group(1), m.group(0)), value)

    scm_url = None
    for path in ("scm/url", "scm/connection", "scm/developerConnection"):
        if text(path):
            scm_url = interpolate(text(path))
            break
    return _Pom(scm_url=scm_url, scm_tag=interpolate(text("scm/tag")), parent=parent)


def _maven_scm(
    coord: PackageCoordinate, pom: _Pom, client: FetchClient
) -> tuple[Optional[str], Optional[FetchIssue]]:
    """SCM URL of the artifact, inherited from parents when absent."""
    current = pom
    depth = 0
    while current.scm_url is None and current.parent is not None:
        depth += 1
        if depth > MAX_PARENT_DEPTH:
            logger.info(f"{coord.display}: no SCM entry within {MAX_PARENT_DEPTH} parent POMs")
            return None, None
        g, a, v = current.parent
        try:
            resp = client.get(maven_pom_url(g, a, v), FixtureKey("maven", f"{g}:{a}", v, "pom"))
        except NetworkError as exc:
            return None, FetchIssue(FACET_SOURCE_URL, f"parent POM {g}:{a}:{v}: {exc}")
        if not resp.ok:
            return None, FetchIssue(FACET_SOURCE_URL, f"parent POM {g}:{a}:{v} returned HTTP {resp.status}")
        try:
            current = _parse_pom(resp.body)
        except ET.ParseError as exc:
            return None, FetchIssue(FACET_SOURCE_URL, f"parent POM {g}:{a}:{v} unreadable ({exc})")
    return current.scm_url, None


def _fetch_maven(
    coord: PackageCoordinate, client: FetchClient, keyring: Optional[Keyring], fetched_at: datetime
) -> RegistryFacts:
    pom_url = maven_pom_url(coord.group_id, coord.artifact_id, coord.version)
    resp = client.get(pom_url, FixtureKey("maven", coord.name, coord.version, "pom"))
    if not resp.ok:
        if resp.status >= 500 or resp.status == 429:
            raise NetworkError(f"Maven Central returned HTTP {resp.status} for {coord.display}")
        return RegistryFacts.unavailable(coord, f"artifact descriptor returned HTTP {resp.status}", fetched_at)

    issues: list[FetchIssue] = []
    raw_url: Optional[str] = None
    sha_hint: Optional[str] = None
    try:
        pom = _parse_pom(resp.body)
    except ET.ParseError as exc:
        issues.append(FetchIssue(FACET_SOURCE_URL, f"artifact descriptor unreadable ({exc})"))
    else:
        raw_url, issue = _maven_scm(coord, pom, client)
        if issue:
            issues.append(issue)
        if pom.scm_tag and _COMMIT_ID.match(pom.scm_tag):
            sha_hint = pom.scm_tag

    signature: Optional[SignatureStatus] = None
    signature_detail = ""
    asc_url = pom_url + ".asc"
    try:
        asc = client.get(asc_url, FixtureKey("maven", coord.name, coord.version, "signature"))
    except NetworkError as exc:
        issues.append(FetchIssue(FACET_SIGNATURE, str(exc)))
    else:
        if asc.status == 404:
            signature, signature_detail = SignatureStatus.MISSING, f"no detached signature at {asc_url}"
        elif not asc.ok:
            issues.append(FetchIssue(FACET_SIGNATURE, f"{asc_url} returned HTTP {asc.status}"))
        else:
            signature, signature_detail = verify_detached_signature(resp.body, asc.text, keyring)

    source_url = normalize_source_url(raw_url) if raw_url and "${" not in raw_url else None
    return RegistryFacts(
        coordinate=coord,
        fetched_at=fetched_at,
        source_url=source_url,
        raw_source_url=raw_url,
        signature=signature,
        signature_detail=signature_detail,
        sha_hint=sha_hint,
        fetch_errors=tuple(issues),
    )


def fetch_registry_facts(
    coord: PackageCoordinate,
    client: FetchClient,
    keyring: Optional[Keyring] = None,
    clock: Callable[[], datetime] = utc_now,
) -> RegistryFacts:
    """Registry facts for one non-local coordinate; the fetch mode is the client's."""
    fetched_at = clock()
    if coord.ecosystem is Ecosystem.NPM:
        return _fetch_npm(coord, client, fetched_at)
    return _fetch_maven(coord, client, keyring, fetched_at)
