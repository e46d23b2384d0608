"""
Shared pytest fixtures.

The checked-in FixtureStore under fixtures/responses holds every registry and
GitHub response of the two fixture projects except the Maven signature
material. That part is produced here, once per session, with PGPy:

  key A   published on the keyserver fixture; signs slf4j-api, jackson-databind,
          guava, commons-logging, gone-lib and hamcrest-core, and signs
          *different bytes* for jackson-core (invalid signature)
  key B   not on any keyserver; signs junit (present, unverifiable)

jackson-annotations has no signature (a checked-in 404).
"""

from __future__ import annotations

import os
import re
import shutil
import sys
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional

import numpy as np
import pgpy
import pytest
from pgpy.constants import HashAlgorithm, KeyFlags, PubKeyAlgorithm

sys.path.insert(0, os.path.dirname(__file__))

from dirty_pond import DirtyPond
from manifest_extractor import DependencyEdge, DependencyTree, Directness
from shared import FixtureKey, FixtureStore, RecordedResponse
from smell_engine import Indeterminate, SmellFinding
from smell_model import Ecosystem, PackageCoordinate, SmellId, default_severity, supported_smells

collect_ignore = ["examples", "corpus"]

REPO_ROOT = Path(__file__).parent
FIXTURES = REPO_ROOT / "fixtures"
NPM_PROJECT = FIXTURES / "npm-project" / "package-lock.json"
MAVEN_PROJECT = FIXTURES / "maven-project" / "dependency-tree.txt"
EXPECTED = FIXTURES / "expected"

KEYSERVER = "https://keyserver.ubuntu.com"
KEYSERVER_HOST = "keyserver.ubuntu.com"

SIGNED_BY_A = (
    ("org.slf4j:slf4j-api", "2.0.9"),
    ("com.fasterxml.jackson.core:jackson-databind", "2.15.2"),
    ("com.google.guava:guava", "32.1.2-jre"),
    ("commons-logging:commons-logging", "1.2"),
    ("org.example:gone-lib", "0.9.0"),
    ("org.hamcrest:hamcrest-core", "1.3"),
)
SIGNED_BY_B = (("junit:junit", "4.13.2"),)
TAMPERED = (("com.fasterxml.jackson.core:jackson-core", "2.15.2"),)


def new_signing_key(name: str) -> pgpy.PGPKey:
    key = pgpy.PGPKey.new(PubKeyAlgorithm.RSAEncryptOrSign, 2048)
    uid = pgpy.PGPUID.new(name, email=f"{name.lower().replace(' ', '.')}@example.com")
    key.add_uid(uid, usage={KeyFlags.Sign, KeyFlags.Certify}, hashes=[HashAlgorithm.SHA256], primary=True)
    return key


def key_id(key: pgpy.PGPKey) -> str:
    return key.fingerprint.keyid.upper()


@dataclass(frozen=True)
class FixtureCorpus:
    responses: Path
    key_a: str
    key_b: str
    key_a_public: str

    def _expected(self, filename: str) -> str:
        text = (EXPECTED / filename).read_text(encoding="utf-8")
        return text.replace("@KEY_A@", self.key_a).replace("@KEY_B@", self.key_b)

    def expected_findings(self, ecosystem: str) -> str:
        return self._expected(f"{ecosystem}_findings.json")

    def expected_report(self, ecosystem: str) -> str:
        return self._expected(f"{ecosystem}_report.md")


@pytest.fixture(scope="session")
def signing_keys() -> tuple[pgpy.PGPKey, pgpy.PGPKey]:
    return new_signing_key("Fixture Signer A"), new_signing_key("Fixture Signer B")


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory, signing_keys) -> FixtureCorpus:
    key_a, key_b = signing_keys
    root = tmp_path_factory.mktemp("fixture-corpus") / "responses"
    shutil.copytree(FIXTURES / "responses", root)
    store = FixtureStore(root)

    def sign(name: str, version: str, key: pgpy.PGPKey, tamper: bool = False) -> None:
        pom = store.load(FixtureKey("maven", name, version, "pom")).body
        signature = key.sign(b"tampered " + pom if tamper else pom)
        store.save(
            FixtureKey("maven", name, version, "signature"),
            RecordedResponse(200, str(signature).encode("utf-8")),
        )

    for name, version in SIGNED_BY_A:
        sign(name, version, key_a)
    for name, version in SIGNED_BY_B:
        sign(name, version, key_b)
    for name, version in TAMPERED:
        sign(name, version, key_a, tamper=True)

    public_a = str(key_a.pubkey)
    store.save(
        FixtureKey("pgp", key_id(key_a), KEYSERVER_HOST, "key"),
        RecordedResponse(200, public_a.encode("utf-8")),
    )
    store.save(FixtureKey("pgp", key_id(key_b), KEYSERVER_HOST, "key"), RecordedResponse(404))
    return FixtureCorpus(root, key_id(key_a), key_id(key_b), public_a)


# ---------------------------------------------------------------------------
# Generated ponds
# ---------------------------------------------------------------------------

GENERATED_EPOCH = datetime(2026, 1, 1, tzinfo=timezone.utc)


def random_pond(
    rng: np.random.Generator,
    ecosystem: Ecosystem,
    *,
    project_name: str = "gen-app",
    analyzed_at: Optional[datetime] = None,
    package_pool: int = 40,
    max_packages: int = 25,
    p_smell: float = 0.2,
    p_unknown: float = 0.03,
) -> DirtyPond:
    """
    A valid pond over a flat tree of packages drawn from a shared pool, so ponds
    generated with the same pool overlap. Findings and Indeterminate markers are
    rolled per (package, supported smell).
    """
    npm = ecosystem is Ecosystem.NPM

    def coord(name: str, version: str) -> PackageCoordinate:
        return PackageCoordinate(ecosystem, name if npm else f"org.gen:{name}", version)

    project = coord(project_name, "1.0.0")
    nodes = {
        coord(f"lib-{int(rng.integers(0, package_pool))}", f"1.{int(rng.integers(0, 3))}.0")
        for _ in range(int(rng.integers(0, max_packages + 1)))
    }
    ordered = sorted(nodes, key=PackageCoordinate.sort_key)
    findings, unknown = [], []
    for node in ordered:
        found, failed = set(), set()
        for smell in supported_smells(ecosystem):
            roll = rng.random()
            # a package without a URL cannot have an invalid one
            if smell is SmellId.INVALID_SOURCE_CODE_URL and SmellId.NO_SOURCE_CODE_URL in found:
                continue
            # the URL lookup decides both URL smells
            if smell is SmellId.INVALID_SOURCE_CODE_URL and SmellId.NO_SOURCE_CODE_URL in failed:
                unknown.append(Indeterminate(node, smell, "generated lookup failure"))
                continue
            if roll < p_smell:
                found.add(smell)
                findings.append(SmellFinding(node, smell, default_severity(smell), f"generated {smell.slug}"))
            elif roll < p_smell + p_unknown:
                failed.add(smell)
                unknown.append(Indeterminate(node, smell, "generated lookup failure"))
    if analyzed_at is None:
        analyzed_at = GENERATED_EPOCH + timedelta(minutes=int(rng.integers(0, 500_000)))
    return DirtyPond(
        project=project,
        analyzed_at=analyzed_at,
        tree=DependencyTree(
            project=project,
            nodes=frozenset(nodes),
            edges=frozenset(DependencyEdge(project, n, Directness.DIRECT) for n in ordered),
        ),
        findings=tuple(findings),
        indeterminate=tuple(unknown),
        config={"fail_on": "High", "mode": "offline"},
    )


# ---------------------------------------------------------------------------
# Report sections
# ---------------------------------------------------------------------------

_ENTRY = re.compile(r"^- \[`([^`]+)`\]\(")


def sections(report: str) -> dict[int, str]:
    """Smell id -> body of its '### n. Title' section."""
    parts = re.split(r"^### (\d)\. .*$", report, flags=re.MULTILINE)
    bodies = {}
    for i in range(1, len(parts), 2):
        body = parts[i + 1].split("\n## ", 1)[0]
        bodies[int(parts[i])] = body
    return bodies


def listed(body: str) -> list[str]:
    """Package displays of the '- [`name@version`](link)' entries in a section body."""
    return [m.group(1) for line in body.splitlines() if (m := _ENTRY.match(line))]
