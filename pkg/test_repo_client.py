"""
Unit tests for repo_client.

Covers:
  1. Tag candidates: pattern order, de-duplication, invalid ref names skipped,
     Maven artifactId pattern, extra patterns, unknown placeholders.
  2. Release resolution property: for 200 seeded versions and every pattern
     index k, a repository holding only the k-th candidate resolves to pattern k
     after looking up exactly the first k+1 candidates.
  3. Sha hint handling (found, nonexistent, malformed).
  4. Checked-in GitHub fixtures: accessible, 404, fork parent, reachable
     non-forge host, unresolved candidate lists, Maven artifactId tags.
  5. Failure paths: 410/451 gone, 5xx into fetch_errors, checks on an
     inaccessible repository. An unreachable non-forge host is recorded on the
     facts rather than as a fetch error, while a missing recording still aborts.
"""

from __future__ import annotations

import os
import sys
from typing import Optional
from unittest import mock

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from repo_client import (
    TAG_PATTERNS,
    Accessibility,
    RepoAccess,
    RepoFacts,
    RepoHost,
    ResolutionKind,
    ShaStatus,
    check_fork,
    check_repo,
    fetch_repo_facts,
    is_valid_ref_name,
    pattern_placeholders,
    resolve_release,
    tag_candidates,
)
from shared import FetchClient, FetchMode, FixtureKey, FixtureMissing, FixtureStore, NetworkError, RecordedResponse
from smell_model import Ecosystem

NPM, MAVEN = Ecosystem.NPM, Ecosystem.MAVEN
FIXTURE_RESPONSES = os.path.join(os.path.dirname(__file__), "fixtures", "responses")


class InMemoryHost(RepoHost):
    """A forge whose refs live in sets; records every lookup."""

    hosts = frozenset({"forge.test"})

    def __init__(self, tags=(), commits=(), fork_of: Optional[str] = None):
        self.tags = set(tags)
        self.commits = set(commits)
        self.fork_of = fork_of
        self.tag_lookups: list[str] = []
        self.commit_lookups: list[str] = []

    def repository(self, url, client):
        return RepoAccess(Accessibility.ACCESSIBLE, 200), {"fork": self.fork_of is not None}

    def commit_exists(self, url, sha, client):
        self.commit_lookups.append(sha)
        return sha in self.commits

    def tag_exists(self, url, tag, client):
        self.tag_lookups.append(tag)
        return tag in self.tags

    def fork_parent(self, metadata):
        return (True, self.fork_of) if metadata.get("fork") else (False, None)


URL = "https://forge.test/owner/project"


@pytest.fixture
def empty_client(tmp_path) -> FetchClient:
    return FetchClient(FetchMode.OFFLINE, FixtureStore(tmp_path))


@pytest.fixture
def fixture_client() -> FetchClient:
    return FetchClient(FetchMode.OFFLINE, FixtureStore(FIXTURE_RESPONSES))


def random_version(rng: np.random.Generator) -> str:
    core = ".".join(str(int(n)) for n in rng.integers(0, 40, size=3))
    suffix = rng.choice(["", "", "", "-beta.1", "-rc.2", "-jre", "+build.7"])
    return core + str(suffix)


# ---------------------------------------------------------------------------
# Candidates
# ---------------------------------------------------------------------------

class TestTagCandidates:
    def test_npm_order(self):
        tags = [tag for _, tag in tag_candidates("1.2.3", "left-pad", NPM)]
        assert tags == [
            "v1.2.3", "1.2.3", "left-pad-1.2.3", "left-pad@1.2.3",
            "release-1.2.3", "release/1.2.3", "r1.2.3",
        ]

    def test_maven_skips_colon_names_and_adds_artifact_pattern(self):
        tags = [tag for _, tag in tag_candidates("2.15.2", "com.fasterxml.jackson.core:jackson-databind", MAVEN)]
        assert tags == ["v2.15.2", "2.15.2", "release-2.15.2", "release/2.15.2", "r2.15.2", "jackson-databind-2.15.2"]

    def test_scoped_npm_name(self):
        pairs = tag_candidates("2.0.0", "@sigstore/demo", NPM)
        assert ("{name}@{version}", "@sigstore/demo@2.0.0") in pairs

    def test_extra_patterns_appended_and_deduplicated(self):
        pairs = tag_candidates("1.0.0", "a", NPM, ("v{version}", "{artifactId}_v{version}", "{unknown}-{version}"))
        assert [p for p, _ in pairs][-1] == "{artifactId}_v{version}"
        assert [t for _, t in pairs].count("v1.0.0") == 1
        assert len(pairs) == len(TAG_PATTERNS) + 1

    @pytest.mark.parametrize("ref,valid", [
        ("v1.0.0", True), ("release/1.0", True), ("a@b", True),
        ("", False), ("@", False), ("a..b", False), ("a b", False), ("g:a-1.0", False),
        ("a~1", False), ("a^", False), ("/a", False), ("a/", False), ("a.", False),
        ("a//b", False), ("a@{b", False), ("x/.hidden", False), ("v1.lock", False),
    ])
    def test_ref_names(self, ref, valid):
        assert is_valid_ref_name(ref) is valid

    def test_placeholders(self):
        assert pattern_placeholders("{name}-{version}") == {"name", "version"}
        assert pattern_placeholders("r{version}") == {"version"}


class TestResolutionProperty:
    @pytest.mark.parametrize("k", range(len(TAG_PATTERNS)))
    def test_kth_candidate_resolves(self, k, empty_client):
        rng = np.random.default_rng(1000 + k)
        for _ in range(200):
            version = random_version(rng)
            name = f"pkg{int(rng.integers(0, 10_000))}"
            tags = [tag for _, tag in tag_candidates(version, name, NPM)]
            assert len(tags) == len(TAG_PATTERNS)

            host = InMemoryHost(tags={tags[k]})
            resolution, checked = resolve_release(
                URL, version, None, empty_client, name=name, ecosystem=NPM, hosts=(host,)
            )
            assert resolution.kind is ResolutionKind.RESOLVED_BY_TAG
            assert resolution.matched_pattern == TAG_PATTERNS[k]
            assert resolution.matched_ref == tags[k]
            assert checked == tuple(tags[: k + 1])
            assert host.tag_lookups == tags[: k + 1]

    def test_first_match_wins(self, empty_client):
        host = InMemoryHost(tags={"1.0.0", "r1.0.0", "v1.0.0"})
        resolution, checked = resolve_release(URL, "1.0.0", None, empty_client, name="a", ecosystem=NPM, hosts=(host,))
        assert resolution.matched_ref == "v1.0.0"
        assert checked == ("v1.0.0",)

    def test_unresolved_lists_every_candidate(self, empty_client):
        host = InMemoryHost()
        resolution, checked = resolve_release(URL, "3.1.4", None, empty_client, name="a", ecosystem=NPM, hosts=(host,))
        assert resolution.kind is ResolutionKind.UNRESOLVED
        assert checked == tuple(tag for _, tag in tag_candidates("3.1.4", "a", NPM))


class TestShaHint:
    SHA = "8368dc178af16b91b576c4c1d135f701a0007e5d"

    def test_found_sha_skips_tags(self, empty_client):
        host = InMemoryHost(tags={"v1.0.0"}, commits={self.SHA})
        resolution, checked = resolve_release(URL, "1.0.0", self.SHA, empty_client, name="a", ecosystem=NPM, hosts=(host,))
        assert resolution.kind is ResolutionKind.RESOLVED_BY_SHA
        assert resolution.sha_status is ShaStatus.FOUND
        assert resolution.matched_ref == self.SHA
        assert checked == ()
        assert host.tag_lookups == []

    def test_nonexistent_sha_falls_back_to_tags(self, empty_client):
        host = InMemoryHost(tags={"1.0.0"})
        resolution, _ = resolve_release(URL, "1.0.0", self.SHA, empty_client, name="a", ecosystem=NPM, hosts=(host,))
        assert resolution.kind is ResolutionKind.RESOLVED_BY_TAG
        assert resolution.sha_status is ShaStatus.NONEXISTENT

    def test_malformed_sha_is_not_looked_up(self, empty_client):
        host = InMemoryHost()
        resolution, _ = resolve_release(URL, "1.0.0", "not-a-sha", empty_client, name="a", ecosystem=NPM, hosts=(host,))
        assert resolution.sha_status is ShaStatus.MALFORMED
        assert host.commit_lookups == []

    def test_empty_version_rejected(self, empty_client):
        with pytest.raises(ValueError):
            resolve_release(URL, "", None, empty_client, name="a", ecosystem=NPM, hosts=(InMemoryHost(),))


# ---------------------------------------------------------------------------
# GitHub fixtures
# ---------------------------------------------------------------------------

class TestGitHubFixtures:
    def test_resolved_by_release_commit(self, fixture_client):
        facts = fetch_repo_facts(
            "https://github.com/expressjs/express", "4.18.2", "8368dc178af16b91b576c4c1d135f701a0007e5d",
            fixture_client, name="express", ecosystem=NPM,
        )
        assert facts.accessibility is Accessibility.ACCESSIBLE
        assert facts.is_fork is False
        assert facts.tag_resolution.kind is ResolutionKind.RESOLVED_BY_SHA
        assert facts.fetch_errors == ()

    def test_resolved_by_bare_version_tag(self, fixture_client):
        facts = fetch_repo_facts(
            "https://github.com/visionmedia/debug", "2.6.9", None, fixture_client, name="debug", ecosystem=NPM
        )
        assert facts.tag_resolution.matched_pattern == "{version}"
        assert facts.checked_candidates == ("v2.6.9", "2.6.9")

    def test_unresolved(self, fixture_client):
        facts = fetch_repo_facts(
            "https://github.com/jonschlinkert/is-even", "1.0.0", None, fixture_client, name="is-even", ecosystem=NPM
        )
        assert facts.tag_resolution.kind is ResolutionKind.UNRESOLVED
        assert len(facts.checked_candidates) == len(TAG_PATTERNS)

    def test_missing_repository(self, fixture_client):
        facts = fetch_repo_facts(
            "https://github.com/stevemao/left-pad", "1.3.0", None, fixture_client, name="left-pad", ecosystem=NPM
        )
        assert facts.accessibility is Accessibility.NOT_FOUND
        assert facts.http_status == 404
        assert facts.is_fork is None and facts.tag_resolution is None

    def test_fork_parent(self, fixture_client):
        url = "https://github.com/forked-org/colors.js"
        assert check_fork(url, fixture_client) == (True, "https://github.com/Marak/colors.js")

    def test_non_forge_host_answers(self, fixture_client):
        access = check_repo("https://example.com/legacy-util", fixture_client)
        assert access == RepoAccess(Accessibility.NON_REPO_HOST, 200, True)

    def test_maven_artifact_id_tag(self, fixture_client):
        facts = fetch_repo_facts(
            "https://github.com/FasterXML/jackson-databind", "2.15.2", None, fixture_client,
            name="com.fasterxml.jackson.core:jackson-databind", ecosystem=MAVEN,
        )
        assert facts.tag_resolution.matched_ref == "jackson-databind-2.15.2"
        assert facts.tag_resolution.matched_pattern == "{artifactId}-{version}"
        assert len(facts.checked_candidates) == 6

    def test_facts_dict_round_trip(self, fixture_client):
        facts = fetch_repo_facts(
            "https://github.com/lodash/lodash", "4.17.21", None, fixture_client, name="lodash", ecosystem=NPM
        )
        assert RepoFacts.from_dict(facts.to_dict()) == facts


class TestFailures:
    @pytest.mark.parametrize("status", [410, 451])
    def test_gone(self, tmp_path, status):
        store = FixtureStore(tmp_path)
        store.save(FixtureKey("github", "o/r", "-", "repo"), RecordedResponse(status))
        facts = fetch_repo_facts("https://github.com/o/r", "1.0", None, FetchClient(FetchMode.OFFLINE, store),
                                 name="r", ecosystem=NPM)
        assert facts.accessibility is Accessibility.GONE

    def test_disabled_repository_is_gone(self, tmp_path):
        store = FixtureStore(tmp_path)
        store.save(FixtureKey("github", "o/r", "-", "repo"), RecordedResponse(200, b'{"disabled": true}'))
        assert check_repo("https://github.com/o/r", FetchClient(FetchMode.OFFLINE, store)).accessibility is Accessibility.GONE

    def test_server_error_lands_in_fetch_errors(self, tmp_path):
        store = FixtureStore(tmp_path)
        store.save(FixtureKey("github", "o/r", "-", "repo"), RecordedResponse(502))
        facts = fetch_repo_facts("https://github.com/o/r", "1.0", None, FetchClient(FetchMode.OFFLINE, store),
                                 name="r", ecosystem=NPM)
        assert facts.accessibility is None
        assert facts.failed("repository")

    def test_tag_lookup_error_keeps_fork_fact(self, tmp_path):
        store = FixtureStore(tmp_path)
        store.save(FixtureKey("github", "o/r", "-", "repo"), RecordedResponse(200, b'{"fork": false}'))
        store.save(FixtureKey("github", "o/r", "v1.0", "tag"), RecordedResponse(500))
        facts = fetch_repo_facts("https://github.com/o/r", "1.0", None, FetchClient(FetchMode.OFFLINE, store),
                                 name="r", ecosystem=NPM)
        assert facts.is_fork is False
        assert facts.tag_resolution is None
        assert facts.failed("release") and not facts.failed("fork")

    def test_checks_need_accessible_repository(self, fixture_client):
        with pytest.raises(ValueError):
            check_fork("https://github.com/stevemao/left-pad", fixture_client)
        with pytest.raises(ValueError):
            resolve_release("https://example.com/legacy-util", "1.0.0", None, fixture_client,
                            name="legacy-util", ecosystem=NPM)

    def test_inaccessible_facts_cannot_carry_release(self):
        with pytest.raises(ValueError):
            RepoFacts(url="https://github.com/o/r", accessibility=Accessibility.NOT_FOUND, is_fork=False)

    def test_unreachable_non_forge_host_is_recorded(self):
        client = mock.MagicMock(spec=FetchClient)
        client.get.side_effect = NetworkError(
            "GET https://dead-domain.example/proj failed after 3 attempts: Name or service not known"
        )
        facts = fetch_repo_facts("https://dead-domain.example/proj", "1.0.0", None, client,
                                 name="proj", ecosystem=NPM)
        assert facts.accessibility is Accessibility.NON_REPO_HOST
        assert facts.probe_reachable is False
        assert facts.http_status is None
        assert "Name or service not known" in facts.probe_error
        assert facts.fetch_errors == ()
        assert RepoFacts.from_dict(facts.to_dict()) == facts

    def test_missing_web_recording_still_raises(self, empty_client):
        with pytest.raises(FixtureMissing):
            check_repo("https://dead-domain.example/proj", empty_client)
