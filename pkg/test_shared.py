"""
Unit tests for shared (tokens, FixtureStore, FetchClient).

Covers:
  1. FixtureStore path encoding (scoped names, Maven coordinates, dot segments,
     over-long names shortened with a digest) and save/load with and without a
     body.
  2. FetchClient offline mode: fixture hits, FixtureMissing, never touches the
     network.
  3. Live/record mode against a fake session: retries on 5xx and 429 with
     Retry-After, GitHub 403 quota exhaustion, 404 returned as-is, transport
     errors, record-mode writes.
  4. Per-key caching and the request log digest.
  5. Tokens: env fallback, Prefect block fallback, redaction, auth headers.
"""

from __future__ import annotations

import os
import sys
from unittest import mock

import pytest
import requests
from requests.structures import CaseInsensitiveDict

sys.path.insert(0, os.path.dirname(__file__))

from shared import (
    MAX_COMPONENT,
    FetchClient,
    FetchMode,
    FixtureKey,
    FixtureMissing,
    FixtureStore,
    NetworkError,
    RateLimited,
    RecordedResponse,
    Tokens,
    load_tokens,
)

HOST = "fetch.test"
FAST = {HOST: (100000, 1), "api.github.com": (100000, 1), "registry.npmjs.org": (100000, 1)}
KEY = FixtureKey("npm", "@scope/pkg", "1.0.0", "manifest")
URL = f"https://{HOST}/@scope%2fpkg/1.0.0"


class FakeResponse:
    def __init__(self, status: int, body: bytes = b"", headers: dict | None = None):
        self.status_code = status
        self.content = body
        self.headers = CaseInsensitiveDict(headers or {})


class FakeSession:
    """Hands out queued responses (or raises queued exceptions) in order."""

    def __init__(self, *outcomes):
        self.outcomes = list(outcomes)
        self.calls: list[tuple[str, dict]] = []

    def get(self, url, headers=None, timeout=None, allow_redirects=True):
        self.calls.append((url, dict(headers or {})))
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def live_client(session: FakeSession, **kwargs) -> tuple[FetchClient, list[float]]:
    sleeps: list[float] = []
    client = FetchClient(FetchMode.LIVE, session=session, sleep=sleeps.append, host_rates=FAST, **kwargs)
    return client, sleeps


# ---------------------------------------------------------------------------
# FixtureStore
# ---------------------------------------------------------------------------

class TestFixtureStore:
    def test_paths_are_percent_encoded(self, tmp_path):
        store = FixtureStore(tmp_path)
        assert store.status_path(KEY) == tmp_path / "npm" / "%40scope%2Fpkg" / "1.0.0" / "manifest.status"
        maven = FixtureKey("maven", "org.slf4j:slf4j-api", "2.0.9", "pom")
        assert store.body_path(maven) == tmp_path / "maven" / "org.slf4j%3Aslf4j-api" / "2.0.9" / "pom.resp"

    def test_dot_segments_cannot_escape_root(self, tmp_path):
        store = FixtureStore(tmp_path)
        path = store.status_path(FixtureKey("npm", "..", ".", "manifest"))
        assert path == tmp_path / "npm" / "%2E%2E" / "%2E" / "manifest.status"

    def test_long_names_are_shortened(self, tmp_path):
        store = FixtureStore(tmp_path)
        url = "https://docs.example.org/" + "/".join(f"section-{i}" for i in range(60))
        key = FixtureKey("web", url, "-", "probe")
        other = FixtureKey("web", url + "x", "-", "probe")
        name = store.status_path(key).parent.parent.name
        assert len(url) > 255
        assert len(name) <= MAX_COMPONENT
        assert name.startswith("https%3A%2F%2Fdocs.example.org")
        assert store.status_path(key) != store.status_path(other)
        assert store.status_path(key) == FixtureStore(tmp_path).status_path(key)

        store.save(key, RecordedResponse(200, b"<html></html>"))
        assert store.load(key).body == b"<html></html>"
        assert not store.has(other)

    def test_save_and_load(self, tmp_path):
        store = FixtureStore(tmp_path)
        store.save(KEY, RecordedResponse(200, b'{"a": 1}', {"content-type": "application/json"}))
        assert store.has(KEY)
        loaded = store.load(KEY)
        assert loaded.status == 200
        assert loaded.json() == {"a": 1}
        assert loaded.headers == {"content-type": "application/json"}

    def test_empty_body_leaves_no_resp_file(self, tmp_path):
        store = FixtureStore(tmp_path)
        store.save(KEY, RecordedResponse(200, b"old"))
        store.save(KEY, RecordedResponse(404))
        assert not store.body_path(KEY).exists()
        assert store.load(KEY) == RecordedResponse(404)

    def test_status_file_is_stable_json(self, tmp_path):
        store = FixtureStore(tmp_path)
        store.save(KEY, RecordedResponse(429, headers={"retry-after": "5"}))
        assert store.status_path(KEY).read_text() == (
            '{\n  "headers": {\n    "retry-after": "5"\n  },\n  "status": 429\n}\n'
        )

    def test_missing(self, tmp_path):
        with pytest.raises(FixtureMissing) as info:
            FixtureStore(tmp_path).load(KEY)
        assert "@scope/pkg@1.0.0 [manifest]" in str(info.value)


# ---------------------------------------------------------------------------
# FetchClient
# ---------------------------------------------------------------------------

class TestOfflineMode:
    def test_reads_fixture_without_network(self, tmp_path):
        store = FixtureStore(tmp_path)
        store.save(KEY, RecordedResponse(200, b"{}"))
        with mock.patch("shared.requests.get") as net:
            client = FetchClient(FetchMode.OFFLINE, store)
            assert client.get(URL, KEY).status == 200
        net.assert_not_called()
        assert client.network_requests == 0
        assert [r.line() for r in client.request_log()] == [f"fixture 200 {URL}"]

    def test_missing_fixture_raises(self, tmp_path):
        client = FetchClient(FetchMode.OFFLINE, FixtureStore(tmp_path))
        with mock.patch("shared.requests.get") as net, pytest.raises(FixtureMissing):
            client.get(URL, KEY)
        net.assert_not_called()

    def test_offline_needs_store(self):
        with pytest.raises(ValueError):
            FetchClient(FetchMode.OFFLINE)


class TestRetries:
    def test_success_first_try(self):
        session = FakeSession(FakeResponse(200, b"ok", {"Content-Type": "text/plain", "X-Other": "1"}))
        client, sleeps = live_client(session)
        response = client.get(URL, KEY)
        assert response.body == b"ok"
        assert response.headers == {"content-type": "text/plain"}
        assert sleeps == []
        assert session.calls[0][1]["User-Agent"].startswith("smell-flow/")

    def test_5xx_then_success(self):
        session = FakeSession(FakeResponse(502), FakeResponse(503), FakeResponse(200, b"ok"))
        client, sleeps = live_client(session)
        assert client.get(URL, KEY).status == 200
        assert sleeps == [1.0, 2.0]
        assert client.network_requests == 3

    def test_429_honours_retry_after(self):
        session = FakeSession(FakeResponse(429, headers={"Retry-After": "7"}), FakeResponse(200))
        client, sleeps = live_client(session)
        client.get(URL, KEY)
        assert sleeps == [7.0]

    def test_persistent_429_raises_rate_limited(self):
        session = FakeSession(*[FakeResponse(429, headers={"Retry-After": "3"}) for _ in range(3)])
        client, _ = live_client(session)
        with pytest.raises(RateLimited) as info:
            client.get(URL, KEY)
        assert info.value.retry_after == 3.0
        assert HOST in str(info.value)

    def test_github_quota_403(self):
        exhausted = FakeResponse(403, headers={"X-RateLimit-Remaining": "0"})
        session = FakeSession(exhausted, exhausted)
        client, _ = live_client(session, max_attempts=2)
        with pytest.raises(RateLimited):
            client.get("https://api.github.com/repos/a/b", FixtureKey("github", "a/b", "-", "repo"))

    def test_plain_403_and_404_are_answers(self):
        session = FakeSession(FakeResponse(403), FakeResponse(404))
        client, sleeps = live_client(session)
        assert client.get(URL, KEY).status == 403
        assert client.get(URL + "/x", FixtureKey("npm", "x", "1.0.0", "manifest")).status == 404
        assert sleeps == []

    def test_persistent_5xx_raises_network_error(self):
        session = FakeSession(FakeResponse(500), FakeResponse(500), FakeResponse(500))
        client, sleeps = live_client(session)
        with pytest.raises(NetworkError) as info:
            client.get(URL, KEY)
        assert not isinstance(info.value, RateLimited)
        assert "HTTP 500" in str(info.value)
        assert len(sleeps) == 2

    def test_transport_error_retried(self):
        session = FakeSession(requests.ConnectionError("reset"), FakeResponse(200))
        client, sleeps = live_client(session)
        assert client.get(URL, KEY).status == 200
        assert sleeps == [1.0]


class TestCachingAndRecording:
    def test_each_key_fetched_once(self):
        session = FakeSession(FakeResponse(200, b"first"))
        client, _ = live_client(session)
        assert client.get(URL, KEY).body == b"first"
        assert client.get(URL, KEY).body == b"first"
        assert len(session.calls) == 1
        assert client.request_count == 1

    def test_record_mode_writes_final_response(self, tmp_path):
        store = FixtureStore(tmp_path)
        session = FakeSession(FakeResponse(500), FakeResponse(200, b"body"))
        client = FetchClient(FetchMode.RECORD, store, session=session, sleep=lambda _: None, host_rates=FAST)
        client.get(URL, KEY)
        assert store.load(KEY) == RecordedResponse(200, b"body")

        replay = FetchClient(FetchMode.OFFLINE, store)
        assert replay.get(URL, KEY).body == b"body"

    def test_log_digest_ignores_order(self, tmp_path):
        store = FixtureStore(tmp_path)
        other = FixtureKey("npm", "b", "1.0.0", "manifest")
        store.save(KEY, RecordedResponse(200))
        store.save(other, RecordedResponse(404))

        first = FetchClient(FetchMode.OFFLINE, store)
        first.get(URL, KEY)
        first.get("https://fetch.test/b", other)
        second = FetchClient(FetchMode.OFFLINE, store)
        second.get("https://fetch.test/b", other)
        second.get(URL, KEY)
        assert first.log_digest() == second.log_digest()
        assert first.log_digest().startswith("sha256:")


# ---------------------------------------------------------------------------
# Tokens
# ---------------------------------------------------------------------------

class TestTokens:
    def test_env_fallback(self):
        tokens = load_tokens(env={"GITHUB_TOKEN": "ghp_secret", "NPM_TOKEN": ""})
        assert tokens.github.get_secret_value() == "ghp_secret"
        assert tokens.registry is None
        assert tokens.redacted() == {"github": "set", "registry": "unset"}

    def test_values_never_in_repr(self):
        tokens = Tokens(github="ghp_secret", registry="npm_secret")
        assert "ghp_secret" not in repr(tokens)
        assert "npm_secret" not in str(tokens.redacted())

    def test_prefect_block_wins_over_env(self):
        block = mock.MagicMock()
        block.get.return_value = "from-block"
        with mock.patch("shared.Secret.load", return_value=block):
            tokens = load_tokens(from_prefect_blocks=True, env={"GITHUB_TOKEN": "from-env"})
        assert tokens.github.get_secret_value() == "from-block"

    def test_missing_block_falls_back_to_env(self):
        with mock.patch("shared.Secret.load", side_effect=ValueError("no block")):
            tokens = load_tokens(from_prefect_blocks=True, env={"GITHUB_TOKEN": "from-env"})
        assert tokens.github.get_secret_value() == "from-env"
        assert tokens.registry is None

    def test_auth_header_only_for_matching_host(self):
        session = FakeSession(FakeResponse(200), FakeResponse(200))
        client, _ = live_client(session, tokens=Tokens(github="ghp_secret"))
        client.get("https://api.github.com/repos/a/b", FixtureKey("github", "a/b", "-", "repo"))
        client.get(URL, KEY)
        assert session.calls[0][1]["Authorization"] == "Bearer ghp_secret"
        assert "Authorization" not in session.calls[1][1]
