"""
Shared plumbing for the smell analysis flows.

Token loading (Prefect Secret blocks with env-var fallback), the on-disk
FixtureStore used for record/replay, and FetchClient: the one HTTP entry point
for registry, keyserver and repo-host requests.

FetchClient modes:
  live     real HTTP, nothing recorded
  record   real HTTP, every final response also written to the FixtureStore
  offline  FixtureStore only; a missing fixture raises FixtureMissing and never
           falls back to the network

Fixture layout (each path component percent-encoded):
  <root>/<ecosystem>/<name>/<version>/<facet>.resp     response body (optional when empty)
  <root>/<ecosystem>/<name>/<version>/<facet>.status   {"status": 200, "headers": {...}}

Within one FetchClient every FixtureKey is fetched at most once; repeat calls
return the cached response and do not touch the network or the disk.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import quote, urlparse

import requests
from prefect.blocks.system import Secret
from pydantic import SecretStr
from ratelimit import limits, sleep_and_retry

from smell_model import TOOL_NAME, TOOL_VERSION, SmellFlowError

logger = logging.getLogger(__name__)

# Prefect Secret block names (set in Prefect Cloud; env vars used as fallback
# for CI and local runs).
GITHUB_TOKEN_BLOCK = "github-token"
REGISTRY_TOKEN_BLOCK = "npm-registry-token"
GITHUB_TOKEN_ENV = "GITHUB_TOKEN"
REGISTRY_TOKEN_ENV = "NPM_TOKEN"

HTTP_TIMEOUT = 30
MAX_ATTEMPTS = 3
RETRY_BASE_DELAY = 1.0   # seconds; doubles per attempt
MAX_RETRY_AFTER = 120.0  # never sleep longer than this on a server hint

# Per-host request budgets as (calls, period seconds). GitHub allows 5000/h with
# a token; the rest are politeness limits for public services.
DEFAULT_HOST_RATES: dict[str, tuple[int, int]] = {
    "api.github.com": (5000, 3600),
    "registry.npmjs.org": (50, 1),
    "repo1.maven.org": (20, 1),
}
DEFAULT_RATE = (10, 1)

USER_AGENT = f"{TOOL_NAME}/{TOOL_VERSION}"


class NetworkError(SmellFlowError):
    """Transport failure, or a server error that persisted through every retry."""


class RateLimited(NetworkError):
    def __init__(self, url: str, retry_after: Optional[float]):
        self.url = url
        self.retry_after = retry_after
        hint = f"; retry after {retry_after:.0f}s" if retry_after is not None else ""
        super().__init__(f"rate limited by {urlparse(url).netloc}{hint}")


class FixtureMissing(SmellFlowError):
    def __init__(self, key: FixtureKey, path: Path):
        self.key = key
        self.path = path
        super().__init__(f"no recorded response for {key.describe()} (expected {path})")


# ---------------------------------------------------------------------------
# Tokens
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Tokens:
    """API tokens. SecretStr keeps them out of reprs, logs and Prefect parameter records."""

    github: Optional[SecretStr] = None
    registry: Optional[SecretStr] = None

    def __post_init__(self) -> None:
        for name in ("github", "registry"):
            value = getattr(self, name)
            if isinstance(value, str):
                object.__setattr__(self, name, SecretStr(value) if value else None)

    def redacted(self) -> dict[str, str]:
        return {
            "github": "set" if self.github else "unset",
            "registry": "set" if self.registry else "unset",
        }


def load_tokens(from_prefect_blocks: bool = False, env: Optional[dict] = None) -> Tokens:
    """
    Load API tokens.

    Deployed flows (`from_prefect_blocks=True`) read the Secret blocks
    GITHUB_TOKEN_BLOCK / REGISTRY_TOKEN_BLOCK. Missing blocks, or no Prefect
    API at all, fall back to the GITHUB_TOKEN / NPM_TOKEN env vars. Both tokens
    are optional; without a GitHub token the API quota is 60 requests/hour.
    Never log the values.
    """
    env = os.environ if env is None else env
    github = env.get(GITHUB_TOKEN_ENV) or None
    registry = env.get(REGISTRY_TOKEN_ENV) or None
    if from_prefect_blocks:
        try:
            github = Secret.load(GITHUB_TOKEN_BLOCK).get() or github
        except Exception as exc:
            logger.warning(f"Secret block {GITHUB_TOKEN_BLOCK!r} unavailable ({exc}); using env var.")
        try:
            registry = Secret.load(REGISTRY_TOKEN_BLOCK).get() or registry
        except Exception as exc:
            logger.warning(f"Secret block {REGISTRY_TOKEN_BLOCK!r} unavailable ({exc}); using env var.")
    return Tokens(github=github, registry=registry)


# ---------------------------------------------------------------------------
# Fixture store
# ---------------------------------------------------------------------------

class FetchMode(str, Enum):
    LIVE = "live"
    OFFLINE = "offline"
    RECORD = "record"


@dataclass(frozen=True, order=True)
class FixtureKey:
    ecosystem: str
    name: str
    version: str
    facet: str

    def describe(self) -> str:
        return f"{self.ecosystem}/{self.name}@{self.version} [{self.facet}]"


@dataclass(frozen=True)
class RecordedResponse:
    status: int
    body: bytes = b""
    headers: dict[str, str] = field(default_factory=dict)

    __hash__ = None

    @property
    def ok(self) -> bool:
        return 200 <= self.status < 300

    @property
    def text(self) -> str:
        return self.body.decode("utf-8", errors="replace")

    def json(self):
        return json.loads(self.body)


# Only headers the clients act on are kept in fixtures.
_KEPT_HEADERS = ("content-type", "retry-after", "x-ratelimit-remaining", "x-ratelimit-reset")


# File names stay under the common 255-byte limit with the ".status" suffix.
MAX_COMPONENT = 200
_KEPT_PREFIX = 160


def _encode_component(part: str) -> str:
    encoded = quote(part, safe="")
    if encoded in (".", ".."):
        return encoded.replace(".", "%2E")
    if len(encoded) > MAX_COMPONENT:
        digest = hashlib.sha256(part.encode("utf-8")).hexdigest()[:32]
        return f"{encoded[:_KEPT_PREFIX]}~{digest}"
    return encoded


class FixtureStore:
    def __init__(self, root: Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    def _base(self, key: FixtureKey) -> Path:
        return self.root.joinpath(
            _encode_component(key.ecosystem),
            _encode_component(key.name),
            _encode_component(key.version),
            _encode_component(key.facet),
        )

    def status_path(self, key: FixtureKey) -> Path:
        return self._base(key).with_name(self._base(key).name + ".status")

    def body_path(self, key: FixtureKey) -> Path:
        return self._base(key).with_name(self._base(key).name + ".resp")

    def has(self, key: FixtureKey) -> bool:
        return self.status_path(key).exists()

    def load(self, key: FixtureKey) -> RecordedResponse:
        status_path = self.status_path(key)
        if not status_path.exists():
            raise FixtureMissing(key, status_path)
        meta = json.loads(status_path.read_text(encoding="utf-8"))
        body_path = self.body_path(key)
        body = body_path.read_bytes() if body_path.exists() else b""
        return RecordedResponse(
            status=int(meta["status"]),
            body=body,
            headers={k.lower(): str(v) for k, v in (meta.get("headers") or {}).items()},
        )

    def save(self, key: FixtureKey, response: RecordedResponse) -> None:
        status_path = self.status_path(key)
        with self._lock:
            status_path.parent.mkdir(parents=True, exist_ok=True)
            meta: dict = {"status": response.status}
            if response.headers:
                meta["headers"] = dict(sorted(response.headers.items()))
            status_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            body_path = self.body_path(key)
            if response.body:
                body_path.write_bytes(response.body)
            elif body_path.exists():
                body_path.unlink()


# ---------------------------------------------------------------------------
# Rate limiting
# ---------------------------------------------------------------------------

# One limiter per host for the whole process, so concurrent clients share a budget.
_HOST_LIMITERS: dict[str, Callable] = {}
_HOST_LIMITERS_LOCK = threading.Lock()


def _host_limiter(host: str, rates: dict[str, tuple[int, int]]) -> Callable:
    with _HOST_LIMITERS_LOCK:
        limiter = _HOST_LIMITERS.get(host)
        if limiter is None:
            calls, period = rates.get(host, DEFAULT_RATE)

            @sleep_and_retry
            @limits(calls=calls, period=period)
            def _acquire() -> None:
                return None

            limiter = _HOST_LIMITERS[host] = _acquire
        return limiter


# ---------------------------------------------------------------------------
# Fetch client
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RequestRecord:
    url: str
    status: int
    source: str  # "network" or "fixture"

    def line(self) -> str:
        return f"{self.source} {self.status} {self.url}"


class FetchClient:
    """
    Cached, rate-limited GET client shared by all fetch workers of one run.

    Safe to call from many threads: each FixtureKey gets its own lock, so two
    workers asking for the same response wait for one fetch instead of racing.
    """

    def __init__(
        self,
        mode: FetchMode = FetchMode.LIVE,
        fixtures: Optional[FixtureStore] = None,
        tokens: Optional[Tokens] = None,
        *,
        timeout: int = HTTP_TIMEOUT,
        max_attempts: int = MAX_ATTEMPTS,
        host_rates: Optional[dict[str, tuple[int, int]]] = None,
        sleep: Callable[[float], None] = time.sleep,
        session: Optional[requests.Session] = None,
    ):
        if mode in (FetchMode.OFFLINE, FetchMode.RECORD) and fixtures is None:
            raise ValueError(f"{mode.value} mode needs a FixtureStore")
        self.mode = mode
        self.fixtures = fixtures
        self.tokens = tokens or Tokens()
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.host_rates = {**DEFAULT_HOST_RATES, **(host_rates or {})}
        self._sleep = sleep
        self._session = session
        self._cache: dict[FixtureKey, RecordedResponse] = {}
        self._key_locks: dict[FixtureKey, threading.Lock] = {}
        self._lock = threading.Lock()
        self._log: list[RequestRecord] = []
        self.network_requests = 0

    # -- public -------------------------------------------------------------

    def get(self, url: str, key: FixtureKey, headers: Optional[dict[str, str]] = None) -> RecordedResponse:
        with self._lock:
            key_lock = self._key_locks.setdefault(key, threading.Lock())
        with key_lock:
            cached = self._cache.get(key)
            if cached is not None:
                return cached
            if self.mode is FetchMode.OFFLINE:
                response = self.fixtures.load(key)
                source = "fixture"
            else:
                response = self._fetch_with_retry(url, headers or {})
                source = "network"
                if self.mode is FetchMode.RECORD:
                    self.fixtures.save(key, response)
            with self._lock:
                self._cache[key] = response
                self._log.append(RequestRecord(url, response.status, source))
            return response

    @property
    def request_count(self) -> int:
        """Distinct responses obtained (network or fixture) in this run."""
        with self._lock:
            return len(self._log)

    def request_log(self) -> list[RequestRecord]:
        with self._lock:
            return sorted(self._log, key=lambda r: (r.url, r.status, r.source))

    def log_digest(self) -> str:
        """Order-independent digest of the request log."""
        lines = "\n".join(r.line() for r in self.request_log())
        return "sha256:" + hashlib.sha256(lines.encode("utf-8")).hexdigest()

    # -- network ------------------------------------------------------------

    def _auth_headers(self, host: str) -> dict[str, str]:
        if host == "api.github.com" and self.tokens.github:
            return {"Authorization": f"Bearer {self.tokens.github.get_secret_value()}"}
        if host == "registry.npmjs.org" and self.tokens.registry:
            return {"Authorization": f"Bearer {self.tokens.registry.get_secret_value()}"}
        return {}

    def _send(self, url: str, headers: dict[str, str]) -> requests.Response:
        host = urlparse(url).netloc
        _host_limiter(host, self.host_rates)()
        with self._lock:
            self.network_requests += 1
        sender = self._session or requests
        return sender.get(
            url,
            headers={"User-Agent": USER_AGENT, **self._auth_headers(host), **headers},
            timeout=self.timeout,
            allow_redirects=True,
        )

    @staticmethod
    def _retry_after(r: requests.Response) -> Optional[float]:
        value = r.headers.get("Retry-After")
        if value is None:
            return None
        try:
            return min(float(value), MAX_RETRY_AFTER)
        except ValueError:
            return None

    @staticmethod
    def _is_rate_limited(r: requests.Response) -> bool:
        # GitHub answers an exhausted quota with 403 + x-ratelimit-remaining: 0.
        return r.status_code == 429 or (
            r.status_code == 403 and r.headers.get("X-RateLimit-Remaining") == "0"
        )

    def _fetch_with_retry(self, url: str, headers: dict[str, str]) -> RecordedResponse:
        """HTTP GET with retry on transport errors, 429 and 5xx."""
        last_error = ""
        retry_after: Optional[float] = None
        for attempt in range(self.max_attempts):
            delay = RETRY_BASE_DELAY * (2 ** attempt)
            try:
                r = self._send(url, headers)
            except requests.RequestException as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                r = None
            if r is not None:
                if self._is_rate_limited(r):
                    retry_after = self._retry_after(r)
                    last_error = f"HTTP {r.status_code}"
                    delay = retry_after if retry_after is not None else delay
                elif r.status_code >= 500:
                    last_error = f"HTTP {r.status_code}"
                    delay = self._retry_after(r) or delay
                else:
                    return RecordedResponse(
                        status=r.status_code,
                        body=r.content,
                        headers={k.lower(): v for k, v in r.headers.items() if k.lower() in _KEPT_HEADERS},
                    )
            if attempt + 1 < self.max_attempts:
                logger.info(f"GET {url} failed ({last_error}); retry {attempt + 1} in {delay:.0f}s")
                self._sleep(delay)
        if last_error.startswith("HTTP 429") or last_error.startswith("HTTP 403"):
            raise RateLimited(url, retry_after)
        raise NetworkError(f"GET {url} failed after {self.max_attempts} attempts: {last_error}")
