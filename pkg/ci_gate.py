"""
CI policy: effective configuration and the pass/fail decision for a pond.

Configuration layers, later wins:
  built-in defaults <- YAML config file <- environment <- command-line overrides

YAML keys (all optional):
  fail_on: high                      # minimum severity that fails the build
  max_findings: {medium: 10}         # per-severity count thresholds
  severity_overrides: {fork: high}
  ignore:
    - package: "left-pad@1.3.0"      # fnmatch pattern on name@version or name
      smell: invalid_source_code_url
      expires: 2027-01-31
      justification: "vendored copy, tracked in SEC-12"
  mode: live | offline | record
  fixtures: fixtures/responses
  tag_patterns: ["{name}_v{version}"]
  keyservers: ["https://keyserver.ubuntu.com"]
  keyring: keys/
  workers: 8
  indeterminate_budget: 0.10
  comment_max_chars: 65000

Environment: SMELL_FAIL_ON, SMELL_MODE, SMELL_FIXTURES, SMELL_INDETERMINATE_BUDGET,
SMELL_WORKERS, SMELL_KEYRING, plus GITHUB_TOKEN / NPM_TOKEN for the tokens.

Exit codes: 0 pass, 1 gate failed (smells), 2 operational error.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from datetime import date, datetime
from fnmatch import fnmatchcase
from pathlib import Path
from typing import Iterable, Mapping, Optional

from ruamel.yaml import YAML
from ruamel.yaml.error import YAMLError

from dirty_pond import DirtyPond
from registry_client import DEFAULT_KEYSERVERS
from repo_client import TAG_PLACEHOLDERS, pattern_placeholders
from report_gen import COMMENT_MAX_CHARS
from shared import FetchMode, Tokens, load_tokens
from smell_engine import SeverityPolicy, SmellFinding
from smell_model import PackageCoordinate, Severity, SmellFlowError, SmellId

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_ERROR = 2

DEFAULT_FAIL_ON = Severity.HIGH
DEFAULT_INDETERMINATE_BUDGET = 0.10
DEFAULT_WORKERS = 8

_ANSI = {EXIT_PASS: "\033[32m", EXIT_FAIL: "\033[31m", EXIT_ERROR: "\033[33m"}

ENV_VARS = {
    "fail_on": "SMELL_FAIL_ON",
    "mode": "SMELL_MODE",
    "fixtures": "SMELL_FIXTURES",
    "indeterminate_budget": "SMELL_INDETERMINATE_BUDGET",
    "workers": "SMELL_WORKERS",
    "keyring": "SMELL_KEYRING",
}

CONFIG_KEYS = frozenset({
    "fail_on", "max_findings", "severity_overrides", "ignore", "mode", "fixtures",
    "tag_patterns", "keyservers", "keyring", "workers", "indeterminate_budget",
    "comment_max_chars",
})


class ConfigError(SmellFlowError):
    def __init__(self, field_errors: list[str]):
        self.field_errors = list(field_errors)
        super().__init__("invalid configuration: " + "; ".join(self.field_errors))


class ExpiredIgnore(SmellFlowError):
    def __init__(self, rules: list[IgnoreRule], today: date):
        self.rules = list(rules)
        listed = ", ".join(f"{r.package} / {r.smell.slug} (expired {r.expires.isoformat()})" for r in self.rules)
        super().__init__(f"ignore entries expired before {today.isoformat()}: {listed}")


def coordinate_matches(pattern: str, coord: PackageCoordinate) -> bool:
    return fnmatchcase(coord.display, pattern) or fnmatchcase(coord.name, pattern)


@dataclass(frozen=True)
class IgnoreRule:
    package: str
    smell: SmellId
    expires: date
    justification: str

    def matches(self, finding: SmellFinding) -> bool:
        return finding.smell is self.smell and coordinate_matches(self.package, finding.coordinate)

    def to_dict(self) -> dict:
        return {
            "package": self.package,
            "smell": self.smell.slug,
            "expires": self.expires.isoformat(),
            "justification": self.justification,
        }


@dataclass(frozen=True)
class GateConfig:
    fail_on: Severity = DEFAULT_FAIL_ON
    max_findings: dict[Severity, int] = field(default_factory=dict)
    severity_overrides: dict[SmellId, Severity] = field(default_factory=dict)
    ignore: tuple[IgnoreRule, ...] = ()
    mode: FetchMode = FetchMode.LIVE
    fixtures: Optional[Path] = None
    tag_patterns: tuple[str, ...] = ()
    keyservers: tuple[str, ...] = DEFAULT_KEYSERVERS
    keyring: Optional[Path] = None
    workers: int = DEFAULT_WORKERS
    indeterminate_budget: float = DEFAULT_INDETERMINATE_BUDGET
    comment_max_chars: int = COMMENT_MAX_CHARS
    tokens: Tokens = field(default_factory=Tokens, repr=False)

    __hash__ = None

    def policy(self) -> SeverityPolicy:
        return SeverityPolicy(dict(self.severity_overrides))

    def to_dict(self) -> dict:
        """Effective configuration as echoed into the pond; tokens redacted."""
        return {
            "fail_on": self.fail_on.label,
            "max_findings": {sev.label: n for sev, n in sorted(self.max_findings.items())},
            "severity_overrides": {s.slug: sev.label for s, sev in sorted(self.severity_overrides.items())},
            "ignore": [r.to_dict() for r in self.ignore],
            "mode": self.mode.value,
            "fixtures": str(self.fixtures) if self.fixtures else None,
            "tag_patterns": list(self.tag_patterns),
            "keyservers": list(self.keyservers),
            "keyring": str(self.keyring) if self.keyring else None,
            "workers": self.workers,
            "indeterminate_budget": self.indeterminate_budget,
            "comment_max_chars": self.comment_max_chars,
            "tokens": self.tokens.redacted(),
        }


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _as_date(value) -> date:
    if isinstance(value, datetime):
        return value.date()
    if isinstance(value, date):
        return value
    return date.fromisoformat(str(value).strip())


class _FieldParser:
    """Turns raw layer values into typed GateConfig fields, collecting errors per field."""

    def __init__(self):
        self.errors: list[str] = []

    def _fail(self, name: str, message: str) -> None:
        self.errors.append(f"{name}: {message}")

    def parse(self, values: Mapping) -> dict:
        out = {}
        for name, raw in values.items():
            if raw is None:
                continue
            if name not in CONFIG_KEYS:
                self._fail(name, "unknown setting")
                continue
            try:
                out[name] = getattr(self, f"_{name}")(raw)
            except (ValueError, TypeError, KeyError) as exc:
                self._fail(name, str(exc) or type(exc).__name__)
        return out

    @staticmethod
    def _fail_on(raw) -> Severity:
        return Severity.parse(raw)

    @staticmethod
    def _max_findings(raw) -> dict[Severity, int]:
        if not isinstance(raw, Mapping):
            raise TypeError("expected a mapping of severity to count")
        limits = {}
        for sev, n in raw.items():
            n = int(n)
            if n < 0:
                raise ValueError(f"threshold for {sev} must be >= 0")
            limits[Severity.parse(sev)] = n
        return limits

    @staticmethod
    def _severity_overrides(raw) -> dict[SmellId, Severity]:
        if not isinstance(raw, Mapping):
            raise TypeError("expected a mapping of smell to severity")
        return {SmellId.parse(s): Severity.parse(sev) for s, sev in raw.items()}

    @staticmethod
    def _ignore(raw) -> tuple[IgnoreRule, ...]:
        if not isinstance(raw, list):
            raise TypeError("expected a list of ignore entries")
        rules = []
        for i, entry in enumerate(raw):
            if not isinstance(entry, Mapping):
                raise TypeError(f"entry {i} is not a mapping")
            missing = [k for k in ("package", "smell", "expires", "justification") if not entry.get(k)]
            if missing:
                raise ValueError(f"entry {i} lacks {', '.join(missing)}")
            justification = str(entry["justification"]).strip()
            if not justification:
                raise ValueError(f"entry {i} has an empty justification")
            rules.append(IgnoreRule(
                package=str(entry["package"]),
                smell=SmellId.parse(entry["smell"]),
                expires=_as_date(entry["expires"]),
                justification=justification,
            ))
        return tuple(rules)

    @staticmethod
    def _mode(raw) -> FetchMode:
        if isinstance(raw, FetchMode):
            return raw
        return FetchMode(str(raw).strip().lower())

    @staticmethod
    def _fixtures(raw) -> Path:
        return Path(str(raw))

    @staticmethod
    def _keyring(raw) -> Path:
        return Path(str(raw))

    @staticmethod
    def _tag_patterns(raw) -> tuple[str, ...]:
        if isinstance(raw, str) or not isinstance(raw, list):
            raise TypeError("expected a list of patterns")
        for pattern in raw:
            fields = pattern_placeholders(str(pattern))
            if "version" not in fields:
                raise ValueError(f"pattern {pattern!r} has no {{version}}")
            unknown = fields - TAG_PLACEHOLDERS
            if unknown:
                raise ValueError(f"pattern {pattern!r} uses unknown placeholders {sorted(unknown)}")
        return tuple(str(p) for p in raw)

    @staticmethod
    def _keyservers(raw) -> tuple[str, ...]:
        if isinstance(raw, str) or not isinstance(raw, list):
            raise TypeError("expected a list of URLs")
        return tuple(str(s).rstrip("/") for s in raw)

    @staticmethod
    def _workers(raw) -> int:
        n = int(raw)
        if n < 1:
            raise ValueError("must be >= 1")
        return n

    @staticmethod
    def _indeterminate_budget(raw) -> float:
        budget = float(raw)
        if not 0.0 <= budget <= 1.0:
            raise ValueError("must be between 0 and 1")
        return budget

    @staticmethod
    def _comment_max_chars(raw) -> int:
        return int(raw)


def read_config_file(path: Path) -> dict:
    yaml = YAML(typ="safe")
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.load(fh)
    except OSError as exc:
        raise ConfigError([f"config file: cannot read {path} ({exc})"]) from exc
    except YAMLError as exc:
        raise ConfigError([f"config file: {path} is not valid YAML ({exc})"]) from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError([f"config file: expected a mapping at the top of {path}"])
    return data


def load_config(
    path: Optional[Path] = None,
    env: Optional[Mapping[str, str]] = None,
    overrides: Optional[Mapping] = None,
    today: Optional[date] = None,
    from_prefect_blocks: bool = False,
) -> GateConfig:
    env = os.environ if env is None else env
    today = today or date.today()
    parser = _FieldParser()

    layers = [parser.parse(read_config_file(Path(path)))] if path else []
    layers.append(parser.parse({name: env.get(var) or None for name, var in ENV_VARS.items()}))
    layers.append(parser.parse(dict(overrides or {})))
    if parser.errors:
        raise ConfigError(parser.errors)

    merged: dict = {}
    for layer in layers:
        merged.update(layer)
    config = GateConfig(**merged, tokens=load_tokens(from_prefect_blocks=from_prefect_blocks, env=env))

    if config.mode in (FetchMode.OFFLINE, FetchMode.RECORD) and config.fixtures is None:
        raise ConfigError([f"fixtures: {config.mode.value} mode needs a fixtures directory"])
    expired = [r for r in config.ignore if r.expires < today]
    if expired:
        raise ExpiredIgnore(expired, today)
    logger.info(
        f"Config: fail_on={config.fail_on.label} mode={config.mode.value} "
        f"ignores={len(config.ignore)} file={path or '-'}"
    )
    return config


# ---------------------------------------------------------------------------
# Gate
# ---------------------------------------------------------------------------

def apply_ignores(findings: Iterable[SmellFinding], rules: Iterable[IgnoreRule]) -> tuple[SmellFinding, ...]:
    """Annotate findings matched by an ignore rule; ignored findings stay in the result."""
    rules = list(rules)
    out = []
    for f in findings:
        rule = next((r for r in rules if r.matches(f)), None)
        out.append(replace(f, ignored_reason=rule.justification) if rule and not f.ignored else f)
    return tuple(out)


@dataclass(frozen=True)
class GateDecision:
    exit_code: int
    reasons: tuple[str, ...] = ()
    triggering: tuple[SmellFinding, ...] = ()

    @property
    def passed(self) -> bool:
        return self.exit_code == EXIT_PASS

    def describe(self, color: bool = False) -> list[str]:
        verdict = {EXIT_PASS: "PASS", EXIT_FAIL: "FAIL", EXIT_ERROR: "ERROR"}[self.exit_code]
        if color:
            verdict = f"{_ANSI[self.exit_code]}{verdict}\033[0m"
        lines = [f"supply chain gate: {verdict} (exit {self.exit_code})"]
        lines += [f"  {reason}" for reason in self.reasons]
        for f in self.triggering:
            lines.append(f"  [{f.severity.label}] {f.smell.title}: {f.coordinate.display}: {f.evidence}")
        return lines


def indeterminate_share(pond: DirtyPond) -> tuple[int, int]:
    """(indeterminate registry packages, registry packages)."""
    remote = set(pond.tree.remote_nodes())
    return len(pond.indeterminate_packages() & remote), len(remote)


def evaluate_gate(pond: DirtyPond, config: GateConfig) -> GateDecision:
    unknown, remote = indeterminate_share(pond)
    if remote and unknown / remote > config.indeterminate_budget:
        return GateDecision(EXIT_ERROR, (
            f"{unknown} of {remote} packages are indeterminate, above the budget of "
            f"{config.indeterminate_budget:.0%}",
        ))

    annotated = apply_ignores(pond.findings, config.ignore)
    active = [
        replace(f, severity=config.severity_overrides.get(f.smell, f.severity))
        for f in annotated
        if not f.ignored
    ]
    reasons: list[str] = []
    triggering = [f for f in active if f.severity >= config.fail_on]
    if triggering:
        reasons.append(f"{len(triggering)} findings at or above {config.fail_on.label}")
    for sev, limit in sorted(config.max_findings.items()):
        hits = [f for f in active if f.severity is sev]
        if len(hits) > limit:
            reasons.append(f"{len(hits)} {sev.label} findings exceed the threshold of {limit}")
            triggering += [f for f in hits if f not in triggering]

    if reasons:
        return GateDecision(EXIT_FAIL, tuple(reasons), tuple(sorted(triggering, key=SmellFinding.sort_key)))
    skipped = sum(1 for f in annotated if f.ignored)
    return GateDecision(EXIT_PASS, (
        f"{len(active)} active findings below {config.fail_on.label}; {skipped} ignored",
    ))