"""
Supply chain smell analysis for one project, as a Prefect flow.

Stages (one task each):
  extract_dependencies   lockfile / dependency:tree output -> DependencyTree
  fetch_package_facts    registry + repository facts per package, submitted on a
                         ThreadPoolTaskRunner (config.workers threads). All workers
                         share one FetchClient, so a response is fetched once per run.
  detect_package_smells  findings, Indeterminate markers and notes; ignores applied
  write_outputs          pond, Markdown report, CI comment

run_analysis() is the entry point used by the CLI and the CI workflow. It always
returns an exit code in {0, 1, 2} and prints the gate decision to stderr.

Fetch failures other than a missing offline fixture degrade to Indeterminate
markers; a missing fixture aborts the run (exit 2).

Run manually:
  python smell_cli.py analyze --ecosystem npm --manifest path/to/package-lock.json

Reproducible ponds: set SOURCE_DATE_EPOCH (seconds) to pin every timestamp.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Optional

from prefect import flow, get_run_logger, task
from prefect.cache_policies import NO_CACHE
from prefect.task_runners import ThreadPoolTaskRunner

from ci_gate import EXIT_ERROR, ConfigError, GateConfig, GateDecision, apply_ignores, evaluate_gate
from dirty_pond import DirtyPond, FetchProvenance, write_pond
from manifest_extractor import DependencyTree, load_dependency_tree
from registry_client import Keyring, RegistryFacts, fetch_registry_facts
from repo_client import fetch_repo_facts
from report_gen import CommentLimits, render_ci_comment, render_report
from shared import FetchClient, FixtureMissing, FixtureStore, NetworkError
from smell_engine import PackageFacts, detect
from smell_model import Ecosystem, PackageCoordinate, to_utc_second, utc_now

SOURCE_DATE_EPOCH_ENV = "SOURCE_DATE_EPOCH"


@dataclass(frozen=True)
class ProjectInput:
    ecosystem: Ecosystem
    manifest: Path
    run_build_tool: bool = False  # Maven only: run `mvn dependency:tree` in the manifest directory


@dataclass(frozen=True)
class OutputPaths:
    pond: Optional[Path] = None
    report: Optional[Path] = None
    ci_comment: Optional[Path] = None


def source_date_epoch(env: Optional[Mapping[str, str]] = None) -> Optional[int]:
    """Seconds since the epoch from SOURCE_DATE_EPOCH, or None when unset. Raises ConfigError."""
    env = os.environ if env is None else env
    raw = (env.get(SOURCE_DATE_EPOCH_ENV) or "").strip()
    if not raw:
        return None
    try:
        epoch = int(raw)
    except ValueError:
        raise ConfigError([f"{SOURCE_DATE_EPOCH_ENV}: expected whole seconds since 1970-01-01 UTC, got {raw!r}"]) from None
    if epoch < 0:
        raise ConfigError([f"{SOURCE_DATE_EPOCH_ENV}: must not be negative, got {raw!r}"])
    return epoch


def make_clock(epoch: Optional[int]) -> Callable[[], datetime]:
    if epoch is None:
        return utc_now
    fixed = to_utc_second(datetime.fromtimestamp(epoch, tz=timezone.utc))
    return lambda: fixed


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------

@task(cache_policy=NO_CACHE)
def extract_dependencies(project: ProjectInput) -> tuple[DependencyTree, Optional[list[str]]]:
    logger = get_run_logger()
    logger.info(f"Extracting {project.ecosystem.value} dependencies from {project.manifest}...")
    tree, command = load_dependency_tree(project.ecosystem, project.manifest, project.run_build_tool)
    direct = len(tree.direct_dependencies())
    remote = len(tree.remote_nodes())
    logger.info(
        f"  {tree.project.display}: {len(tree.nodes)} packages ({direct} direct, "
        f"{len(tree.nodes) - remote} local), {len(tree.aliases)} aliases"
    )
    return tree, command


@task(cache_policy=NO_CACHE)
def fetch_package_facts(
    coord: PackageCoordinate,
    client: FetchClient,
    keyring: Keyring,
    tag_patterns: tuple[str, ...],
    clock: Callable[[], datetime],
) -> PackageFacts:
    """Registry facts, then repository facts when a source URL is known."""
    logger = get_run_logger()
    try:
        registry = fetch_registry_facts(coord, client, keyring, clock)
    except FixtureMissing:
        raise
    except NetworkError as exc:
        logger.warning(f"{coord.display}: registry unavailable ({exc})")
        registry = RegistryFacts.unavailable(coord, str(exc), clock())

    repo = None
    if registry.source_url:
        repo = fetch_repo_facts(
            registry.source_url, coord.version, registry.sha_hint, client,
            name=coord.name, ecosystem=coord.ecosystem, extra_patterns=tag_patterns,
        )
    problems = len(registry.fetch_errors) + (len(repo.fetch_errors) if repo else 0)
    if problems:
        logger.warning(f"{coord.display}: {problems} facet lookups failed")
    return PackageFacts(coord, registry, repo)


@task(cache_policy=NO_CACHE)
def detect_package_smells(tree: DependencyTree, facts: list[PackageFacts], config: GateConfig):
    logger = get_run_logger()
    policy = config.policy()
    findings, indeterminate, notes = [], [], []
    for f in facts:
        result = detect(f, tree, policy)
        findings += result.findings
        indeterminate += result.indeterminate
        notes += result.notes
    findings = apply_ignores(findings, config.ignore)
    ignored = sum(1 for f in findings if f.ignored)
    logger.info(
        f"Detected {len(findings)} smells ({ignored} ignored), "
        f"{len(indeterminate)} indeterminate checks, {len(notes)} notes"
    )
    return findings, indeterminate, notes


@task(cache_policy=NO_CACHE)
def write_outputs(pond: DirtyPond, outputs: OutputPaths, config: GateConfig) -> None:
    logger = get_run_logger()
    if outputs.pond:
        write_pond(pond, outputs.pond)
        logger.info(f"Wrote pond: {outputs.pond}")
    if outputs.report:
        outputs.report.parent.mkdir(parents=True, exist_ok=True)
        outputs.report.write_text(render_report(pond), encoding="utf-8")
        logger.info(f"Wrote report: {outputs.report}")
    if outputs.ci_comment:
        artifact = outputs.pond.name if outputs.pond else "dirty-pond.json"
        comment = render_ci_comment(pond, CommentLimits(config.comment_max_chars, artifact))
        outputs.ci_comment.parent.mkdir(parents=True, exist_ok=True)
        outputs.ci_comment.write_text(comment, encoding="utf-8")
        logger.info(f"Wrote CI comment ({len(comment)} chars): {outputs.ci_comment}")


# ---------------------------------------------------------------------------
# Flow
# ---------------------------------------------------------------------------

@flow(name="Supply Chain Smell Analysis", validate_parameters=False)
def smell_analysis_flow(
    project: ProjectInput,
    config: GateConfig,
    outputs: OutputPaths = OutputPaths(),
    epoch: Optional[int] = None,
) -> tuple[DirtyPond, GateDecision]:
    """
    Analyze one project and decide the gate.

    Args:
        project: ecosystem + manifest path.
        config: effective GateConfig (load_config()).
        outputs: where to write pond, report and CI comment; None skips a file.
        epoch: pins every timestamp to this UNIX time (SOURCE_DATE_EPOCH).
    """
    logger = get_run_logger()
    logger.info("=" * 60)
    logger.info(f"Starting supply chain smell analysis: {project.manifest}")
    logger.info("=" * 60)

    clock = make_clock(epoch)
    tree, command = extract_dependencies(project)

    fixtures = FixtureStore(config.fixtures) if config.fixtures else None
    client = FetchClient(config.mode, fixtures, config.tokens)
    keyring = Keyring(client, config.keyservers, config.keyring)

    coords = tree.remote_nodes()
    logger.info(f"Fetching facts for {len(coords)} packages ({config.mode.value}, {config.workers} workers)...")
    futures = [
        fetch_package_facts.submit(c, client, keyring, config.tag_patterns, clock) for c in coords
    ]
    facts = [f.result() for f in futures]
    logger.info(f"  {client.request_count} distinct responses, {client.network_requests} network requests")

    findings, indeterminate, notes = detect_package_smells(tree, facts, config)
    pond = DirtyPond(
        project=tree.project,
        analyzed_at=clock(),
        tree=tree,
        facts=tuple(facts),
        findings=tuple(findings),
        indeterminate=tuple(indeterminate),
        notes=tuple(notes),
        config=config.to_dict(),
        fetch=FetchProvenance(config.mode.value, client.request_count, client.log_digest()),
        command=tuple(command) if command else None,
    )
    decision = evaluate_gate(pond, config)
    write_outputs(pond, outputs, config)

    logger.info("=" * 60)
    logger.info(
        f"Done: {pond.summary.total_findings} smells on {pond.summary.affected_packages} packages, "
        f"gate exit {decision.exit_code}"
    )
    logger.info("=" * 60)
    return pond, decision


def run_analysis(
    project_input: ProjectInput,
    config: GateConfig,
    outputs: OutputPaths = OutputPaths(),
    now: Optional[datetime] = None,
    stream=None,
    color: bool = False,
    env: Optional[Mapping[str, str]] = None,
) -> tuple[Optional[DirtyPond], int]:
    """
    Run the flow and map every outcome to (pond or None, exit code in {0, 1, 2}).

    `now` pins the clock; otherwise SOURCE_DATE_EPOCH is read from `env`
    (os.environ when None). A malformed value is an error run, not a crash.
    """
    stream = stream or sys.stderr
    runner = smell_analysis_flow.with_options(task_runner=ThreadPoolTaskRunner(max_workers=config.workers))
    try:
        epoch = int(now.timestamp()) if now is not None else source_date_epoch(env)
        pond, decision = runner(project_input, config, outputs, epoch)
    except Exception as exc:
        print(f"supply chain gate: ERROR (exit {EXIT_ERROR})\n  {type(exc).__name__}: {exc}", file=stream)
        return None, EXIT_ERROR
    for line in decision.describe(color=color):
        print(line, file=stream)
    return pond, decision.exit_code
