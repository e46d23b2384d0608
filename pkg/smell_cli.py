"""
Command-line entry point.

  smell_cli.py analyze --ecosystem {npm,maven} --manifest PATH [--mode live|offline|record]
                       [--fixtures DIR] [--pond PATH] [--report PATH] [--ci-comment PATH]
                       [--fail-on SEVERITY] [--config PATH] [--run-maven] [--workers N]
                       [--format markdown|pond-only]
  smell_cli.py report POND [--output PATH] [--ci-comment PATH] [--max-chars N]
  smell_cli.py aggregate POND... [--out DIR]
  smell_cli.py --version

analyze exits 0 (pass), 1 (gate failed) or 2 (operational error). Without
--report the Markdown report goes to stdout; with --format pond-only stdout
carries the pond JSON instead. The gate decision always goes to stderr,
coloured when stderr is a terminal and NO_COLOR is unset.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Mapping, Optional

from ci_gate import EXIT_ERROR, EXIT_PASS, load_config
from dirty_pond import dumps_pond, read_pond
from prevalence_aggregator import aggregate, load_ponds, render_distribution, write_distribution
from report_gen import COMMENT_MAX_CHARS, CommentLimits, render_ci_comment, render_report
from shared import FetchMode
from smell_analysis_flow import OutputPaths, ProjectInput, run_analysis
from smell_model import TOOL_NAME, TOOL_VERSION, Ecosystem, Severity, SmellFlowError

DEFAULT_POND = "dirty-pond.json"


def use_color(stream, env: Mapping[str, str]) -> bool:
    return not env.get("NO_COLOR") and hasattr(stream, "isatty") and stream.isatty()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=TOOL_NAME, description="Detect software supply chain smells in NPM and Maven dependency trees."
    )
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="analyze one project and apply the CI gate")
    analyze.add_argument("--ecosystem", required=True, choices=[e.value for e in Ecosystem])
    analyze.add_argument("--manifest", required=True, type=Path,
                         help="package-lock.json (or its directory) / dependency:tree output (or pom directory)")
    analyze.add_argument("--mode", choices=[m.value for m in FetchMode], default=None)
    analyze.add_argument("--fixtures", type=Path, default=None, help="fixture directory for offline/record")
    analyze.add_argument("--pond", type=Path, default=Path(DEFAULT_POND))
    analyze.add_argument("--report", type=Path, default=None)
    analyze.add_argument("--ci-comment", type=Path, default=None)
    analyze.add_argument("--fail-on", choices=[s.label.lower() for s in Severity], default=None)
    analyze.add_argument("--config", type=Path, default=None)
    analyze.add_argument("--run-maven", action="store_true", help="run `mvn dependency:tree` in the manifest directory")
    analyze.add_argument("--workers", type=int, default=None)
    analyze.add_argument("--format", choices=["markdown", "pond-only"], default="markdown")

    report = sub.add_parser("report", help="render the report of an existing pond")
    report.add_argument("pond", type=Path)
    report.add_argument("--output", type=Path, default=None)
    report.add_argument("--ci-comment", type=Path, default=None)
    report.add_argument("--max-chars", type=int, default=COMMENT_MAX_CHARS)

    agg = sub.add_parser("aggregate", help="per-ecosystem smell distribution over many ponds")
    agg.add_argument("ponds", nargs="*", type=Path)
    agg.add_argument("--out", type=Path, default=None)
    return parser


def _analyze(args: argparse.Namespace, env: Mapping[str, str]) -> int:
    overrides = {
        "mode": args.mode,
        "fixtures": args.fixtures,
        "fail_on": args.fail_on,
        "workers": args.workers,
    }
    try:
        config = load_config(args.config, env, {k: v for k, v in overrides.items() if v is not None})
    except SmellFlowError as exc:
        print(f"{TOOL_NAME}: {exc}", file=sys.stderr)
        return EXIT_ERROR

    project = ProjectInput(Ecosystem(args.ecosystem), args.manifest, args.run_maven)
    outputs = OutputPaths(pond=args.pond, report=args.report, ci_comment=args.ci_comment)
    pond, code = run_analysis(project, config, outputs, color=use_color(sys.stderr, env), env=env)
    if pond is not None:
        if args.format == "pond-only":
            sys.stdout.write(dumps_pond(pond))
        elif args.report is None:
            sys.stdout.write(render_report(pond))
    return code


def _report(args: argparse.Namespace) -> int:
    try:
        pond = read_pond(args.pond)
    except SmellFlowError as exc:
        print(f"{TOOL_NAME}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    text = render_report(pond)
    if args.output:
        args.output.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.ci_comment:
        args.ci_comment.write_text(
            render_ci_comment(pond, CommentLimits(args.max_chars, args.pond.name)), encoding="utf-8"
        )
    return EXIT_PASS


def _aggregate(args: argparse.Namespace) -> int:
    try:
        reports = aggregate(load_ponds(args.ponds))
    except SmellFlowError as exc:
        print(f"{TOOL_NAME}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    text, _ = render_distribution(reports)
    sys.stdout.write(text)
    if args.out:
        write_distribution(reports, args.out)
    return EXIT_PASS


def main(argv: Optional[list[str]] = None, env: Optional[Mapping[str, str]] = None) -> int:
    env = os.environ if env is None else env
    args = build_parser().parse_args(argv)
    if args.command == "analyze":
        return _analyze(args, env)
    if args.command == "report":
        return _report(args)
    return _aggregate(args)


if __name__ == "__main__":
    sys.exit(main())
