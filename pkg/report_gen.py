"""
Markdown report for one dirty pond.

Layout, top to bottom:
  1. title and "how to read this report" preamble
  2. summary table: every smell with severity, package count and support per ecosystem
  3. one section per smell: context, attack vectors, affected packages with
     registry and repository links, evidence; clean and unsupported smells
     are listed too
  4. Call to Action for every smell with at least one finding
  5. Indeterminate results, when any
  6. analysis notes (optional)

render_ci_comment() fits the same content into a character budget for a PR or
commit comment, dropping detail tier by tier and pointing at the pond artifact.
Both are pure functions of the pond.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional
from urllib.parse import quote

from dirty_pond import DirtyPond
from smell_engine import Confidence, SmellFinding
from smell_model import (
    ATTACK_VECTORS,
    INFORMATION_SOURCE,
    SMELL_CONTEXT,
    TOOL_NAME,
    Ecosystem,
    PackageCoordinate,
    Severity,
    SmellId,
    call_to_action,
    default_severity,
    format_timestamp,
    is_supported,
)

COLLAPSE_THRESHOLD = 50
COMMENT_MAX_CHARS = 65000
COMPACT_LIST_LIMIT = 10
DEFAULT_POND_ARTIFACT = "dirty-pond.json"

ECOSYSTEM_LABELS = {Ecosystem.NPM: "npm", Ecosystem.MAVEN: "Maven"}


@dataclass(frozen=True)
class ReportOptions:
    title: Optional[str] = None
    collapse_threshold: int = COLLAPSE_THRESHOLD
    include_notes: bool = True
    list_limit: Optional[int] = None          # cap per smell list; the rest is counted
    pond_artifact: Optional[str] = None       # named where lists are cut short


@dataclass(frozen=True)
class CommentLimits:
    max_chars: int = COMMENT_MAX_CHARS
    pond_artifact: str = DEFAULT_POND_ARTIFACT


# ---------------------------------------------------------------------------
# Links
# ---------------------------------------------------------------------------

def registry_link(coord: PackageCoordinate) -> str:
    if coord.ecosystem is Ecosystem.NPM:
        return f"https://www.npmjs.com/package/{quote(coord.name, safe='@/')}/v/{quote(coord.version, safe='')}"
    return f"https://central.sonatype.com/artifact/{coord.group_id}/{coord.artifact_id}/{quote(coord.version, safe='')}"


def repository_link(pond: DirtyPond, coord: PackageCoordinate) -> Optional[str]:
    facts = pond.facts_for(coord)
    return facts.registry.source_url if facts else None


def _cell(text: str) -> str:
    return text.replace("|", "\\|").replace("\n", " ")


def smell_severity(pond: DirtyPond, smell: SmellId) -> Severity:
    """Severity the analysis used for a smell: from its findings, else the echoed policy."""
    for f in pond.findings:
        if f.smell is smell:
            return f.severity
    overrides = pond.config.get("severity_overrides") or {}
    if smell.slug in overrides:
        return Severity.parse(overrides[smell.slug])
    return default_severity(smell)


def _findings_by_smell(pond: DirtyPond) -> dict[SmellId, list[SmellFinding]]:
    grouped: dict[SmellId, list[SmellFinding]] = {s: [] for s in SmellId}
    for f in pond.findings:
        grouped[f.smell].append(f)
    return grouped


# ---------------------------------------------------------------------------
# Report sections
# ---------------------------------------------------------------------------

def _preamble(pond: DirtyPond, options: ReportOptions) -> list[str]:
    eco = ECOSYSTEM_LABELS[pond.ecosystem]
    title = options.title or f"Software supply chain smells: {pond.project.display}"
    remote = len(pond.tree.remote_nodes())
    return [
        f"# {title}",
        "",
        f"Project `{pond.project.display}` ({eco}), {pond.summary.total_packages} packages in the dependency tree "
        f"({remote} fetched from the registry), analyzed {format_timestamp(pond.analyzed_at)} "
        f"with {TOOL_NAME} {pond.tool_version}.",
        "",
        "**How to read this report.**",
        "",
        "- A smell is a property of a dependency or its metadata that weakens trust in where it comes from. "
        "It is not a vulnerability, but it makes an attack easier to mount or harder to notice.",
        "- Each smell section says why the smell matters, lists the affected packages with links to the "
        "registry and to the source repository, and shows the observed evidence.",
        "- Severities are the defaults rated by practitioners unless the project configuration overrides them.",
        "- `not checked (unsupported)` marks smells the registry of this ecosystem cannot expose.",
        "- Indeterminate results could not be established because a lookup failed. They are not clean.",
        "- The absence of smells does not guarantee that a package is safe.",
        "",
    ]


def _summary_table(pond: DirtyPond) -> list[str]:
    s = pond.summary
    lines = [
        "## Summary",
        "",
        "| # | Smell | Severity | Packages | npm | Maven |",
        "|---|-------|----------|----------|-----|-------|",
    ]
    for smell in SmellId:
        if is_supported(smell, pond.ecosystem):
            count = str(s.per_smell[smell])
        else:
            count = "not checked (unsupported)"
        support = [
            "supported" if is_supported(smell, eco) else "unsupported" for eco in (Ecosystem.NPM, Ecosystem.MAVEN)
        ]
        lines.append(
            f"| {int(smell)} | {smell.title} | {smell_severity(pond, smell).label} | {count} | {support[0]} | {support[1]} |"
        )
    lines += [
        "",
        f"**{s.total_findings} smells on {s.affected_packages} of {s.total_packages} packages; "
        f"{s.indeterminate_count} indeterminate results; {s.ignored_count} ignored findings.**",
        "",
    ]
    if s.total_findings == 0:
        lines += ["No smells found in this dependency tree.", ""]
    return lines


def _package_line(pond: DirtyPond, finding: SmellFinding) -> str:
    coord = finding.coordinate
    line = f"- [`{coord.display}`]({registry_link(coord)})"
    repo = repository_link(pond, coord)
    if repo:
        line += f" ([repository]({repo}))"
    line += f": {finding.evidence}"
    if finding.confidence is Confidence.HEURISTIC:
        line += " _(heuristic)_"
    if finding.ignored:
        line += f" _(ignored: {finding.ignored_reason})_"
    return line


def _smell_section(pond: DirtyPond, smell: SmellId, findings: list[SmellFinding], options: ReportOptions) -> list[str]:
    lines = [
        f"### {int(smell)}. {smell.title}",
        "",
        f"_Severity: {smell_severity(pond, smell).label}. Information source: {INFORMATION_SOURCE[smell]}._",
        "",
        SMELL_CONTEXT[smell],
        "",
        "Related attack vectors: " + "; ".join(ATTACK_VECTORS[smell]) + ".",
        "",
    ]
    if not is_supported(smell, pond.ecosystem):
        eco = ECOSYSTEM_LABELS[pond.ecosystem]
        return lines + [f"Not checked (unsupported): the {eco} registry does not expose this information.", ""]
    if not findings:
        return lines + ["No packages with this smell.", ""]

    entries = [_package_line(pond, f) for f in findings]
    hidden = 0
    if options.list_limit is not None and len(entries) > options.list_limit:
        hidden = len(entries) - options.list_limit
        entries = entries[: options.list_limit]

    lines.append(f"**Affected packages ({len(findings)}):**")
    lines.append("")
    if len(entries) > options.collapse_threshold:
        lines += ["<details>", f"<summary>Show {len(entries)} packages</summary>", ""]
        lines += entries
        lines += ["", "</details>"]
    else:
        lines += entries
    if hidden:
        where = f" in `{options.pond_artifact}`" if options.pond_artifact else ""
        lines.append(f"- ... and {hidden} more{where}")
    lines.append("")
    return lines


def _call_to_action(pond: DirtyPond) -> list[str]:
    lines = ["## Call to Action", ""]
    smelly = [s for s in SmellId if pond.summary.per_smell[s] > 0]
    if not smelly:
        return lines + ["Nothing to act on. Keep this check in CI to catch new smells as dependencies change.", ""]
    for smell in smelly:
        n = pond.summary.per_smell[smell]
        lines += [f"- **{smell.title}** ({n} {'package' if n == 1 else 'packages'}): {call_to_action(smell)}"]
    return lines + [""]


def _indeterminate(pond: DirtyPond) -> list[str]:
    if not pond.indeterminate:
        return []
    lines = [
        "## Indeterminate results",
        "",
        f"{len(pond.indeterminate)} checks on {len(pond.indeterminate_packages())} packages could not be "
        "completed. Treat these packages as unchecked for the listed smells.",
        "",
        "| Package | Smell | Reason |",
        "|---------|-------|--------|",
    ]
    for m in pond.indeterminate:
        lines.append(f"| `{m.coordinate.display}` | {m.smell.title} | {_cell(m.reason)} |")
    return lines + [""]


def _notes(pond: DirtyPond) -> list[str]:
    if not pond.notes:
        return []
    lines = ["## Notes", ""]
    for n in pond.notes:
        lines.append(f"- `{n.coordinate.display}`: {n.message}")
    return lines + [""]


def render_report(pond: DirtyPond, options: ReportOptions = ReportOptions()) -> str:
    grouped = _findings_by_smell(pond)
    lines = _preamble(pond, options) + _summary_table(pond)
    lines += ["## Smells", ""]
    for smell in SmellId:
        lines += _smell_section(pond, smell, grouped[smell], options)
    lines += _call_to_action(pond)
    lines += _indeterminate(pond)
    if options.include_notes:
        lines += _notes(pond)
    return "\n".join(lines).rstrip("\n") + "\n"


# ---------------------------------------------------------------------------
# CI comment
# ---------------------------------------------------------------------------

def one_line_summary(pond: DirtyPond, pond_artifact: str = DEFAULT_POND_ARTIFACT) -> str:
    s = pond.summary
    return (
        f"{TOOL_NAME}: {s.total_findings} smells on {s.affected_packages} of {s.total_packages} packages "
        f"in {pond.project.display}, {s.indeterminate_count} indeterminate. Full results: {pond_artifact}\n"
    )


def _summary_and_actions(pond: DirtyPond, limits: CommentLimits) -> str:
    lines = [f"# Software supply chain smells: {pond.project.display}", ""]
    lines += _summary_table(pond)
    lines += _call_to_action(pond)
    lines += [f"Package lists and evidence are in the pond artifact `{limits.pond_artifact}`.", ""]
    return "\n".join(lines).rstrip("\n") + "\n"


def render_ci_comment(pond: DirtyPond, limits: CommentLimits = CommentLimits()) -> str:
    if limits.max_chars <= 0:
        return one_line_summary(pond, limits.pond_artifact)

    full = render_report(pond)
    if len(full) <= limits.max_chars:
        return full

    compact_options = ReportOptions(
        include_notes=False, list_limit=COMPACT_LIST_LIMIT, pond_artifact=limits.pond_artifact
    )
    compact = render_report(pond, compact_options)
    if len(compact) <= limits.max_chars:
        return compact

    short = _summary_and_actions(pond, limits)
    if len(short) <= limits.max_chars:
        return short
    return one_line_summary(pond, limits.pond_artifact)[: limits.max_chars]
