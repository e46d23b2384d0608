"""
Prevalence of smells across many ponds, per ecosystem.

Every registry package that appears in any analyzed dependency tree is counted
once, independent of which project pulled it in. Each pond gives a package a
verdict per supported smell: found (ignored findings included), clean, or no
verdict when the check was Indeterminate. The most recent pond with a verdict
on a (package, smell) decides it, so an Indeterminate run never clears an older
finding. Disagreements between verdicts are listed as conflicts; packages no
pond could decide for a smell are counted as undetermined, outside the count.

Outputs:
  <out>/prevalence.txt       distribution table, one block per ecosystem
  <out>/prevalence.parquet   plot-ready rows (ecosystem, smell, count, percentage, ...)
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import pandas as pd

from dirty_pond import DirtyPond, read_pond
from smell_model import (
    Ecosystem,
    PackageCoordinate,
    SmellId,
    format_timestamp,
    is_supported,
)

logger = logging.getLogger(__name__)

DISTRIBUTION_TEXT = "prevalence.txt"
DISTRIBUTION_DATA = "prevalence.parquet"
LOAD_WORKERS = 8

DISTRIBUTION_COLUMNS = [
    "ecosystem", "smell_id", "smell", "supported", "count", "total_unique_packages", "percentage",
    "undetermined",
]


@dataclass(frozen=True)
class SmellShare:
    count: int
    fraction: Fraction


@dataclass(frozen=True, order=True)
class PondSource:
    analyzed_at: datetime
    project: PackageCoordinate

    def describe(self) -> str:
        return f"{self.project.display} ({format_timestamp(self.analyzed_at)})"


@dataclass(frozen=True)
class VerdictConflict:
    coordinate: PackageCoordinate
    older: frozenset[SmellId]
    newer: frozenset[SmellId]
    older_source: PondSource
    newer_source: PondSource

    def describe(self) -> str:
        def names(smells: frozenset[SmellId]) -> str:
            return ", ".join(s.title for s in sorted(smells)) or "clean"

        return (
            f"{self.coordinate.display}: {names(self.older)} in {self.older_source.describe()}, "
            f"{names(self.newer)} in {self.newer_source.describe()} (newer kept)"
        )


@dataclass(frozen=True)
class PrevalenceReport:
    ecosystem: Ecosystem
    total_unique_packages: int
    per_smell: dict[SmellId, SmellShare]
    unsupported: frozenset[SmellId]
    source_ponds: tuple[PondSource, ...] = ()
    conflicts: tuple[VerdictConflict, ...] = ()
    undetermined: dict[SmellId, int] = field(default_factory=dict)

    __hash__ = None

    def __post_init__(self) -> None:
        for smell in self.undetermined:
            if smell not in self.per_smell:
                raise ValueError(f"{smell.title}: undetermined count for a smell without a share")
        for smell, share in self.per_smell.items():
            if smell in self.unsupported:
                raise ValueError(f"{smell.title} is unsupported for {self.ecosystem.value} and carries no count")
            unknown = self.undetermined.get(smell, 0)
            if share.count + unknown > self.total_unique_packages:
                raise ValueError(
                    f"{smell.title}: count {share.count} + {unknown} undetermined exceeds "
                    f"{self.total_unique_packages} packages"
                )
            expected = Fraction(share.count, self.total_unique_packages) if self.total_unique_packages else Fraction(0)
            if share.fraction != expected:
                raise ValueError(f"{smell.title}: fraction {share.fraction} != {expected}")


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def pond_verdicts(pond: DirtyPond) -> dict[PackageCoordinate, dict[SmellId, bool]]:
    """Per remote package, found (True) or clean (False) for every supported smell it decided."""
    eco = pond.ecosystem
    undecided = {(m.coordinate, m.smell) for m in pond.indeterminate}
    found = {(f.coordinate, f.smell) for f in pond.findings}
    return {
        coord: {
            smell: (coord, smell) in found
            for smell in SmellId
            if is_supported(smell, eco) and (coord, smell) not in undecided
        }
        for coord in pond.tree.remote_nodes()
    }


def _aggregate_ecosystem(eco: Ecosystem, ponds: list[DirtyPond]) -> PrevalenceReport:
    ordered = sorted(ponds, key=lambda p: (p.analyzed_at, p.project.sort_key()))
    # (package, smell) -> (found, pond that decided it); packages map to {} until decided
    decided: dict[PackageCoordinate, dict[SmellId, tuple[bool, PondSource]]] = {}
    conflicts: list[VerdictConflict] = []
    sources = []
    for pond in ordered:
        source = PondSource(pond.analyzed_at, pond.project)
        sources.append(source)
        for coord, verdict in pond_verdicts(pond).items():
            held = decided.setdefault(coord, {})
            conflicts += _conflicts(coord, held, verdict, source)
            held.update({smell: (value, source) for smell, value in verdict.items()})

    total = len(decided)
    per_smell = {}
    undetermined = {}
    for smell in SmellId:
        if not is_supported(smell, eco):
            continue
        count = sum(1 for held in decided.values() if held.get(smell, (False,))[0])
        per_smell[smell] = SmellShare(count, Fraction(count, total) if total else Fraction(0))
        undetermined[smell] = sum(1 for held in decided.values() if smell not in held)
    return PrevalenceReport(
        ecosystem=eco,
        total_unique_packages=total,
        per_smell=per_smell,
        unsupported=frozenset(s for s in SmellId if not is_supported(s, eco)),
        source_ponds=tuple(sources),
        conflicts=tuple(sorted(conflicts, key=lambda c: (c.coordinate.sort_key(), c.newer_source, c.older_source))),
        undetermined=undetermined,
    )


def _conflicts(
    coord: PackageCoordinate,
    held: dict[SmellId, tuple[bool, PondSource]],
    verdict: dict[SmellId, bool],
    source: PondSource,
) -> list[VerdictConflict]:
    """One conflict per older pond whose verdicts the newer pond contradicts."""
    by_source: dict[PondSource, list[SmellId]] = {}
    for smell in verdict:
        if smell in held:
            by_source.setdefault(held[smell][1], []).append(smell)
    out = []
    for older_source, smells in sorted(by_source.items()):
        older = frozenset(s for s in smells if held[s][0])
        newer = frozenset(s for s in smells if verdict[s])
        if older != newer:
            out.append(VerdictConflict(coord, older, newer, older_source, source))
    return out


def aggregate(ponds: Iterable[DirtyPond]) -> list[PrevalenceReport]:
    """One report per ecosystem present, in Ecosystem order."""
    by_eco: dict[Ecosystem, list[DirtyPond]] = {}
    for pond in ponds:
        by_eco.setdefault(pond.ecosystem, []).append(pond)
    return [_aggregate_ecosystem(eco, by_eco[eco]) for eco in Ecosystem if eco in by_eco]


def load_ponds(paths: Sequence[Union[str, Path]], max_workers: int = LOAD_WORKERS) -> list[DirtyPond]:
    """Read and validate pond files in parallel; the first bad file raises."""
    if not paths:
        return []
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(read_pond, [Path(p) for p in paths]))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def format_percentage(share: SmellShare) -> str:
    """Percentage rounded half-up to one decimal, computed from the exact fraction."""
    value = Decimal(share.fraction.numerator * 100) / Decimal(share.fraction.denominator)
    return f"{value.quantize(Decimal('0.1'), rounding=ROUND_HALF_UP)}%"


def distribution_frame(reports: Sequence[PrevalenceReport]) -> pd.DataFrame:
    rows = []
    for report in reports:
        for smell in SmellId:
            share = report.per_smell.get(smell)
            unknown: Optional[int] = report.undetermined.get(smell, 0) if share else None
            rows.append({
                "ecosystem": report.ecosystem.value,
                "smell_id": int(smell),
                "smell": smell.title,
                "supported": share is not None,
                "count": share.count if share else None,
                "total_unique_packages": report.total_unique_packages,
                "percentage": float(format_percentage(share).rstrip("%")) if share else None,
                "undetermined": unknown,
            })
    df = pd.DataFrame(rows, columns=DISTRIBUTION_COLUMNS)
    df["count"] = df["count"].astype("Int64")
    df["percentage"] = df["percentage"].astype("float64")
    df["undetermined"] = df["undetermined"].astype("Int64")
    return df


def render_distribution(reports: Sequence[PrevalenceReport]) -> tuple[str, pd.DataFrame]:
    df = distribution_frame(reports)
    if not reports:
        return "No ponds to aggregate.\n", df

    width = max(len(s.title) for s in SmellId)
    lines = []
    for report in reports:
        lines.append(
            f"{report.ecosystem.value}: {report.total_unique_packages} unique packages "
            f"from {len(report.source_ponds)} ponds"
        )
        lines.append(f"  {'#':>2}  {'Smell':<{width}}  {'Count':>7}  {'Share':>7}  {'Unknown':>7}")
        for smell in SmellId:
            share = report.per_smell.get(smell)
            count = str(share.count) if share else "n/a"
            pct = format_percentage(share) if share else "n/a"
            unknown = str(report.undetermined.get(smell, 0)) if share else "n/a"
            lines.append(f"  {int(smell):>2}  {smell.title:<{width}}  {count:>7}  {pct:>7}  {unknown:>7}")
        if report.conflicts:
            lines.append(f"  {len(report.conflicts)} conflicting verdicts:")
            lines += [f"    {c.describe()}" for c in report.conflicts]
        lines.append("")
    return "\n".join(lines), df


def write_distribution(reports: Sequence[PrevalenceReport], out_dir: Union[str, Path]) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text, df = render_distribution(reports)
    text_path = out_dir / DISTRIBUTION_TEXT
    data_path = out_dir / DISTRIBUTION_DATA
    text_path.write_text(text, encoding="utf-8")
    df.to_parquet(data_path, index=False, engine="pyarrow")
    logger.info(f"Wrote {text_path} and {data_path} ({len(df)} rows)")
    return text_path, data_path
