"""
Corpus prevalence study: analyze many projects, then aggregate their ponds.

Corpus file (YAML):
  projects:
    - name: express-app
      ecosystem: npm
      manifest: corpus/express-app/package-lock.json
    - name: spring-service
      ecosystem: maven
      manifest: corpus/spring-service/dependency-tree.txt
      run_build_tool: false

Each project runs as a smell_analysis_flow subflow with the shared config; a
project whose analysis fails is logged, counted per ecosystem, and left out of
the aggregate. Ponds land in <out_dir>/ponds/<name>.json, the distribution in
<out_dir>/prevalence.txt and <out_dir>/prevalence.parquet.

Run manually:
  python prevalence_flow.py --corpus corpus.yaml --out prevalence-out
"""

from __future__ import annotations

import argparse
import re
from pathlib import Path
from typing import Optional

from prefect import flow, get_run_logger
from prefect.task_runners import ThreadPoolTaskRunner
from ruamel.yaml import YAML

from ci_gate import load_config
from dirty_pond import read_pond
from prevalence_aggregator import aggregate, render_distribution, write_distribution
from smell_analysis_flow import OutputPaths, ProjectInput, smell_analysis_flow, source_date_epoch
from smell_model import Ecosystem, SmellFlowError


class CorpusError(SmellFlowError):
    pass


def load_corpus(path: Path) -> list[tuple[str, ProjectInput]]:
    yaml = YAML(typ="safe")
    with open(path, encoding="utf-8") as fh:
        data = yaml.load(fh) or {}
    projects = data.get("projects") if isinstance(data, dict) else None
    if not isinstance(projects, list):
        raise CorpusError(f"{path}: expected a 'projects' list")
    base = path.parent
    out = []
    for i, entry in enumerate(projects):
        try:
            manifest = Path(entry["manifest"])
            project = ProjectInput(
                ecosystem=Ecosystem(str(entry["ecosystem"]).lower()),
                manifest=manifest if manifest.is_absolute() else base / manifest,
                run_build_tool=bool(entry.get("run_build_tool", False)),
            )
            name = str(entry.get("name") or manifest.parent.name or f"project-{i}")
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"{path}: project {i} is invalid ({exc})") from exc
        out.append((re.sub(r"[^\w.-]", "_", name), project))
    names = [n for n, _ in out]
    if len(names) != len(set(names)):
        raise CorpusError(f"{path}: project names must be unique")
    return out


@flow(name="Supply Chain Smell Prevalence", validate_parameters=False)
def prevalence_flow(
    corpus: str,
    out_dir: str = "prevalence-out",
    config_path: Optional[str] = None,
) -> dict:
    """
    Analyze every corpus project and write the per-ecosystem smell distribution.

    Args:
        corpus: path to the corpus YAML.
        out_dir: output directory for ponds and distribution files.
        config_path: optional smell-flow config (fixtures, mode, workers, ...).
    """
    logger = get_run_logger()
    logger.info("=" * 60)
    logger.info("Starting supply chain smell prevalence study")
    logger.info("=" * 60)

    config = load_config(Path(config_path) if config_path else None, from_prefect_blocks=True)
    projects = load_corpus(Path(corpus))
    out = Path(out_dir)
    pond_dir = out / "ponds"
    epoch = source_date_epoch()
    analyze = smell_analysis_flow.with_options(task_runner=ThreadPoolTaskRunner(max_workers=config.workers))

    failures: dict[str, int] = {eco.value: 0 for eco in Ecosystem}
    pond_paths = []
    for name, project in projects:
        pond_path = pond_dir / f"{name}.json"
        try:
            analyze(project, config, OutputPaths(pond=pond_path), epoch)
        except Exception as exc:
            failures[project.ecosystem.value] += 1
            logger.error(f"{name}: analysis failed ({type(exc).__name__}: {exc})")
            continue
        pond_paths.append(pond_path)

    ponds = [read_pond(p) for p in pond_paths]
    reports = aggregate(ponds)
    write_distribution(reports, out)
    text, _ = render_distribution(reports)
    for line in text.splitlines():
        logger.info(line)

    logger.info("=" * 60)
    logger.info(f"Analyzed {len(ponds)} of {len(projects)} projects; failures: {failures}")
    logger.info("=" * 60)
    return {
        "projects": len(projects),
        "analyzed": len(ponds),
        "failures": failures,
        "unique_packages": {r.ecosystem.value: r.total_unique_packages for r in reports},
        "conflicts": sum(len(r.conflicts) for r in reports),
    }


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description="Run the smell prevalence study over a corpus file.")
    ap.add_argument("--corpus", required=True)
    ap.add_argument("--out", default="prevalence-out")
    ap.add_argument("--config", default=None)
    args = ap.parse_args()
    print(prevalence_flow(corpus=args.corpus, out_dir=args.out, config_path=args.config))
