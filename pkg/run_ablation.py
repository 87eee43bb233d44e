#!/usr/bin/env python3
"""
lesion-sense ablation trend check

Runs the fusion/loss ablation on synthetic corpora and checks that the mean
overall AUC ranks the variants as expected:

    global_pool+weighted          >= global_pool+plain + 0.02
    multiscale+weighted           >= global_pool+weighted
    multiscale+weighted_bootstrap >  multiscale+weighted

Usage:
    python run_ablation.py [--verbose] [--config FILE] [--seeds 0,1,2,3,4] [--out DIR]

Example:
    python run_ablation.py --verbose
    python run_ablation.py --seeds 0,1 --out runs/ablation-quick
"""
import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

# Add the project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from cli.ablation import AblationRunner, parse_seeds, parse_variants
from cli.config import load_run_config
from cli.logging_config import setup_logging

MIN_WEIGHTING_GAIN = 0.02

BASELINE = "global_pool+plain"
GLOBAL_WEIGHTED = "global_pool+weighted"
WEIGHTED = "multiscale+weighted"
BOOTSTRAP = "multiscale+weighted_bootstrap"


def check_trend(summary: List[Dict[str, object]]) -> List[str]:
    """Return the violated trend conditions (empty when the trend holds)."""
    overall: Dict[str, Optional[float]] = {
        str(entry["variant"]): entry["overall"] for entry in summary
    }
    failures = []
    for name in (BASELINE, GLOBAL_WEIGHTED, WEIGHTED, BOOTSTRAP):
        if overall.get(name) is None:
            failures.append(f"variant {name} has no overall AUC")
    if failures:
        return failures

    # one change per comparison: weighting, then fusion, then bootstrapping
    gain = overall[GLOBAL_WEIGHTED] - overall[BASELINE]
    if gain < MIN_WEIGHTING_GAIN:
        failures.append(
            f"{GLOBAL_WEIGHTED} improves on {BASELINE} by {gain:.4f} < {MIN_WEIGHTING_GAIN}"
        )
    if overall[WEIGHTED] < overall[GLOBAL_WEIGHTED]:
        failures.append(
            f"{WEIGHTED} ({overall[WEIGHTED]:.4f}) falls below "
            f"{GLOBAL_WEIGHTED} ({overall[GLOBAL_WEIGHTED]:.4f})"
        )
    if overall[BOOTSTRAP] <= overall[WEIGHTED]:
        failures.append(
            f"{BOOTSTRAP} ({overall[BOOTSTRAP]:.4f}) does not improve on "
            f"{WEIGHTED} ({overall[WEIGHTED]:.4f})"
        )
    return failures


def run(config: Path, seeds: str, out_dir: Optional[str], verbose: bool = False) -> bool:
    setup_logging("DEBUG" if verbose else "INFO")
    logger = logging.getLogger(__name__)

    overrides = [f"paths.output_dir={out_dir}"] if out_dir else []
    cfg = load_run_config(config, overrides)
    runner = AblationRunner(cfg, parse_variants(None), parse_seeds(seeds))

    logger.info(f"Starting ablation with {config}, seeds {runner.seeds}")
    start = time.perf_counter()
    summary = runner.run()
    elapsed = time.perf_counter() - start
    runner.write(Path(cfg.paths.output_dir))
    logger.info(f"Ablation finished in {elapsed:.0f}s", extra={"duration_ms": int(elapsed * 1000)})

    for entry in summary:
        logger.info(
            f"{entry['variant']}: overall={entry['overall']} body_part={entry['body_part']} "
            f"finding_type={entry['finding_type']} attribute={entry['attribute']}"
        )

    failures = check_trend(summary)
    if failures:
        for failure in failures:
            logger.error(f"Trend violated: {failure}")
        return False
    logger.info("Ablation trend holds")
    return True


def main():
    """Main entry point."""
    parser = argparse.ArgumentParser(
        description="Run the lesion-sense fusion/loss ablation and check its trend",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "--verbose", "-v", action="store_true", help="Enable debug logging"
    )
    parser.add_argument(
        "--config",
        type=Path,
        default=project_root / "configs" / "ablation.cfg",
        help="Ablation config file",
    )
    parser.add_argument("--seeds", default="0,1,2,3,4", help="Comma-separated seeds")
    parser.add_argument("--out", help="Output directory (default: paths.output_dir)")

    args = parser.parse_args()
    success = run(args.config, args.seeds, args.out, args.verbose)
    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
