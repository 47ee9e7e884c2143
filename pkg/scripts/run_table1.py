"""Run the five-start scenario and print the per-start table.

    python3 scripts/run_table1.py --out runs/table1 --trials 10

Writes trials.csv, timings.csv, summary.json and force traces under --out.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from branchmanip.config import load_scenario
from branchmanip.experiment import run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "table1.yaml"))
    ap.add_argument("--out", default="runs/table1")
    ap.add_argument("--trials", type=int, default=None, help="trials per start (default: config)")
    ap.add_argument("--seed", type=int, default=None, help="base seed (default: config)")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--no-replan", action="store_true", help="baseline: abort on first violation")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_scenario(args.config)
    if args.trials is not None:
        cfg = replace(cfg, trials_per_start=args.trials)
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    if args.no_replan:
        cfg = replace(cfg, execution=replace(cfg.execution, max_replans=0))

    def progress(row):
        logging.info("start %d trial %d  success=%s  replans=%d  peak=%.1f N", row.start_id,
                     row.trial_id, row.success, row.replan_count, row.peak_force)

    report = run_experiment(cfg.validate(), args.out, jobs=args.jobs, progress=progress)
    print(report.table())
    return 0


if __name__ == "__main__":
    sys.exit(main())
