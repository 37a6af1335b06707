"""Export the per-batch threshold trace of one DSS run.

    python scripts/export_trace.py --seed 0 --out results/trace

The trace CSV has one row per batch: domain, batch index, pi, mean
max-confidence and the high/low group sizes.
"""

import argparse
from pathlib import Path

from dss_tta.harness import export
from dss_tta.harness.config import load_config
from dss_tta.harness.runner import run_experiment

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "benchmark.yaml")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/trace"))
    args = ap.parse_args()

    cfg = load_config(args.config).with_seed(args.seed).with_method("dss")
    res = run_experiment(cfg)
    for path in export.write_run(res, args.out, stem=f"dss_seed{args.seed}"):
        print(path)


if __name__ == "__main__":
    main()
