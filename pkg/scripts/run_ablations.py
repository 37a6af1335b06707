"""Run the component ladder, the fixed-threshold comparison, the temperature
sweep and the domain-order sweep on the benchmark config.

    python scripts/run_ablations.py --seed 0 --out results/ablations [--only ladder threshold]
"""

import argparse
from pathlib import Path

from dss_tta.harness import export
from dss_tta.harness.config import load_config
from dss_tta.harness.runner import ablation_components, ablation_threshold, sweep_sequences, sweep_temperature

ROOT = Path(__file__).resolve().parent.parent
SUITES = ("ladder", "threshold", "temperature", "sequences")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "benchmark.yaml")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/ablations"))
    ap.add_argument("--only", nargs="+", choices=SUITES, default=list(SUITES))
    ap.add_argument("--n-orders", type=int, default=10)
    args = ap.parse_args()

    cfg = load_config(args.config).with_seed(args.seed)
    for name in args.only:
        print(f"== {name}")
        if name == "sequences":
            seq = sweep_sequences(cfg, args.n_orders)
            export.write_sequences(seq, args.out)
            print(export.sequence_aggregate_csv(seq), end="")
            continue
        report = {
            "ladder": ablation_components,
            "threshold": ablation_threshold,
            "temperature": sweep_temperature,
        }[name](cfg)
        export.write_ablation(report, args.out)
        print(export.ablation_summary_csv(report), end="")


if __name__ == "__main__":
    main()
