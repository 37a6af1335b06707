"""Run every method on the benchmark config over several seeds and print a table.

    python scripts/run_benchmark.py --seeds 0 1 2 3 4 --out results/benchmark
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from dss_tta.baselines import MethodKind
from dss_tta.harness import export
from dss_tta.harness.config import load_config
from dss_tta.harness.runner import pretrain_source, run_experiment

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "benchmark.yaml")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--methods", nargs="+", default=[m.value for m in MethodKind if m is not MethodKind.DSS_FIXED_THRESHOLD])
    ap.add_argument("--out", type=Path, default=Path("results/benchmark"))
    args = ap.parse_args()

    base = load_config(args.config)
    table: dict[str, list[float]] = {m: [] for m in args.methods}
    for seed in args.seeds:
        cfg = replace(base.with_seed(seed), output_dir=str(args.out))
        source, clean = pretrain_source(cfg)
        print(f"seed {seed}: source clean-test error {clean:.3f}%")
        for m in args.methods:
            res = run_experiment(cfg.with_method(m), source)
            export.write_run(res, args.out, stem=f"{m}_seed{seed}")
            table[m].append(res.mean_error)
            print(f"  {m:<18} {res.mean_error:7.3f}%")

    print(f"\n{'method':<18}  " + " ".join(f"{'seed' + str(s):>7}" for s in args.seeds) + f"  {'mean':>7}")
    for m, vals in table.items():
        print(f"{m:<18}  " + " ".join(f"{v:7.3f}" for v in vals) + f"  {np.mean(vals):7.3f}")


if __name__ == "__main__":
    main()
