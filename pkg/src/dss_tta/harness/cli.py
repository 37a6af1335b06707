"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 numeric failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from ..neuralcore import NumericError, load_checkpoint, save_checkpoint
from ..streamgen import SpecError
from . import export
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .runner import (
    PretrainError,
    RunError,
    ablation_components,
    ablation_threshold,
    pretrain_source,
    run_experiment,
    sweep_sequences,
    sweep_temperature,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("dss_tta")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dss-tta", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, help="YAML experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--method", help="method override")
        p.add_argument("--checkpoint", type=Path, help="source checkpoint (skips pretraining)")

    p = sub.add_parser("pretrain", help="train and save the source model")
    common(p)
    p = sub.add_parser("run", help="one online adaptation run")
    common(p)
    p = sub.add_parser("ablate-components", help="MT / DT / DT&PL / DT&PL&NL ladder")
    common(p)
    p = sub.add_parser("ablate-threshold", help="fixed vs dynamic threshold")
    common(p)
    p.add_argument("--pi-list", type=_floats, default=[0.2, 0.5, 0.8])
    p = sub.add_parser("sweep-temperature", help="error vs sharpening temperature")
    common(p)
    p.add_argument("--tp-list", type=_floats, default=[0.2, 0.4, 0.6, 0.8, 1.0])
    p = sub.add_parser("sweep-sequences", help="robustness over random domain orders")
    common(p)
    p.add_argument("--n-orders", type=int, default=10)
    p = sub.add_parser("export", help="re-export a result JSON as CSV or JSON")
    p.add_argument("input", type=Path)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", type=Path)
    p = sub.add_parser("show-config", help="print the resolved config as YAML")
    common(p)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.method:
        try:
            cfg = cfg.with_method(args.method)
        except ValueError as exc:
            raise ConfigError(f"unknown method {args.method!r}") from exc
    if args.out is not None:
        cfg = replace(cfg, output_dir=str(args.out))
    return cfg


def _source(cfg: ExperimentConfig, args: argparse.Namespace):
    if getattr(args, "checkpoint", None):
        return load_checkpoint(args.checkpoint)
    net, err = pretrain_source(cfg)
    log.info("source clean-test error %.3f%%", err)
    return net


def _out_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir or "results")


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "export":
        try:
            res = export.result_from_json(args.input.read_text())
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"not a result file: {exc}") from exc
        text = export.results_csv(res) if args.format == "csv" else export.result_to_json(res)
        sys.stdout.write(text)
        if args.out:
            suffix = ".csv" if args.format == "csv" else ".json"
            export.write_text(args.out / f"{res.experiment_id}{suffix}", text)
            if args.format == "csv":
                export.write_text(args.out / f"{res.experiment_id}_trace.csv", export.trace_csv(res))
        return EXIT_OK

    cfg = resolve_config(args)
    out = _out_dir(cfg)
    if args.command == "show-config":
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    if args.command == "pretrain":
        net, err = pretrain_source(cfg)
        sys.stdout.write(f"clean_test_error,{err!r}\n")
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(net, out / "source.npz")
        return EXIT_OK
    if args.command == "run":
        source = _source(cfg, args)
        try:
            res = run_experiment(cfg, source)
        except RunError as exc:
            export.write_run(exc.partial, out, stem=f"{exc.partial.experiment_id}_partial")
            raise
        sys.stdout.write(export.results_csv(res))
        export.write_run(res, out)
        return EXIT_OK
    if args.command == "ablate-components":
        report = ablation_components(cfg)
    elif args.command == "ablate-threshold":
        report = ablation_threshold(cfg, args.pi_list)
    elif args.command == "sweep-temperature":
        report = sweep_temperature(cfg, args.tp_list)
    else:
        if args.n_orders < 2:
            raise ConfigError("--n-orders must be >= 2")
        seq = sweep_sequences(cfg, args.n_orders)
        sys.stdout.write(export.sequence_aggregate_csv(seq))
        export.write_sequences(seq, out)
        return EXIT_OK
    sys.stdout.write(export.ablation_summary_csv(report))
    export.write_ablation(report, out)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except (ConfigError, SpecError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except RunError as exc:
        log.error("%s", exc)
        return EXIT_IO if isinstance(exc.__cause__, OSError) else EXIT_NUMERIC
    except (NumericError, PretrainError, FloatingPointError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO
    except ValueError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
