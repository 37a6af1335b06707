"""CSV / JSON serialization of run results, traces and suite reports.

Floats are written with ``repr`` (shortest round-trip form), so every file is
locale independent and re-imports exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Iterable

from .runner import AblationReport, DomainResult, RunResult, SequenceReport, TraceRecord

RESULT_HEADER = "experiment_id,method,domain_index,corruption,severity,n_samples,error_rate"
TRACE_HEADER = "domain_index,batch_index,pi,mean_max_confidence,n_high,n_low"


def _num(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def _lines(header: str, rows: Iterable[Iterable[object]]) -> str:
    out = [header]
    out += [",".join(str(v) for v in row) for row in rows]
    return "\n".join(out) + "\n"


def _result_rows(res: RunResult) -> list[list[object]]:
    rows: list[list[object]] = [
        [res.experiment_id, res.method, d.domain_index, d.corruption, d.severity, d.n_samples, _num(d.error_rate)]
        for d in res.domains
    ]
    total = sum(d.n_samples for d in res.domains)
    rows.append([res.experiment_id, res.method, -1, "mean", 0, total, _num(res.mean_error)])
    return rows


def results_csv(results: RunResult | Iterable[RunResult]) -> str:
    if isinstance(results, RunResult):
        results = [results]
    return _lines(RESULT_HEADER, (row for r in results for row in _result_rows(r)))


def trace_csv(res: RunResult) -> str:
    return _lines(
        TRACE_HEADER,
        (
            [r.domain_index, r.batch_index, _num(r.pi), _num(r.mean_max_confidence), r.n_high, r.n_low]
            for r in res.threshold_trace
        ),
    )


def result_to_dict(res: RunResult) -> dict:
    # wall_time is left out so identical runs serialize identically
    return {
        "experiment_id": res.experiment_id,
        "method": res.method,
        "valid": res.valid,
        "config_fingerprint": res.config_fingerprint,
        "per_domain_error": res.per_domain_error,
        "mean_error": res.mean_error,
        "domains": [asdict(d) for d in res.domains],
        "threshold_trace": [asdict(t) for t in res.threshold_trace],
    }


def result_to_json(res: RunResult) -> str:
    return json.dumps(result_to_dict(res), indent=2) + "\n"


def result_from_json(text: str) -> RunResult:
    d = json.loads(text)
    return RunResult(
        experiment_id=d["experiment_id"],
        method=d["method"],
        domains=[DomainResult(**x) for x in d["domains"]],
        mean_error=d["mean_error"],
        threshold_trace=[TraceRecord(**x) for x in d["threshold_trace"]],
        config_fingerprint=d["config_fingerprint"],
        valid=d["valid"],
    )


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)


def write_run(res: RunResult, out_dir: str | Path, stem: str | None = None) -> list[Path]:
    out = Path(out_dir)
    stem = stem or res.experiment_id
    files = {
        out / f"{stem}.csv": results_csv(res),
        out / f"{stem}.json": result_to_json(res),
        out / f"{stem}_trace.csv": trace_csv(res),
    }
    for path, text in files.items():
        write_text(path, text)
    return list(files)


def ablation_summary_csv(report: AblationReport) -> str:
    return _lines(
        "variant,method,param,mean_error",
        ([label, r.method, _num(report.params.get(label)), _num(r.mean_error)] for label, r in report.rows.items()),
    )


def write_ablation(report: AblationReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    paths = [out / f"{report.name}_summary.csv", out / f"{report.name}_domains.csv"]
    write_text(paths[0], ablation_summary_csv(report))
    write_text(paths[1], results_csv(report.rows.values()))
    for label, res in report.rows.items():
        safe = label.replace("&", "_").replace("=", "")
        path = out / f"{report.name}_{safe}_trace.csv"
        write_text(path, trace_csv(res))
        paths.append(path)
    return paths


def sequence_csv(report: SequenceReport) -> str:
    rows = []
    for method, runs in report.runs.items():
        for k, r in enumerate(runs):
            rows.append([method, k, " ".join(map(str, report.orders[k])), _num(r.mean_error)])
    return _lines("method,order_index,order,mean_error", rows)


def sequence_aggregate_csv(report: SequenceReport) -> str:
    agg = report.aggregate()
    return _lines(
        "method,n_orders,mean,std",
        ([m, len(report.runs[m]), _num(mu), _num(sd)] for m, (mu, sd) in agg.items()),
    )


def write_sequences(report: SequenceReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    paths = [out / "sequences.csv", out / "sequences_aggregate.csv", out / "sequences_domains.csv"]
    write_text(paths[0], sequence_csv(report))
    write_text(paths[1], sequence_aggregate_csv(report))
    write_text(paths[2], results_csv(r for runs in report.runs.values() for r in runs))
    return paths
