import json
from dataclasses import replace

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from dss_tta.baselines import MethodKind
from dss_tta.dss import teacher_pseudo_labels
from dss_tta.harness import export
from dss_tta.harness.cli import main
from dss_tta.harness.config import (
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    config_to_dict,
    dump_config,
    fingerprint,
    load_config,
)
from dss_tta.harness.runner import (
    ablation_components,
    ablation_threshold,
    batch_seed,
    error_rate,
    pretrain_source,
    run_experiment,
    sweep_sequences,
    sweep_temperature,
)
from dss_tta.neuralcore import NumericError, forward, load_checkpoint
from dss_tta.streamgen import DatasetSpec, DomainSpec, StreamSpec, apply_corruption, generate_clean, make_stream

from .conftest import BENCHMARK, small_config

# -- config -----------------------------------------------------------------


def test_yaml_round_trip(small):
    assert load_config_text(dump_config(small)) == small
    assert config_from_dict(config_to_dict(ExperimentConfig())) == ExperimentConfig()


def load_config_text(text):
    return config_from_dict(yaml.safe_load(text))


def test_benchmark_config_loads():
    cfg = load_config(BENCHMARK)
    assert cfg.stream.domains[0].n_samples == 10000
    assert cfg.dss.lr == 0.01 and cfg.dss.beta == 0.999


@pytest.mark.parametrize(
    "bad",
    [
        {"nope": 1},
        {"dss": {"tp": 2.0}},
        {"dataset": {"num_classes": 1}},
        {"stream": {"batch_size": 1}},
        {"method": "magic"},
        {"stream": {"domains": [{"corruption": "fog", "severity": 1, "n_samples": 10}]}},
    ],
)
def test_invalid_configs_raise_config_error(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_unreadable_or_malformed_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("dss: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(bad)


FIELD_EDITS = {
    "seed": lambda c: c.with_seed(c.seed + 1),
    "method": lambda c: c.with_method("tent"),
    "fixed_pi": lambda c: replace(c, fixed_pi=0.5),
    "tp": lambda c: c.with_method(c.method, tp=0.4),
    "aug": lambda c: replace(c, dss=replace(c.dss, aug=replace(c.dss.aug, num_augmentations=2))),
    "domains": lambda c: replace(c, stream=replace(c.stream, domains=c.stream.domains[:2])),
    "hidden": lambda c: replace(c, hidden=(16, 8)),
    "epochs": lambda c: replace(c, pretrain_epochs=3),
}


@pytest.mark.parametrize("edit", list(FIELD_EDITS))
def test_fingerprint_tracks_every_field(small, edit):
    assert fingerprint(FIELD_EDITS[edit](small)) != fingerprint(small)


def test_fingerprint_ignores_output_dir(small):
    assert fingerprint(replace(small, output_dir="/elsewhere")) == fingerprint(small)
    assert fingerprint(small_config()) == fingerprint(small)


# -- pretraining --------------------------------------------------------------


def test_default_source_model_is_accurate():
    _, err = pretrain_source(ExperimentConfig())
    assert err <= 2.0
    assert err == pytest.approx(1.25, abs=1e-9)  # pinned golden value, seed 0


def test_four_class_source_model_is_accurate():
    _, err = pretrain_source(replace(ExperimentConfig(), dataset=DatasetSpec(num_classes=4)))
    assert err <= 2.0


def test_untrained_source_is_at_chance():
    _, err = pretrain_source(replace(ExperimentConfig(), pretrain_epochs=0))
    assert abs(err - 100 * (1 - 1 / 8)) <= 10


def test_pretraining_is_deterministic(small):
    a, ea = pretrain_source(small)
    b, eb = pretrain_source(replace(small, output_dir="x"))
    assert ea == eb
    sa, sb = a.state_arrays(), b.state_arrays()
    assert all(sa[k].tobytes() == sb[k].tobytes() for k in sa)


def test_pretraining_failure_is_reported(small):
    from dss_tta.harness.runner import PretrainError

    with pytest.raises(PretrainError):
        pretrain_source(replace(small, pretrain_lr=1e-9, pretrain_epochs=1))


# -- runs ---------------------------------------------------------------------


def test_run_schema_and_accounting(small):
    res = run_experiment(small)
    csv = export.results_csv(res)
    lines = csv.splitlines()
    assert lines[0] == export.RESULT_HEADER
    assert len(lines) == 1 + 3 + 1
    assert lines[-1].split(",")[2] == "-1"
    for row in lines[1:]:
        assert 0.0 <= float(row.split(",")[-1]) <= 100.0
    assert csv.endswith("\n")
    assert res.mean_error == pytest.approx(np.mean(res.per_domain_error), abs=1e-9)
    stream = make_stream(small.stream, generate_clean(small.dataset)[1])
    assert len(res.threshold_trace) == stream.num_batches()
    assert export.trace_csv(res).splitlines()[0] == export.TRACE_HEADER
    assert [d.n_samples for d in res.domains] == [150, 130, 97]


@pytest.mark.parametrize("method", [m.value for m in MethodKind])
def test_every_method_runs_deterministically(small, method):
    cfg = small.with_method(method)
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert export.results_csv(a) == export.results_csv(b)
    assert export.result_to_json(a) == export.result_to_json(b)
    assert export.trace_csv(a) == export.trace_csv(b)


def test_json_round_trip_is_byte_identical(small):
    text = export.result_to_json(run_experiment(small))
    assert export.result_to_json(export.result_from_json(text)) == text
    assert json.loads(text)["per_domain_error"] == [d["error_rate"] for d in json.loads(text)["domains"]]


def test_source_only_on_identity_stream_matches_direct_evaluation(small):
    cfg = replace(
        small.with_method("source_only"),
        stream=StreamSpec((DomainSpec("identity", 3, 200), DomainSpec("identity", 1, 77)), 32, small.seed),
    )
    net, _ = pretrain_source(cfg)
    res = run_experiment(cfg, net)
    stream = make_stream(cfg.stream, generate_clean(cfg.dataset)[1])
    for t, data in enumerate(stream.domain_data):
        direct = error_rate(forward(net, data.features, "eval")[0].argmax(1), data.labels)
        assert res.per_domain_error[t] == pytest.approx(direct, abs=1e-12)


def test_frozen_dss_scores_like_augmented_source_teacher(small):
    cfg = small.with_method("dss", lr=0.0, beta=1.0, ema_lambda=1.0)
    net, _ = pretrain_source(cfg)
    res = run_experiment(cfg, net)
    stream = make_stream(cfg.stream, generate_clean(cfg.dataset)[1])
    wrong = np.zeros(3)
    seen = np.zeros(3)
    j = {}
    for t, b in stream:
        j[t] = j.get(t, -1) + 1
        pl = teacher_pseudo_labels(net, b.features, cfg.dss.aug, batch_seed(cfg.seed, t, j[t]))
        wrong[t] += np.sum(pl.argmax(1) != b.labels)
        seen[t] += len(b)
    np.testing.assert_allclose(res.per_domain_error, 100 * wrong / seen, rtol=0, atol=1e-12)


def test_dss_threshold_trace_is_reinitialised_per_domain(small):
    res = run_experiment(small)
    first = [r for r in res.threshold_trace if r.batch_index == 0]
    assert len(first) == 3
    assert all(r.pi is not None and 0 <= r.pi <= 1 for r in res.threshold_trace)
    assert all(r.n_high + r.n_low > 0 for r in res.threshold_trace)


def test_fixed_threshold_smoke_run_shares_csv_schema(small):
    fixed = run_experiment(replace(small.with_method("dss_fixed_threshold"), fixed_pi=0.2))
    dyn = run_experiment(small)
    strip = lambda text: [line.split(",")[2:6] for line in text.splitlines()]  # noqa: E731
    assert strip(export.results_csv(fixed)) == strip(export.results_csv(dyn))
    assert all(r.pi == 0.2 for r in fixed.threshold_trace)


def test_source_only_degrades_under_strong_noise():
    # 4-class benchmark, five seeds
    base = replace(ExperimentConfig(), dataset=DatasetSpec(num_classes=4))
    errs = {1: [], 5: []}
    clean = []
    for seed in range(5):
        cfg = base.with_seed(seed)
        net, clean_err = pretrain_source(cfg)
        clean.append(clean_err)
        test = generate_clean(cfg.dataset)[1]
        for s in errs:
            corrupted = apply_corruption(test, "gaussian_noise", s, seed)
            errs[s].append(error_rate(forward(net, corrupted.features, "eval")[0].argmax(1), corrupted.labels))
    assert np.mean(errs[5]) > np.mean(errs[1])
    assert np.mean(errs[5]) > np.mean(clean)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_run_error_carries_partial_result(small):
    from dss_tta.harness.runner import RunError

    cfg = small.with_method("dss", lr=1e300)
    with pytest.raises(RunError) as info:
        run_experiment(cfg)
    assert isinstance(info.value.__cause__, NumericError)
    assert info.value.partial.valid is False
    assert info.value.partial.domains[0].n_samples > 0


# -- suites -------------------------------------------------------------------


def test_component_ladder_schema_and_reduction(small):
    rep = ablation_components(small)
    assert list(rep.rows) == ["mean_teacher_all", "DT", "DT&PL", "DT&PL&NL"]
    reduced = run_experiment(small.with_method("dss", tp=1.0, alpha=0.0))
    assert rep.rows["DT"].per_domain_error == reduced.per_domain_error
    assert rep.rows["DT&PL&NL"].per_domain_error == run_experiment(small).per_domain_error


def test_threshold_ablation_rows_and_zero_threshold(small):
    rep = ablation_threshold(small, (0.0, 0.2, 0.5, 0.8))
    assert list(rep.rows) == ["fixed_pi=0", "fixed_pi=0.2", "fixed_pi=0.5", "fixed_pi=0.8", "dynamic"]
    all_high = run_experiment(replace(small.with_method("dss_fixed_threshold"), fixed_pi=0.0))
    assert rep.rows["fixed_pi=0"].per_domain_error == all_high.per_domain_error
    assert all(r.n_low == 0 for r in rep.rows["fixed_pi=0"].threshold_trace)


def test_temperature_sweep_rows_and_identity(small):
    rep = sweep_temperature(small, (0.2, 0.4, 0.6, 0.8, 1.0))
    assert len(rep.rows) == 5
    plain = run_experiment(small.with_method("dss", use_sharpening=False))
    assert rep.rows["tp=1"].per_domain_error == plain.per_domain_error
    assert "tp,".join([""]) == "" and export.ablation_summary_csv(rep).count("\n") == 6


def test_sequence_sweep_aggregate(small):
    rep = sweep_sequences(small, 4)
    assert set(rep.runs) == {"mean_teacher_all", "dss"}
    assert all(len(v) == 4 for v in rep.runs.values())
    assert len({tuple(o) for o in rep.orders}) > 1
    for method, (mu, sd) in rep.aggregate().items():
        vals = [r.mean_error for r in rep.runs[method]]
        m = sum(vals) / len(vals)
        assert mu == pytest.approx(m, abs=1e-9)
        assert sd == pytest.approx((sum((v - m) ** 2 for v in vals) / (len(vals) - 1)) ** 0.5, abs=1e-9)
    with pytest.raises(ValueError):
        sweep_sequences(small, 1)


# -- export and CLI -----------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(errs=st.lists(st.floats(0, 100), min_size=1, max_size=5))
def test_csv_floats_round_trip(errs):
    from dss_tta.harness.runner import DomainResult, RunResult

    doms = [DomainResult(i, "identity", 1, 10, e) for i, e in enumerate(errs)]
    res = RunResult("x", "dss", doms, float(np.mean(errs)), [], "f")
    rows = export.results_csv(res).splitlines()[1:-1]
    assert [float(r.split(",")[-1]) for r in rows] == errs
    assert export.result_to_json(export.result_from_json(export.result_to_json(res))) == export.result_to_json(res)


@pytest.fixture
def cfg_file(tmp_path, small):
    path = tmp_path / "cfg.yaml"
    path.write_text(dump_config(small))
    return path


def test_cli_run_writes_files_and_echoes(cfg_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_file), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert printed.startswith(export.RESULT_HEADER)
    names = sorted(p.name for p in out.iterdir())
    assert len(names) == 3 and any(n.endswith("_trace.csv") for n in names)
    json_file = next(out.glob("*.json"))
    assert main(["export", str(json_file), "--format", "json"]) == 0
    assert capsys.readouterr().out == json_file.read_text()


def test_cli_pretrain_and_checkpoint_reuse(cfg_file, tmp_path, capsys):
    out = tmp_path / "ck"
    assert main(["pretrain", "--config", str(cfg_file), "--out", str(out)]) == 0
    ck = out / "source.npz"
    assert load_checkpoint(ck).layers
    capsys.readouterr()
    assert main(["run", "--config", str(cfg_file), "--out", str(out), "--checkpoint", str(ck)]) == 0
    via_ck = capsys.readouterr().out
    assert main(["run", "--config", str(cfg_file), "--out", str(out)]) == 0
    assert capsys.readouterr().out == via_ck


def test_cli_suites(cfg_file, tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["ablate-components", "--config", str(cfg_file), "--out", str(out)]) == 0
    assert main(["ablate-threshold", "--config", str(cfg_file), "--out", str(out), "--pi-list", "0.2,0.5"]) == 0
    assert main(["sweep-temperature", "--config", str(cfg_file), "--out", str(out), "--tp-list", "0.5,1"]) == 0
    assert main(["sweep-sequences", "--config", str(cfg_file), "--out", str(out), "--n-orders", "2"]) == 0
    text = capsys.readouterr().out
    assert "variant,method,param,mean_error" in text and "method,n_orders,mean,std" in text
    assert (out / "components_summary.csv").exists() and (out / "sequences_aggregate.csv").exists()


def test_cli_overrides_and_show_config(cfg_file, capsys):
    assert main(["show-config", "--config", str(cfg_file), "--seed", "7", "--method", "tent"]) == 0
    shown = yaml.safe_load(capsys.readouterr().out)
    assert shown["seed"] == 7 and shown["dataset"]["seed"] == 7 and shown["method"] == "tent"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_exit_codes(cfg_file, tmp_path, small):
    bad = tmp_path / "bad.yaml"
    bad.write_text("dss:\n  tp: 5\n")
    assert main(["run", "--config", str(bad)]) == 1
    assert main(["run", "--config", str(cfg_file), "--method", "magic"]) == 1
    assert main(["sweep-sequences", "--config", str(cfg_file), "--n-orders", "1"]) == 1
    nan_cfg = tmp_path / "nan.yaml"
    nan_cfg.write_text(dump_config(small.with_method("dss", lr=1e300)))
    assert main(["run", "--config", str(nan_cfg), "--out", str(tmp_path / "n")]) == 2
    assert any(p.name.endswith("_partial.json") for p in (tmp_path / "n").iterdir())
    slow = tmp_path / "slow.yaml"
    slow.write_text(dump_config(replace(small, pretrain_lr=1e-9, pretrain_epochs=1)))
    assert main(["pretrain", "--config", str(slow)]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", "--config", str(cfg_file), "--out", str(blocker / "sub")]) == 3
    assert main(["export", str(tmp_path / "missing.json")]) == 3
