from dataclasses import replace

import numpy as np
import pytest

from dss_tta.baselines import (
    MethodKind,
    bn_adapt_step,
    dss_fixed_threshold_step,
    mean_teacher_all_step,
    source_only_step,
    tent_step,
)
from dss_tta.dss import DssConfig, ModelPair, teacher_pseudo_labels
from dss_tta.neuralcore import DegenerateBatchError, LayerSpec, Network, entropy, forward, init_network, mlp_layers
from dss_tta.streamgen import AugmentationSpec


def net_for(seed=0, d=6, c=4):
    return init_network(mlp_layers(d, c, (10, 8)), np.random.default_rng(seed))


def batch(seed=0, n=24, d=6):
    return np.random.default_rng(seed).normal(size=(n, d)) * 1.5 + 0.3


def params_equal(a: Network, b: Network, skip_bn: bool = False) -> bool:
    bn = set(a.bn_indices()) if skip_bn else set()
    return all(
        np.array_equal(pa[k], pb[k]) for i, (pa, pb) in enumerate(zip(a.params, b.params)) if i not in bn for k in pa
    )


def stats_equal(a: Network, b: Network) -> bool:
    return all(
        np.array_equal(a.bn_running_mean[i], b.bn_running_mean[i])
        and np.array_equal(a.bn_running_var[i], b.bn_running_var[i])
        for i in a.bn_indices()
    )


def test_method_enumeration_is_closed():
    assert {m.value for m in MethodKind} == {
        "source_only",
        "bn_adapt",
        "tent",
        "mean_teacher_all",
        "dss_fixed_threshold",
        "dss",
    }


def test_source_only_is_pure():
    net, x = net_for(), batch()
    before = net.copy()
    assert np.array_equal(source_only_step(net, x), source_only_step(net, x))
    assert params_equal(net, before) and stats_equal(net, before)


def test_bn_adapt_replaces_statistics_only():
    net, x = net_for(1), batch(1)
    preds, out = bn_adapt_step(net, x)
    assert params_equal(net, out)
    i = net.bn_indices()[0]
    h = x @ net.params[0]["W"] + net.params[0]["b"]
    np.testing.assert_allclose(out.bn_running_mean[i], h.mean(0), rtol=1e-12)
    np.testing.assert_allclose(out.bn_running_var[i], h.var(0), rtol=1e-12)
    # predicting with the swapped-in statistics reproduces the emitted predictions
    assert np.array_equal(forward(out, x, "eval")[0].argmax(1), preds)


def test_bn_adapt_matches_eval_on_source_distribution():
    rng = np.random.default_rng(0)
    net = net_for(2)
    # calibrate running statistics on a large sample from one distribution
    forward(net, rng.normal(size=(50000, 6)), "train", bn_momentum=1.0)
    gaps = []
    for n in (32, 512, 8192):
        x = rng.normal(size=(n, 6))
        p_bn = forward(net.copy(), x, "train", bn_momentum=1.0)[0]
        gaps.append(np.abs(p_bn - forward(net, x, "eval")[0]).mean())
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.005


def test_bn_methods_need_bn_layers_and_two_rows():
    with pytest.raises(DegenerateBatchError):
        bn_adapt_step(net_for(), batch(n=1))
    plain = Network([LayerSpec("dense", 6, 4)], [{"W": np.zeros((6, 4)), "b": np.zeros(4)}])
    with pytest.raises(ValueError):
        tent_step(plain, batch(), 1e-3)


def test_tent_with_zero_lr_matches_bn_adapt():
    net, x = net_for(3), batch(3)
    p_tent, out_tent, _ = tent_step(net, x, 0.0)
    p_bn, out_bn = bn_adapt_step(net, x)
    assert np.array_equal(p_tent, p_bn)
    assert params_equal(out_tent, out_bn) and stats_equal(out_tent, out_bn)


def test_tent_updates_only_bn_affine():
    net, x = net_for(4), batch(4)
    _, out, _ = tent_step(net, x, 0.05)
    for i, (a, b) in enumerate(zip(net.params, out.params)):
        if i in net.bn_indices():
            assert not np.array_equal(a["gamma"], b["gamma"])
        else:
            for k in a:
                assert a[k].tobytes() == b[k].tobytes()


def test_tent_step_lowers_entropy():
    net, x = net_for(5), batch(5)
    _, out, probs = tent_step(net, x, 1e-3)
    after, _ = forward(out.copy(), x, "train", bn_momentum=1.0)
    assert entropy(after)[0] <= entropy(probs)[0]


def _pair_and_cfg(seed=0, **kw):
    pair = ModelPair.from_source(net_for(seed))
    cfg = DssConfig(lr=0.05, beta=0.9, aug=AugmentationSpec(num_augmentations=3), **kw)
    return pair, cfg


def test_mean_teacher_all_equals_reduced_dss():
    pair, cfg = _pair_and_cfg(6)
    x = batch(6)
    for step in range(3):
        mt = mean_teacher_all_step(pair, x, cfg, rng_seed=step)
        reduced = dss_fixed_threshold_step(pair, x, replace(cfg, tp=1.0, alpha=0.0), 0.0, rng_seed=step)
        assert np.array_equal(mt.predictions, reduced.predictions)
        assert params_equal(mt.pair.student, reduced.pair.student)
        assert params_equal(mt.pair.teacher, reduced.pair.teacher)
        assert stats_equal(mt.pair.teacher, reduced.pair.teacher)
        pair = mt.pair


def test_ablation_switches_equal_parameter_reductions():
    pair, cfg = _pair_and_cfg(7)
    x = batch(7)
    off = dss_fixed_threshold_step(pair, x, replace(cfg, use_sharpening=False, use_negative=False), 0.3, 1)
    red = dss_fixed_threshold_step(pair, x, replace(cfg, tp=1.0, alpha=0.0), 0.3, 1)
    assert params_equal(off.pair.student, red.pair.student)


def test_mean_teacher_all_frozen_dynamics():
    pair, cfg = _pair_and_cfg(8)
    x = batch(8)
    res = mean_teacher_all_step(pair, x, replace(cfg, lr=0.0, beta=1.0), 0)
    assert params_equal(res.pair.student, pair.student)
    assert params_equal(res.pair.teacher, pair.teacher) and stats_equal(res.pair.teacher, pair.teacher)


def test_fixed_threshold_extremes():
    pair, cfg = _pair_and_cfg(9)
    x = batch(9)
    everything = dss_fixed_threshold_step(pair, x, cfg, 0.0, 2)
    assert everything.info.split.high.size == x.shape[0]
    nothing = dss_fixed_threshold_step(pair, x, cfg, 1.0 + 1e-9, 2)
    assert nothing.info.split.high.size == 0 and nothing.info.loss_pos == 0.0


def test_all_methods_predict_before_adapting():
    pair, cfg = _pair_and_cfg(10)
    x = batch(10)
    expected = teacher_pseudo_labels(pair.teacher, x, cfg.aug, 5).argmax(1)
    assert np.array_equal(mean_teacher_all_step(pair, x, cfg, 5).predictions, expected)
    assert np.array_equal(dss_fixed_threshold_step(pair, x, cfg, 0.5, 5).predictions, expected)
    net = net_for(10)
    probs, _ = forward(net.copy(), x, "train", bn_momentum=1.0)
    assert np.array_equal(tent_step(net, x, 0.5)[0], probs.argmax(1))
