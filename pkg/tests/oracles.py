"""Independent reference computations used by the tests."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from dss_tta.neuralcore import Network, forward


def finite_difference_grads(
    net: Network,
    batch: np.ndarray,
    loss_of_probs: Callable[[np.ndarray], float],
    step: float = 1e-5,
    mode: str = "train",
) -> list[dict[str, np.ndarray]]:
    """Central differences of ``loss_of_probs(forward(net, batch))`` w.r.t. every parameter."""
    out = []
    for i, p in enumerate(net.params):
        g = {}
        for name, arr in p.items():
            num = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                vals = []
                for sign in (1.0, -1.0):
                    probe = net.copy()
                    probe.params[i][name][idx] += sign * step
                    vals.append(loss_of_probs(forward(probe, batch, mode)[0]))
                num[idx] = (vals[0] - vals[1]) / (2 * step)
            g[name] = num
        out.append(g)
    return out


def max_relative_error(a: list[dict[str, np.ndarray]], b: list[dict[str, np.ndarray]], floor: float = 1e-6) -> float:
    worst = 0.0
    for ga, gb in zip(a, b):
        for name in ga:
            x, y = ga[name], gb[name]
            denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
            worst = max(worst, float(np.max(np.abs(x - y) / denom)) if x.size else 0.0)
    return worst


def closed_form_threshold(pi0: float, lam: float, confs: list[float]) -> float:
    """lam^j pi0 + (1 - lam) sum_m lam^(j-m) conf_m, summed directly."""
    j = len(confs)
    total = lam**j * pi0
    for m, c in enumerate(confs, start=1):
        total += (1 - lam) * lam ** (j - m) * c
    return total


def row_entropy(row) -> float:
    return -sum(p * math.log(p) for p in row if p > 0)


def random_simplex(rng: np.random.Generator, n: int, c: int, concentration: float = 1.0) -> np.ndarray:
    return rng.dirichlet(np.full(c, concentration), size=n)
