"""Independent reference computations used by several test modules."""

from __future__ import annotations

import math

import numpy as np

from aostore.workloads.lstm import LstmModel


def finite_difference_check(model: LstmModel, batch: np.ndarray, targets: np.ndarray,
                            step: float = 1e-5) -> tuple[float, np.ndarray, np.ndarray]:
    """Max relative error between analytic and central-difference gradients.

    Relative error per parameter is ``|a - n| / max(|a|, |n|, 1e-8)``; the
    floor only matters for parameters whose true gradient is essentially 0.
    """
    _, analytic = model.loss_and_grad(batch, targets)
    numeric = np.empty_like(analytic)
    params = model.params
    for idx in range(params.size):
        saved = params[idx]
        params[idx] = saved + step
        up = float(np.mean((model.forward(batch) - targets) ** 2))
        params[idx] = saved - step
        down = float(np.mean((model.forward(batch) - targets) ** 2))
        params[idx] = saved
        numeric[idx] = (up - down) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)), analytic, numeric


def hand_metrics(y: list[float], p: list[float]) -> dict[str, float]:
    """Scalar loops straight from the formulas; no numpy."""
    n = len(y)
    se = sum((pi - yi) ** 2 for yi, pi in zip(y, p))
    ae = sum(abs(pi - yi) for yi, pi in zip(y, p))
    sm = 0.0
    for yi, pi in zip(y, p):
        den = abs(yi) + abs(pi)
        sm += 0.0 if den == 0 else 2 * abs(pi - yi) / den
    return {"mse": se / n, "mae": ae / n, "smape": 100.0 * sm / n, "rmse": math.sqrt(se / n)}


# five fixed cases: (targets, predictions)
METRIC_CASES = [
    ([0.0, 2.0], [0.0, 0.0]),
    ([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]),
    ([10.0, -5.0, 0.5, 4.0], [12.0, -4.0, 0.0, 4.0]),
    ([0.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
    ([55.5, 60.25, 70.0, 65.125, 50.0], [54.0, 61.0, 68.5, 66.0, 52.5]),
]
