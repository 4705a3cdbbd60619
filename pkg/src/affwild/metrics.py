"""Evaluation criteria and the training loss.

Concordance correlation coefficient (CCC):

    ccc(x, y) = 2 * s_xy / (s_x^2 + s_y^2 + (mean_x - mean_y)^2)

with population moments (1/N) throughout — the divisor cancels in
ccc(x, x) = 1 and keeps the loss gradient simple.  The training loss is

    loss = 1 - (ccc_valence + ccc_arousal) / 2

computed over the flattened batch (all sequences x all timesteps), with the
gradient with respect to each prediction element implemented in closed form.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class DegenerateSeriesError(ValueError):
    """Raised when a correlation statistic is undefined (zero denominator)."""


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"series lengths differ: {x.size} vs {y.size}")
    return x, y


def pearson(x, y) -> float:
    """Sample Pearson correlation (population moments)."""
    x, y = _pair(x, y)
    if x.size < 2:
        raise ValueError("pearson requires at least 2 samples")
    # an exactly constant series can still have nonzero centered values from
    # rounding in the mean, so test constancy directly
    if (x == x[0]).all() or (y == y[0]).all():
        raise DegenerateSeriesError("pearson undefined for a constant series")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).mean())
    sy = np.sqrt((yc * yc).mean())
    if sx == 0.0 or sy == 0.0:
        raise DegenerateSeriesError("pearson undefined for a constant series")
    return float((xc * yc).mean() / (sx * sy))


def ccc(x, y) -> float:
    """Concordance correlation coefficient; penalizes shift and scale."""
    x, y = _pair(x, y)
    if x.size < 2:
        raise ValueError("ccc requires at least 2 samples")
    if (x == x[0]).all() and (y == y[0]).all() and x[0] == y[0]:
        raise DegenerateSeriesError("ccc undefined: both series constant with equal means")
    mx, my = x.mean(), y.mean()
    vx = ((x - mx) ** 2).mean()
    vy = ((y - my) ** 2).mean()
    sxy = ((x - mx) * (y - my)).mean()
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        raise DegenerateSeriesError("ccc undefined: both series constant with equal means")
    return float(2.0 * sxy / denom)


def mse(x, y) -> float:
    """Mean squared error."""
    x, y = _pair(x, y)
    if x.size == 0:
        raise ValueError("mse of empty series")
    return float(((x - y) ** 2).mean())


def ccc_grad(pred: np.ndarray, ann: np.ndarray) -> np.ndarray:
    """Closed-form d ccc(pred, ann) / d pred."""
    x, y = _pair(pred, ann)
    n = x.size
    mx, my = x.mean(), y.mean()
    xc = x - mx
    yc = y - my
    vx = (xc * xc).mean()
    vy = (yc * yc).mean()
    sxy = (xc * yc).mean()
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        raise DegenerateSeriesError("ccc gradient undefined: zero denominator")
    d_sxy = yc / n
    d_denom = 2.0 * xc / n + 2.0 * (mx - my) / n
    return (2.0 * d_sxy * denom - 2.0 * sxy * d_denom) / (denom * denom)


class DegenerateBatchError(DegenerateSeriesError):
    """Raised when the CCC loss is undefined on a training batch."""


def _ccc_node(pred: Tensor, ann: np.ndarray) -> Tensor:
    """Graph node computing ccc(pred, ann) with the closed-form backward."""
    ann = np.asarray(ann, dtype=np.float64).ravel()
    try:
        value = ccc(pred.data.ravel(), ann)
        grad = ccc_grad(pred.data.ravel(), ann)
    except DegenerateSeriesError as exc:
        raise DegenerateBatchError(str(exc)) from exc

    def backward(g):
        pred._accumulate((float(g) * grad).reshape(pred.shape))

    return Tensor(value, _parents=(pred,), _backward=backward)


def ccc_loss(pred_v: Tensor, ann_v, pred_a: Tensor, ann_a) -> Tensor:
    """Differentiable 1 - (ccc_v + ccc_a)/2 over flattened batch vectors."""
    if pred_v.data.size < 2 or pred_a.data.size < 2:
        raise ValueError("ccc loss requires at least 2 samples per dimension")
    rho_v = _ccc_node(pred_v, ann_v)
    rho_a = _ccc_node(pred_a, ann_a)
    return 1.0 - (rho_v + rho_a) * 0.5
