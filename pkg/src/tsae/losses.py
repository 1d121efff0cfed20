"""Training objective: prediction error plus a latent autocorrelation term.

The regularizer rewards latent features whose lag-1 autocorrelation within
a group of consecutive windows is strong, which pushes slowly varying
signals into the latent space.  For each feature i the per-group
autocorrelation r_i is averaged over the groups of the batch first, then

    corr_loss = -sum_i |mean_k r_i^k|

so the loss lives in [-n_xs, 0].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics import VARIANCE_GUARD


def mse_pred_loss(predictions, targets) -> float:
    """Mean squared error over every prediction in the batch."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"predictions {p.shape} and targets {t.shape} differ")
    if p.size == 0:
        raise ValueError("empty prediction batch")
    diff = p - t
    return float(np.mean(diff * diff))


def mse_pred_grad(predictions, targets) -> np.ndarray:
    """Gradient of :func:`mse_pred_loss` with respect to the predictions."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"predictions {p.shape} and targets {t.shape} differ")
    if p.size == 0:
        raise ValueError("empty prediction batch")
    return 2.0 * (p - t) / p.size


def _lag1_stats(series: np.ndarray):
    """Centered lag pair statistics for one feature trace.

    Returns None when either the leading or the lagged part is (numerically)
    constant; those traces carry no correlation signal and contribute zero,
    with zero gradient.
    """
    a = series[1:]
    b = series[:-1]
    da = a - a.mean()
    db = b - b.mean()
    s_aa = float(da @ da)
    s_bb = float(db @ db)
    n = a.size
    if s_aa / n < VARIANCE_GUARD or s_bb / n < VARIANCE_GUARD:
        return None
    s_ab = float(da @ db)
    denom = np.sqrt(s_aa * s_bb)
    return da, db, s_aa, s_bb, s_ab / denom, denom


def lag1_autocorrelation(latents, feature: int) -> float:
    """Lag-1 autocorrelation of one latent feature over consecutive windows.

    ``latents`` is [T, n_xs] with T >= 3; the value is the Pearson
    correlation between the trace shifted by one step and itself, so a
    monotone ramp scores 1 and an alternating trace scores -1.
    """
    arr = _check_group(latents)
    if not 0 <= feature < arr.shape[1]:
        raise ShapeError(f"feature {feature} out of range for width {arr.shape[1]}")
    stats = _lag1_stats(arr[:, feature])
    return 0.0 if stats is None else float(stats[4])


def _check_group(latents) -> np.ndarray:
    arr = np.asarray(latents, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"latent group must be 2-D [T, n_xs], got {arr.shape}")
    if arr.shape[0] < 3:
        raise ShapeError(
            f"latent group needs at least 3 consecutive windows, got {arr.shape[0]}"
        )
    return arr


def correlation_loss(groups, n_xs: int | None = None) -> float:
    """Negative summed |mean autocorrelation| across latent features.

    :param groups: sequence of [T_k, n_xs] latent blocks, one per group of
        consecutive windows.  T_k may differ between groups.
    :returns: value in [-n_xs, 0].
    """
    loss, _ = correlation_forward(groups, n_xs)
    return loss


def correlation_forward(groups, n_xs: int | None = None):
    """Loss value plus the per-group statistics the backward pass needs."""
    blocks = [_check_group(g) for g in groups]
    if not blocks:
        raise ValueError("correlation loss needs at least one group")
    width = blocks[0].shape[1]
    if n_xs is not None and width != n_xs:
        raise ShapeError(f"latent width {width} does not match n_xs={n_xs}")
    for g in blocks:
        if g.shape[1] != width:
            raise ShapeError("latent groups disagree on feature width")
    stats = [[_lag1_stats(g[:, i]) for i in range(width)] for g in blocks]
    r_bar = np.zeros(width)
    for per_feature in stats:
        for i, st in enumerate(per_feature):
            if st is not None:
                r_bar[i] += st[4]
    r_bar /= len(blocks)
    loss = -float(np.sum(np.abs(r_bar)))
    return loss, (blocks, stats, r_bar)


def correlation_loss_backward(groups, upstream: float = 1.0):
    """Gradient of :func:`correlation_loss` with respect to each group.

    :returns: list of arrays shaped like the input groups.
    """
    _, (blocks, stats, r_bar) = correlation_forward(groups)
    k = len(blocks)
    signs = np.sign(r_bar)
    grads = [np.zeros_like(g) for g in blocks]
    for g_idx, (block, per_feature) in enumerate(zip(blocks, stats)):
        out = grads[g_idx]
        for i, st in enumerate(per_feature):
            if st is None or signs[i] == 0.0:
                continue
            da, db, s_aa, s_bb, r, denom = st
            # d r / d a_t and d r / d b_t for the Pearson quotient
            dr_da = db / denom - (r / s_aa) * da
            dr_db = da / denom - (r / s_bb) * db
            scale = upstream * (-signs[i] / k)
            out[1:, i] += scale * dr_da
            out[:-1, i] += scale * dr_db
    return grads


@dataclass(frozen=True)
class LossBreakdown:
    """Composite objective value with its parts."""

    pred: float
    corr: float
    weight: float

    @property
    def total(self) -> float:
        return self.pred + self.weight * self.corr


def total_loss(pred: float, corr: float, weight: float) -> LossBreakdown:
    """Combine the two loss terms; ``weight`` must be non-negative."""
    if weight < 0:
        raise ValueError(f"correlation weight must be non-negative, got {weight}")
    return LossBreakdown(pred=float(pred), corr=float(corr), weight=float(weight))
