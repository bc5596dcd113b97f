"""Finite-difference verification of the autodiff engine."""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor, backward


def grad_check(
    fn,
    params,
    eps: float = 1e-4,
    max_samples: int = 1000,
    rng=None,
) -> float:
    """Max relative error between autodiff and central finite differences.

    ``fn`` rebuilds the computation and returns a scalar Tensor; ``params``
    are the tensors to test. Up to ``max_samples`` coordinates are sampled
    across all parameters. Run in float64 for meaningful tolerances.

    The per-coordinate error is |a - n| / max(|a|, |n|, floor), with the
    floor at 1% of the largest analytic gradient magnitude (at least 1e-6):
    coordinates whose true gradient is negligible are held to an absolute
    standard instead of amplifying finite-difference roundoff.

    The default step balances truncation against roundoff for float64: at
    1e-3 the O(eps^2) truncation term alone can graze the 1e-4 tolerance on
    recurrent sigmoid/tanh chains.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError("grad_check requires float64 parameters")
        p.grad = None

    with Tape() as tape:
        loss = fn()
    backward(tape, loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros(p.shape) for p in params]

    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    n_samples = min(max_samples, total)
    picks = rng.choice(total, size=n_samples, replace=False)

    gscale = max((float(np.abs(a).max()) for a in analytic if a.size), default=0.0)
    floor = max(1e-6, 1e-2 * gscale)

    worst = 0.0
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for flat_idx in picks:
        pi = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        local = int(flat_idx - offsets[pi])
        p = params[pi]
        orig = p.data.reshape(-1)[local]
        p.data.reshape(-1)[local] = orig + eps
        hi = float(fn().data)
        p.data.reshape(-1)[local] = orig - eps
        lo = float(fn().data)
        p.data.reshape(-1)[local] = orig
        numeric = (hi - lo) / (2 * eps)
        a = float(analytic[pi].reshape(-1)[local])
        denom = max(abs(a), abs(numeric), floor)
        worst = max(worst, abs(a - numeric) / denom)
    return worst
