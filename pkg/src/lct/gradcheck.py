"""Central-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import no_grad


def grad_check(f, params, h: float = 1e-5, max_coords: int | None = None, rng=None) -> float:
    """Largest relative error between analytic and numeric gradients of f.

    f rebuilds the computation from the current parameter values and returns
    a scalar Tensor.  One backward pass collects the analytic gradients; each
    checked coordinate is then perturbed by +/-h and f re-evaluated for the
    central-difference estimate.  Relative error per coordinate is
    |a - n| / max(|a|, |n|, 1e-8).  max_coords, when set, checks a seeded
    random subset instead of every coordinate.
    """
    for p in params:
        p.tensor.grad = None
    out = f()
    out.backward()
    analytic = [np.zeros_like(p.tensor.data) if p.tensor.grad is None
                else p.tensor.grad.copy() for p in params]
    for p in params:
        p.tensor.grad = None

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.tensor.data.size)]
    if max_coords is not None and len(coords) > max_coords:
        if rng is None or isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[int(k)] for k in picks]

    worst = 0.0
    with no_grad():
        for i, j in coords:
            flat = params[i].tensor.data.reshape(-1)
            saved = flat[j]
            flat[j] = saved + h
            f_plus = float(f().data)
            flat[j] = saved - h
            f_minus = float(f().data)
            flat[j] = saved
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[i].reshape(-1)[j])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
