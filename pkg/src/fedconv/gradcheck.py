"""Finite-difference gradient verification.

Central differences at float64, compared against the reverse-mode gradients
with the relative-error metric |a - b| / max(1, |a|, |b|).
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, no_grad, weighted_sum

__all__ = ["finite_diff_check", "rel_err"]


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def _proj_value(fn, arrays, coeffs) -> float:
    with no_grad():
        out = fn(*[Tensor(a) for a in arrays])
    return float(np.sum(out.data * coeffs))


def finite_diff_check(fn, inputs, eps: float = 1e-5, seed: int = 0,
                      wrt=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    `fn` maps Tensors to a Tensor; `inputs` is a list of float64 arrays. The
    output is scalarized through a fixed random projection so vector-valued
    ops reduce to a single loss. `wrt` restricts which inputs are perturbed
    (default: all of them).
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    coeffs = np.random.default_rng(seed).standard_normal(out.shape)
    loss = weighted_sum(out, coeffs)
    loss.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    if wrt is None:
        wrt = range(len(arrays))
    worst = 0.0
    for i in wrt:
        base = arrays[i]
        for j in range(base.size):
            orig = base.flat[j]
            base.flat[j] = orig + eps
            fp = _proj_value(fn, arrays, coeffs)
            base.flat[j] = orig - eps
            fm = _proj_value(fn, arrays, coeffs)
            base.flat[j] = orig
            numeric = (fp - fm) / (2.0 * eps)
            worst = max(worst, rel_err(float(analytic[i].flat[j]), numeric))
    return worst
