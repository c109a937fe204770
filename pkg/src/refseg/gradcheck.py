"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward

__all__ = ["finite_difference_check"]


def finite_difference_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    *,
    eps: float = 1e-5,
    rtol: float = 1e-4,
    n_probes: int = 12,
    seed: int = 0,
) -> float:
    """Compare tape gradients of scalar ``fn(*inputs)`` against central differences.

    For up to ``n_probes`` randomly chosen coordinates of each differentiable
    input, perturbs by ``±eps`` and checks the analytic gradient against the
    central difference at relative tolerance ``rtol`` (denominator is clamped
    at 1e-3 so near-zero gradients compare absolutely).  Returns the largest
    relative error seen; raises ``AssertionError`` on the first violation.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.grad = None          # discard accumulation from any earlier pass
    loss = fn(*inputs)
    backward(loss)
    grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    worst = 0.0
    for t, g in zip(inputs, grads):
        if not t.requires_grad:
            continue
        flat = t.data.reshape(-1)
        k = min(n_probes, flat.size)
        idx = rng.choice(flat.size, size=k, replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + eps
            f_plus = fn(*inputs).item()
            flat[i] = keep - eps
            f_minus = fn(*inputs).item()
            flat[i] = keep
            fd = (f_plus - f_minus) / (2.0 * eps)
            ad = g.reshape(-1)[i]
            rel = abs(fd - ad) / max(abs(fd), abs(ad), 1e-3)
            worst = max(worst, rel)
            if rel > rtol:
                raise AssertionError(
                    f"gradient mismatch at coord {i} of {t.shape}: "
                    f"fd={fd:.10g} ad={ad:.10g} rel={rel:.3g}"
                )
    return worst
