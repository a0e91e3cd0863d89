"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import NumericError, Tensor


def grad_check(f, inputs, eps: float = 1e-6) -> float:
    """Compare reverse-mode gradients of a scalar function against central
    finite differences.

    ``f`` takes the given tensors and returns a scalar tensor. Returns the
    worst relative error, |analytic - numeric| / max(1, |numeric|), over
    every element of every input. Inputs must be float64 for the step size
    to make sense.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None

    out = f(*inputs)
    if out.size != 1:
        raise ValueError("grad_check expects a scalar-valued function")
    if not np.isfinite(out.item()):
        raise NumericError("non-finite value in forward pass")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(*inputs).item()
            flat[i] = orig - eps
            lo = f(*inputs).item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError("non-finite value while perturbing inputs")
            num = (hi - lo) / (2.0 * eps)
            err = abs(ana.reshape(-1)[i] - num) / max(1.0, abs(num))
            worst = max(worst, err)
    return worst


def check_module(f, shapes, rng, eps: float = 1e-6, scale: float = 1.0) -> float:
    """grad_check over freshly drawn inputs with the given shapes."""
    inputs = [Tensor(rng.normal(0.0, scale, size=s), requires_grad=True) for s in shapes]
    return grad_check(f, inputs, eps=eps)
