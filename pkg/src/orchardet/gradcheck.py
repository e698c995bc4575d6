"""Central finite-difference gradient checking.

This is the verification oracle for every differentiable op and block:
analytic gradients from the reverse-mode sweep are compared coordinate
by coordinate against (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps).
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import Tensor, no_grad


class GradCheckError(Exception):
    """Raised when a gradient contains NaN; carries the offending index."""

    def __init__(self, which: str, index: int):
        super().__init__(f"NaN in {which} gradient at flat coordinate {index}")
        self.which = which
        self.index = index


def grad_check(fn: Callable[[Tensor], Tensor], point: Tensor, eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must be a deterministic map from one rank-4 tensor to a scalar
    tensor, rebuilt from scratch on every call (no train-mode batchnorm:
    its running-stat updates would make repeated evaluations diverge).
    Relative error is |ga - gf| / max(1e-8, |ga| + |gf|) per coordinate.
    """
    base = np.array(point.data, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    out = fn(leaf)
    if out.size != 1:
        raise ValueError(f"grad_check: fn must return a scalar, got shape {out.shape}")
    out.backward()
    if leaf.grad is None:
        analytic = np.zeros_like(base)
    else:
        analytic = np.asarray(leaf.grad, dtype=np.float64).copy()
    if not np.all(np.isfinite(analytic)):
        raise GradCheckError("analytic", int(np.flatnonzero(~np.isfinite(analytic))[0]))

    numeric = np.zeros_like(base)
    flat = numeric.ravel()
    with no_grad():
        for i in range(base.size):
            probe = base.copy()
            probe.flat[i] += eps
            f_plus = fn(Tensor(probe)).item()
            probe.flat[i] -= 2 * eps
            f_minus = fn(Tensor(probe)).item()
            flat[i] = (f_plus - f_minus) / (2 * eps)
    if not np.all(np.isfinite(numeric)):
        raise GradCheckError("finite-difference", int(np.flatnonzero(~np.isfinite(numeric))[0]))

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check_param(loss_fn: Callable[[], Tensor], param, eps: float = 1e-4) -> float:
    """grad_check for a network parameter: the checked function swaps the
    parameter's value tensor and re-evaluates ``loss_fn``."""
    original = param.tensor

    def fn(t: Tensor) -> Tensor:
        param.tensor = t
        try:
            return loss_fn()
        finally:
            param.tensor = original

    return grad_check(fn, original, eps=eps)
