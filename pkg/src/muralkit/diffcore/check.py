"""Finite-difference verification harness for analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Parameter, Tensor


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: list[Parameter],
    rng: np.random.Generator,
    samples_per_param: int = 4,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must rebuild the graph from the current parameter values and
    return a scalar.  A random subset of entries per parameter is probed.
    Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.

    Use float64 parameters and keep the step small: a weight probe perturbs
    every pre-activation it feeds, so large steps cross ReLU kinks and bias
    the two-sided difference.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [None if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, a_grad in zip(params, analytic):
        if a_grad is None:
            a_grad = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        n = flat.size
        picks = rng.choice(n, size=min(samples_per_param, n), replace=False)
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + step
            hi = float(loss_fn().data)
            flat[idx] = orig - step
            lo = float(loss_fn().data)
            flat[idx] = orig
            numeric = (hi - lo) / (2.0 * step)
            ana = float(a_grad.reshape(-1)[idx])
            err = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-8)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
