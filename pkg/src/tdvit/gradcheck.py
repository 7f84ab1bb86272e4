"""Central-difference gradient verification against the autodiff tape."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def finite_difference_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between autodiff and central differences.

    `f` maps the parameter list to a scalar loss tensor and must be
    deterministic (checked by evaluating twice). Each parameter
    coordinate is perturbed by +/-eps; the central difference
    (f(p+eps) - f(p-eps)) / (2 eps) is compared with the tape gradient
    as |fd - ad| / max(|fd|, |ad|, 1e-8). Run in double precision.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    params = list(params)

    base1 = f(params).item()
    base2 = f(params).item()
    if base1 != base2:
        raise ValueError("f is not deterministic: two evaluations differ")

    for p in params:
        p.zero_grad()
    loss = f(params)
    backward(loss)
    auto = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, ad in zip(params, auto):
        flat = p.data.reshape(-1)
        ad_flat = ad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(params).item()
            flat[i] = orig - eps
            lo = f(params).item()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * eps)
            err = abs(fd - ad_flat[i]) / max(abs(fd), abs(ad_flat[i]), 1e-8)
            worst = max(worst, err)
    return worst
