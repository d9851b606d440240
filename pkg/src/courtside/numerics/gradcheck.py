"""Finite-difference oracle for taped gradients.

Checks run in float64: the analytic reverse pass and the central differences
both see float64 inputs, so the comparison tests the gradient math rather
than float32 rounding noise.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, mul, sum_


def _scalarize(f: Callable, inputs: list[Tensor], proj: np.ndarray) -> Tensor:
    out = f(*inputs)
    return sum_(mul(out, Tensor(proj, dtype=out.dtype)))


def fd_and_analytic(
    f: Callable,
    raw_inputs: Sequence[np.ndarray],
    rng: np.random.Generator,
    h: float = 1e-3,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of sum(f(inputs) * u) for a random projection u, both ways."""
    base = [np.asarray(x, dtype=np.float64) for x in raw_inputs]
    inputs = [Tensor(x, dtype=np.float64) for x in base]
    with Tape() as tape:
        probe = f(*inputs)
        proj = rng.standard_normal(probe.shape)
        loss = sum_(mul(probe, Tensor(proj, dtype=np.float64)))
    grads = backward(loss, tape, inputs)
    analytic = [grads[t] for t in inputs]

    numeric = []
    for i, x in enumerate(base):
        g = np.zeros_like(x)
        flat = x.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            step = h * max(1.0, abs(orig))
            flat[j] = orig + step
            hi = _scalarize(f, [Tensor(b, dtype=np.float64) for b in base], proj).item()
            flat[j] = orig - step
            lo = _scalarize(f, [Tensor(b, dtype=np.float64) for b in base], proj).item()
            flat[j] = orig
            gflat[j] = (hi - lo) / (2.0 * step)
        numeric.append(g)
    return analytic, numeric


def max_grad_error(
    f: Callable,
    raw_inputs: Sequence[np.ndarray],
    rng: np.random.Generator,
    rtol: float = 1e-3,
    floor: float = 1e-6,
    h: float = 1e-3,
) -> float:
    """Worst elementwise excess of |analytic - fd| over max(rtol*|fd|, floor).

    A return value <= 1.0 means every element passed.
    """
    analytic, numeric = fd_and_analytic(f, raw_inputs, rng, h=h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        tol = np.maximum(rtol * np.abs(n), floor)
        ratio = np.abs(a - n) / tol
        if ratio.size:
            worst = max(worst, float(ratio.max()))
    return worst
