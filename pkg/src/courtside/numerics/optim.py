"""Adam with bias correction and the warmup-then-cosine learning-rate rule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: dict[str, Tensor], **kwargs) -> "AdamState":
        m = {k: np.zeros(p.shape, dtype=p.dtype) for k, p in params.items()}
        v = {k: np.zeros(p.shape, dtype=p.dtype) for k, p in params.items()}
        return cls(m=m, v=v, **kwargs)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[dict[str, Tensor], AdamState]:
    """One Adam update in place; refuses the step on any NaN gradient."""
    if lr <= 0.0 and lr != 0.0:
        raise ValueError(f"adam_step: lr must be >= 0, got {lr}")
    for name in params:
        g = grads[name]
        if np.isnan(g).any():
            raise ValueError(f"adam_step: NaN gradient for parameter {name!r}, step refused")
        if g.shape != params[name].shape:
            raise ValueError(
                f"adam_step: gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {params[name].shape}"
            )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / corr1
        v_hat = v / corr2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
    return params, state


def lr_at(step: int, base_lr: float, warmup: int, total: int) -> float:
    """Linear ramp 0 -> base_lr over `warmup` steps, then cosine decay to 0 at `total`."""
    if warmup > total:
        raise ValueError(f"lr_at: warmup {warmup} exceeds total {total}")
    step = min(max(int(step), 0), int(total))
    if warmup > 0 and step < warmup:
        return base_lr * step / warmup
    if total == warmup:
        return base_lr if step <= warmup else 0.0
    frac = (step - warmup) / (total - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
