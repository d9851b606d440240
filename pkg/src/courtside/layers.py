"""Shared trainable building blocks: linears, attention, demodulated linears.

Parameters live in flat name->Tensor dicts so the optimizer and checkpoint IO
can treat every model the same way.
"""

from __future__ import annotations

import numpy as np

from . import numerics as N
from .numerics import Tensor


def init_normal(params: dict[str, Tensor], name: str, shape, rng, std: float = 0.02) -> None:
    params[name] = Tensor(rng.standard_normal(shape, dtype=np.float32) * np.float32(std))


def init_zeros(params: dict[str, Tensor], name: str, shape) -> None:
    params[name] = Tensor(np.zeros(shape, dtype=np.float32))


def init_ones(params: dict[str, Tensor], name: str, shape) -> None:
    params[name] = Tensor(np.ones(shape, dtype=np.float32))


def init_linear(params: dict[str, Tensor], name: str, d_in: int, d_out: int, rng, std: float = 0.02) -> None:
    init_normal(params, f"{name}.w", (d_in, d_out), rng, std)
    init_zeros(params, f"{name}.b", (d_out,))


def linear(params: dict[str, Tensor], name: str, x: Tensor) -> Tensor:
    return N.add(N.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def init_layernorm(params: dict[str, Tensor], name: str, dim: int) -> None:
    init_ones(params, f"{name}.g", (dim,))
    init_zeros(params, f"{name}.b", (dim,))


def layer_norm(params: dict[str, Tensor], name: str, x: Tensor) -> Tensor:
    return N.add(N.mul(N.layernorm(x), params[f"{name}.g"]), params[f"{name}.b"])


def sinusoidal_embedding(values, dim: int) -> np.ndarray:
    """Vaswani-style sin/cos features of scalar inputs; returns (..., dim) float32."""
    if dim % 2 != 0:
        raise ValueError(f"sinusoidal embedding dim must be even, got {dim}")
    v = np.asarray(values, dtype=np.float64)
    half = dim // 2
    freqs = 1.0 / (10000.0 ** (np.arange(half) / half))
    ang = v[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1).astype(np.float32)


def init_attention(params: dict[str, Tensor], name: str, width: int, rng, std: float = 0.02) -> None:
    for part in ("wq", "wk", "wv", "wo"):
        init_linear(params, f"{name}.{part}", width, width, rng, std)


def attention(
    params: dict[str, Tensor],
    name: str,
    x: Tensor,
    heads: int,
    rel_bias: Tensor | None = None,
) -> Tensor:
    """Bidirectional multi-head self-attention over (B, S, E) tokens.

    `rel_bias` (heads, S, S) is added to the logits; it broadcasts across the
    batch so one bias table serves every sample.
    """
    b, s, e = x.shape
    if e % heads != 0:
        raise ValueError(f"width {e} not divisible by heads {heads}")
    dh = e // heads

    def split_heads(t: Tensor) -> Tensor:
        return N.transpose(N.reshape(t, (b, s, heads, dh)), (0, 2, 1, 3))

    q = split_heads(linear(params, f"{name}.wq", x))
    k = split_heads(linear(params, f"{name}.wk", x))
    v = split_heads(linear(params, f"{name}.wv", x))
    logits = N.mul(N.matmul(q, N.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    if rel_bias is not None:
        logits = N.add(logits, rel_bias)
    att = N.softmax(logits)
    out = N.matmul(att, v)  # (B, H, S, dh)
    out = N.reshape(N.transpose(out, (0, 2, 1, 3)), (b, s, e))
    return linear(params, f"{name}.wo", out)


def init_feedforward(params: dict[str, Tensor], name: str, width: int, hidden: int, rng, std: float = 0.02) -> None:
    init_linear(params, f"{name}.w1", width, hidden, rng, std)
    init_linear(params, f"{name}.w2", hidden, width, rng, std)


def feedforward(params: dict[str, Tensor], name: str, x: Tensor) -> Tensor:
    return linear(params, f"{name}.w2", N.gelu(linear(params, f"{name}.w1", x)))


def init_encoder_block(params: dict[str, Tensor], name: str, width: int, rng, ff_mult: int = 4) -> None:
    init_layernorm(params, f"{name}.ln1", width)
    init_attention(params, f"{name}.attn", width, rng)
    init_layernorm(params, f"{name}.ln2", width)
    init_feedforward(params, f"{name}.ff", width, ff_mult * width, rng)


def encoder_block(
    params: dict[str, Tensor],
    name: str,
    x: Tensor,
    heads: int,
    rel_bias: Tensor | None = None,
) -> Tensor:
    """Pre-norm transformer encoder block: x + attn(ln(x)), then x + ff(ln(x))."""
    x = N.add(x, attention(params, f"{name}.attn", layer_norm(params, f"{name}.ln1", x), heads, rel_bias))
    x = N.add(x, feedforward(params, f"{name}.ff", layer_norm(params, f"{name}.ln2", x)))
    return x


def weight_demodulate(w: Tensor, style: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale columns of w (out, in) by `style`, then renormalize each output row.

    W'_{oi} = W_{oi} * style_i;  W''_o = W'_o / sqrt(sum_i W'^2_{oi} + eps).
    A batched style (B, in) yields per-sample weights (B, out, in). The result
    is invariant to rescaling `style` by any positive constant (up to eps).
    """
    if style.ndim == 1:
        scaled = N.mul(w, style)  # (out, in) * (in,)
    elif style.ndim == 2:
        scaled = N.mul(w, N.reshape(style, (style.shape[0], 1, style.shape[1])))
    else:
        raise ValueError(f"weight_demodulate: style must be 1-D or 2-D, got {style.shape}")
    norm = N.sqrt(N.add(N.sum_(N.mul(scaled, scaled), axis=-1, keepdims=True), eps))
    return N.div(scaled, norm)


def demod_linear(
    params: dict[str, Tensor],
    name: str,
    x: Tensor,
    cond: Tensor,
) -> Tensor:
    """Linear layer whose weights are demodulated per sample by a style vector.

    `cond` (B, C) runs through this layer's style affine to produce the style;
    the style affine bias starts at one and the base weight at the identity,
    so training begins near an identity map and conditioning is learned.

    Same map as `weight_demodulate` followed by a batched matmul, factored so
    only flat matrix products run: scale the inputs by the style, multiply by
    the shared weight, then divide by each sample's demodulation norms. That
    avoids materializing a (B, out, in) weight stack per call.
    """
    b, s, d_in = x.shape
    style = linear(params, f"{name}.style", cond)  # (B, in)
    w = params[f"{name}.w"]  # (out, in)
    d_out = w.shape[0]
    xs = N.mul(x, N.reshape(style, (b, 1, d_in)))
    flat = N.matmul(N.reshape(xs, (b * s, d_in)), N.transpose(w))  # (B*S, out)
    norm2 = N.matmul(N.mul(style, style), N.transpose(N.mul(w, w)))  # (B, out)
    y = N.div(
        N.reshape(flat, (b, s, d_out)),
        N.reshape(N.sqrt(N.add(norm2, 1e-8)), (b, 1, d_out)),
    )
    return N.add(y, params[f"{name}.b"])


def init_demod_linear(
    params: dict[str, Tensor],
    name: str,
    width: int,
    cond_dim: int,
    rng,
    std: float = 0.02,
) -> None:
    base = np.eye(width, dtype=np.float32)
    base += rng.standard_normal((width, width), dtype=np.float32) * np.float32(std)
    params[f"{name}.w"] = Tensor(base)
    init_zeros(params, f"{name}.b", (width,))
    init_normal(params, f"{name}.style.w", (cond_dim, width), rng, std)
    params[f"{name}.style.b"] = Tensor(np.ones(width, dtype=np.float32))


def init_demod_affine(
    params: dict[str, Tensor],
    name: str,
    d_in: int,
    d_out: int,
    cond_dim: int,
    rng,
    std: float = 0.25,
) -> None:
    """Rectangular variant of init_demod_linear; no identity base to start from."""
    init_normal(params, f"{name}.w", (d_out, d_in), rng, std)
    init_zeros(params, f"{name}.b", (d_out,))
    init_normal(params, f"{name}.style.w", (cond_dim, d_in), rng, std)
    params[f"{name}.style.b"] = Tensor(np.ones(d_in, dtype=np.float32))
