"""Transformer noise estimator over property and action tokens.

Every (property, timestep) pair becomes one token, projected through separate
parameter sets depending on whether the entry is generated or conditioning.
Action embeddings get one token per (actionable object, timestep). Attention
uses a relative-position bias over timestep distance, and each attention and
feedforward block is followed by a linear layer whose weights are demodulated
by a style vector computed from the diffusion step, the framerate, and
per-timestep mask occupancy profiles.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import numerics as N
from ..actiontext import AggregatorConfig, Vocabulary
from ..layers import (
    attention,
    demod_linear,
    feedforward,
    init_attention,
    init_demod_linear,
    init_feedforward,
    init_layernorm,
    init_linear,
    init_normal,
    layer_norm,
    linear,
    sinusoidal_embedding,
)
from ..numerics import Tensor
from ..stateseq import PropertyLayout

CONFIG_NAME = "model.json"
VOCAB_NAME = "vocab.txt"


@dataclass(frozen=True)
class TemporalModelConfig:
    layers: int = 4
    heads: int = 4
    width: int = 256
    rel_clip: int = 16
    step_embed_dim: int = 64
    rate_embed_dim: int = 64
    mask_bins: int = 16
    text_dim: int = 128

    @property
    def cond_dim(self) -> int:
        return self.step_embed_dim + self.rate_embed_dim + 2 * self.mask_bins


def init_temporal_model(layout: PropertyLayout, cfg: TemporalModelConfig, rng) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    for p in layout.properties:
        init_linear(params, f"prop.{p.name}.gen", p.dim, cfg.width, rng)
        init_linear(params, f"prop.{p.name}.cond", p.dim, cfg.width, rng)
        init_linear(params, f"prop.{p.name}.out", cfg.width, p.dim, rng)
    for obj in layout.actionable:
        init_linear(params, f"act.{obj}.in", cfg.text_dim, cfg.width, rng)
    init_normal(params, "rel_bias", (cfg.heads, 2 * cfg.rel_clip + 1), rng)
    for i in range(cfg.layers):
        init_layernorm(params, f"blk{i}.ln1", cfg.width)
        init_attention(params, f"blk{i}.attn", cfg.width, rng)
        init_demod_linear(params, f"blk{i}.demod1", cfg.width, cfg.cond_dim, rng)
        init_layernorm(params, f"blk{i}.ln2", cfg.width)
        init_feedforward(params, f"blk{i}.ff", cfg.width, 4 * cfg.width, rng)
        init_demod_linear(params, f"blk{i}.demod2", cfg.width, cfg.cond_dim, rng)
    init_layernorm(params, "ln_f", cfg.width)
    return params


def _resample_profile(profile: np.ndarray, bins: int) -> np.ndarray:
    """Resize per-timestep occupancy (B, T) to a fixed number of bins."""
    b, t = profile.shape
    if t == bins:
        return profile.astype(np.float64)
    if t == 1:
        return np.repeat(profile.astype(np.float64), bins, axis=1)
    src = np.linspace(0.0, 1.0, t)
    dst = np.linspace(0.0, 1.0, bins)
    return np.stack([np.interp(dst, src, row) for row in profile])


def _conditioning_features(
    k: np.ndarray,
    framerate: np.ndarray,
    m_state: np.ndarray,
    m_action: np.ndarray,
    cfg: TemporalModelConfig,
) -> np.ndarray:
    ke = sinusoidal_embedding(k, cfg.step_embed_dim)
    re = sinusoidal_embedding(framerate, cfg.rate_embed_dim)
    ps = _resample_profile(m_state.mean(axis=1), cfg.mask_bins)
    if m_action.shape[1] > 0:
        pa = _resample_profile(m_action.mean(axis=1), cfg.mask_bins)
    else:
        pa = np.zeros((m_action.shape[0], cfg.mask_bins))
    return np.concatenate([ke, re, ps, pa], axis=-1, dtype=np.float32)


def _relative_bias(params: dict[str, Tensor], cfg: TemporalModelConfig, t_index: np.ndarray, slots: int) -> Tensor:
    """Per-head logit bias from clipped timestep distance, shape (H, S, S)."""
    tok_t = np.tile(t_index, slots)
    delta = tok_t[:, None] - tok_t[None, :]
    bucket = np.clip(delta, -cfg.rel_clip, cfg.rel_clip) + cfg.rel_clip
    table = N.transpose(params["rel_bias"])  # (2*clip+1, H)
    return N.transpose(N.gather(table, bucket), (2, 0, 1))


def estimate_noise(
    params: dict[str, Tensor],
    cfg: TemporalModelConfig,
    layout: PropertyLayout,
    s_noisy: np.ndarray,
    s_cond: np.ndarray,
    m_state: np.ndarray,
    a_emb,
    m_action: np.ndarray,
    k,
    framerate,
    t_index: np.ndarray | None = None,
) -> Tensor:
    """Predict the noise in s_noisy given conditioning entries and actions.

    s_noisy (B, T, D) must be zero where m_state = 1 and s_cond (B, T, D) zero
    where m_state = 0; a_emb (B, A, T, text_dim) must be zero where
    m_action = 0. k and framerate broadcast to (B,). t_index gives absolute
    timestep indices (default 0..T-1); only their differences matter. Returns
    a (B, T, D) tensor; entries under m_state = 1 are produced but carry no
    meaning.
    """
    s_noisy = np.asarray(s_noisy, dtype=np.float32) if not isinstance(s_noisy, np.ndarray) else s_noisy
    s_cond = np.asarray(s_cond, dtype=np.float32) if not isinstance(s_cond, np.ndarray) else s_cond
    if s_noisy.ndim != 3:
        raise ValueError(f"estimate_noise: expected (B, T, D) input, got {s_noisy.shape}")
    b, t, d = s_noisy.shape
    p, a = layout.num_properties, layout.num_actionable
    if d != layout.state_dim:
        raise ValueError(f"estimate_noise: state dim {d} does not match layout dim {layout.state_dim}")
    if s_cond.shape != s_noisy.shape:
        raise ValueError(f"estimate_noise: conditioning shape {s_cond.shape} does not match {s_noisy.shape}")
    m_state = np.asarray(m_state, dtype=np.float32)
    m_action = np.asarray(m_action, dtype=np.float32)
    if m_state.shape != (b, p, t):
        raise ValueError(f"estimate_noise: state mask shape {m_state.shape}, expected {(b, p, t)}")
    if m_action.shape != (b, a, t):
        raise ValueError(f"estimate_noise: action mask shape {m_action.shape}, expected {(b, a, t)}")
    emb = a_emb if isinstance(a_emb, Tensor) else Tensor(np.asarray(a_emb, dtype=np.float32))
    if emb.shape != (b, a, t, cfg.text_dim):
        raise ValueError(f"estimate_noise: action embedding shape {emb.shape}, expected {(b, a, t, cfg.text_dim)}")
    if t_index is None:
        t_index = np.arange(t, dtype=np.int64)
    else:
        t_index = np.asarray(t_index, dtype=np.int64)
        if t_index.shape != (t,):
            raise ValueError(f"estimate_noise: t_index shape {t_index.shape}, expected {(t,)}")
    k = np.broadcast_to(np.asarray(k, dtype=np.float64), (b,))
    framerate = np.broadcast_to(np.asarray(framerate, dtype=np.float64), (b,))

    cond = Tensor(_conditioning_features(k, framerate, m_state, m_action, cfg))

    tokens = []
    slices = layout.slices()
    for i, spec in enumerate(layout.properties):
        sl = slices[spec.name]
        gen = linear(params, f"prop.{spec.name}.gen", Tensor(s_noisy[:, :, sl]))
        cnd = linear(params, f"prop.{spec.name}.cond", Tensor(s_cond[:, :, sl]))
        mi = m_state[:, i, :, None]
        tokens.append(N.add(N.mul(gen, 1.0 - mi), N.mul(cnd, mi)))
    for ai, obj in enumerate(layout.actionable):
        tokens.append(linear(params, f"act.{obj}.in", emb[:, ai]))
    x = N.concat(tokens, axis=1)  # (B, (P+A)*T, E)

    bias = _relative_bias(params, cfg, t_index, p + a)
    for li in range(cfg.layers):
        att = attention(params, f"blk{li}.attn", layer_norm(params, f"blk{li}.ln1", x), cfg.heads, bias)
        x = demod_linear(params, f"blk{li}.demod1", N.add(x, att), cond)
        ff = feedforward(params, f"blk{li}.ff", layer_norm(params, f"blk{li}.ln2", x))
        x = demod_linear(params, f"blk{li}.demod2", N.add(x, ff), cond)
    x = layer_norm(params, "ln_f", x)

    outs = []
    for i, spec in enumerate(layout.properties):
        outs.append(linear(params, f"prop.{spec.name}.out", x[:, i * t : (i + 1) * t, :]))
    return N.concat(outs, axis=2)


@dataclass
class AnimationModel:
    """Trained weights plus everything needed to run them on new inputs."""

    layout: PropertyLayout
    cfg: TemporalModelConfig
    text_cfg: AggregatorConfig
    vocab: Vocabulary
    params: dict[str, Tensor]
    text_params: dict[str, Tensor]
    norm_mean: np.ndarray = field(default=None)  # type: ignore[assignment]
    norm_std: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        d = self.layout.state_dim
        if self.norm_mean is None:
            self.norm_mean = np.zeros(d, dtype=np.float32)
        if self.norm_std is None:
            self.norm_std = np.ones(d, dtype=np.float32)
        self.norm_mean = np.asarray(self.norm_mean, dtype=np.float32)
        self.norm_std = np.asarray(self.norm_std, dtype=np.float32)
        if self.norm_mean.shape != (d,) or self.norm_std.shape != (d,):
            raise ValueError("animation model: normalization stats must have shape (state_dim,)")

    def all_params(self) -> dict[str, Tensor]:
        return {**self.params, **self.text_params}

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return ((values - self.norm_mean) / self.norm_std).astype(np.float32)

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return (values * self.norm_std + self.norm_mean).astype(np.float32)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        meta = {
            "layout": self.layout.to_dict(),
            "model": asdict(self.cfg),
            "text": asdict(self.text_cfg),
        }
        (path / CONFIG_NAME).write_text(json.dumps(meta, indent=2) + "\n")
        self.vocab.save(path / VOCAB_NAME)
        arrays = {name: t.data for name, t in self.all_params().items()}
        arrays["norm.mean"] = self.norm_mean
        arrays["norm.std"] = self.norm_std
        N.save_checkpoint(path, arrays)

    @classmethod
    def load(cls, path: str | Path) -> "AnimationModel":
        path = Path(path)
        meta = json.loads((path / CONFIG_NAME).read_text())
        layout = PropertyLayout.from_dict(meta["layout"])
        cfg = TemporalModelConfig(**meta["model"])
        text_cfg = AggregatorConfig(**meta["text"])
        vocab = Vocabulary.load(path / VOCAB_NAME)
        arrays = N.load_checkpoint(path)
        norm_mean = arrays.pop("norm.mean")
        norm_std = arrays.pop("norm.std")
        text_params = {k: Tensor(v) for k, v in arrays.items() if k.startswith("agg.")}
        params = {k: Tensor(v) for k, v in arrays.items() if not k.startswith("agg.")}
        return cls(
            layout=layout,
            cfg=cfg,
            text_cfg=text_cfg,
            vocab=vocab,
            params=params,
            text_params=text_params,
            norm_mean=norm_mean,
            norm_std=norm_std,
        )
