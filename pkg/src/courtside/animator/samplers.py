"""Reverse-process samplers and the masked inference procedures.

All sampling runs in the model's normalized space; conditioning entries are
copied back verbatim at the end, so known values survive bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..actiontext import encode_action_batch
from ..stateseq import ActionTrack, MaskPair, PropertyLayout, StateSequence, expand_state_mask
from .model import AnimationModel, estimate_noise
from .schedule import NoiseSchedule


def ddpm_step(x_k: np.ndarray, eps_hat: np.ndarray, k: int, schedule: NoiseSchedule, rng) -> np.ndarray:
    """One ancestral reverse step from x_k to x_{k-1}; the last step adds no noise."""
    if not 1 <= k <= schedule.num_steps:
        raise ValueError(f"ddpm_step: step {k} outside [1, {schedule.num_steps}]")
    x_k = np.asarray(x_k)
    beta = float(schedule.beta[k - 1])
    alpha = float(schedule.alpha[k - 1])
    ab = float(schedule.alpha_bar[k - 1])
    mu = (x_k - (beta / math.sqrt(1.0 - ab)) * np.asarray(eps_hat)) / math.sqrt(alpha)
    if k == 1:
        return mu
    sigma = math.sqrt(float(schedule.posterior_var[k - 1]))
    z = rng.standard_normal(x_k.shape).astype(x_k.dtype, copy=False)
    return mu + sigma * z


def ddim_step(x_k: np.ndarray, eps_hat: np.ndarray, k: int, k_next: int, schedule: NoiseSchedule) -> np.ndarray:
    """Deterministic reverse jump from step k to k_next; k_next = 0 yields x0."""
    if not 0 <= k_next < k <= schedule.num_steps:
        raise ValueError(f"ddim_step: need 0 <= k_next < k <= {schedule.num_steps}, got k={k}, k_next={k_next}")
    x_k = np.asarray(x_k)
    eps_hat = np.asarray(eps_hat)
    ab_k = schedule.alpha_bar_at(k)
    ab_n = schedule.alpha_bar_at(k_next)
    x0 = (x_k - math.sqrt(1.0 - ab_k) * eps_hat) / math.sqrt(ab_k)
    return math.sqrt(ab_n) * x0 + math.sqrt(1.0 - ab_n) * eps_hat


def ddim_grid(num_steps: int, steps: int) -> list[int]:
    """Uniformly spaced step indices from num_steps down to 0, inclusive."""
    if not 1 <= steps <= num_steps:
        raise ValueError(f"ddim_grid: need 1 <= steps <= {num_steps}, got {steps}")
    ks = np.round(np.linspace(num_steps, 0, steps + 1)).astype(int)
    return sorted(set(int(k) for k in ks), reverse=True)


@dataclass
class ConditioningBundle:
    """Known entries, action text, masks and framerate for one generation."""

    s_c: StateSequence
    a_c: ActionTrack
    masks: MaskPair
    framerate: float

    def __post_init__(self):
        layout = self.s_c.layout
        t = self.s_c.num_timesteps
        if self.a_c.layout is not layout and self.a_c.layout != layout:
            raise ValueError("bundle: action track layout differs from state layout")
        if layout.num_actionable > 0 and self.a_c.num_timesteps != t:
            raise ValueError(
                f"bundle: action track covers {self.a_c.num_timesteps} timesteps, state covers {t}"
            )
        if self.masks.m_state.shape != (layout.num_properties, t):
            raise ValueError(f"bundle: state mask shape {self.masks.m_state.shape} does not match layout")
        if self.masks.m_action.shape != (layout.num_actionable, t):
            raise ValueError(f"bundle: action mask shape {self.masks.m_action.shape} does not match layout")
        self.a_c.check_against_mask(self.masks.m_action)
        if not self.framerate > 0:
            raise ValueError(f"bundle: framerate must be positive, got {self.framerate}")

    @property
    def layout(self) -> PropertyLayout:
        return self.s_c.layout

    @classmethod
    def empty(cls, layout: PropertyLayout, t: int, framerate: float) -> "ConditioningBundle":
        """Fully generated sequence: nothing known, no action text."""
        return cls(
            s_c=StateSequence(layout, np.zeros((t, layout.state_dim), dtype=np.float32), framerate),
            a_c=ActionTrack(layout, [[""] * t for _ in range(layout.num_actionable)]),
            masks=MaskPair(
                np.zeros((layout.num_properties, t), dtype=np.float32),
                np.zeros((layout.num_actionable, t), dtype=np.float32),
            ),
            framerate=framerate,
        )


def _sample_batch(
    model: AnimationModel,
    s_c_raw: np.ndarray,
    m_state: np.ndarray,
    tracks: list[ActionTrack],
    m_action: np.ndarray,
    framerates: np.ndarray,
    schedule: NoiseSchedule,
    rng,
    sampler: str,
    ddim_steps: int,
) -> np.ndarray:
    """Reverse chain over a batch; returns denormalized values (B, T, D).

    Entries with m_state = 1 in the result are meaningless; the caller
    composes them from the raw conditioning.
    """
    layout = model.layout
    b, t, d = s_c_raw.shape
    free = (1.0 - expand_state_mask(m_state, layout)).astype(np.float32)
    s_cond = (model.normalize(s_c_raw) * (1.0 - free)).astype(np.float32)
    if layout.num_actionable > 0:
        a_emb = encode_action_batch(tracks, m_action, model.text_params, model.text_cfg, model.vocab)
    else:
        a_emb = np.zeros((b, 0, t, model.cfg.text_dim), dtype=np.float32)

    x = (rng.standard_normal((b, t, d)).astype(np.float32)) * free
    if sampler == "ddpm":
        for k in range(schedule.num_steps, 0, -1):
            eps_hat = estimate_noise(
                model.params, model.cfg, layout, x, s_cond, m_state, a_emb, m_action,
                np.full(b, k), framerates,
            ).data
            x = ddpm_step(x, eps_hat, k, schedule, rng) * free
    elif sampler == "ddim":
        grid = ddim_grid(schedule.num_steps, ddim_steps)
        for k, k_next in zip(grid[:-1], grid[1:]):
            eps_hat = estimate_noise(
                model.params, model.cfg, layout, x, s_cond, m_state, a_emb, m_action,
                np.full(b, k), framerates,
            ).data
            x = ddim_step(x, eps_hat, k, k_next, schedule) * free
    else:
        raise ValueError(f"unknown sampler {sampler!r}, expected 'ddpm' or 'ddim'")
    return model.denormalize(x)


def sample(
    model: AnimationModel,
    bundle: ConditioningBundle,
    schedule: NoiseSchedule,
    rng,
    sampler: str = "ddpm",
    ddim_steps: int = 50,
) -> StateSequence:
    """Generate the unknown entries of a sequence under the bundle's masks."""
    layout = model.layout
    if bundle.layout != layout:
        raise ValueError("sample: bundle layout does not match model layout")
    m_s = bundle.masks.m_state
    if np.all(m_s == 1.0):
        return StateSequence(layout, bundle.s_c.values.copy(), bundle.framerate)
    out = _sample_batch(
        model,
        bundle.s_c.values[None],
        m_s[None],
        [bundle.a_c],
        bundle.masks.m_action[None],
        np.array([bundle.framerate], dtype=np.float64),
        schedule,
        rng,
        sampler,
        ddim_steps,
    )[0]
    m_exp = expand_state_mask(m_s, layout)
    values = np.where(m_exp == 1.0, bundle.s_c.values, out.astype(np.float32))
    return StateSequence(layout, values, bundle.framerate)


def sample_many(
    model: AnimationModel,
    bundles: list[ConditioningBundle],
    schedule: NoiseSchedule,
    rng,
    sampler: str = "ddpm",
    ddim_steps: int = 50,
) -> list[StateSequence]:
    """Sample several bundles of equal length through one batched chain."""
    if not bundles:
        return []
    layout = model.layout
    t = bundles[0].s_c.num_timesteps
    for bu in bundles:
        if bu.layout != layout:
            raise ValueError("sample_many: bundle layout does not match model layout")
        if bu.s_c.num_timesteps != t:
            raise ValueError("sample_many: bundles must share sequence length")
    out = _sample_batch(
        model,
        np.stack([bu.s_c.values for bu in bundles]),
        np.stack([bu.masks.m_state for bu in bundles]),
        [bu.a_c for bu in bundles],
        np.stack([bu.masks.m_action for bu in bundles]),
        np.array([bu.framerate for bu in bundles], dtype=np.float64),
        schedule,
        rng,
        sampler,
        ddim_steps,
    )
    results = []
    for i, bu in enumerate(bundles):
        m_exp = expand_state_mask(bu.masks.m_state, layout)
        values = np.where(m_exp == 1.0, bu.s_c.values, out[i].astype(np.float32))
        results.append(StateSequence(layout, values, bu.framerate))
    return results


def upsample_framerate(
    model: AnimationModel,
    s: StateSequence,
    rate_to: float,
    a_c: ActionTrack | None,
    schedule: NoiseSchedule,
    rng,
    chunk_len: int = 16,
    sampler: str = "ddpm",
    ddim_steps: int = 50,
) -> StateSequence:
    """Fill a higher framerate in between existing states, chunk by chunk.

    The input states become keyframes every r = rate_to / s.framerate steps
    and are preserved bit for bit; action labels ride along on the keyframes.
    Chunks start and end on a keyframe and never exceed chunk_len timesteps.
    """
    layout = model.layout
    ratio = rate_to / s.framerate
    r = int(round(ratio))
    if abs(ratio - r) > 1e-9 or r < 2:
        raise ValueError(f"upsample: target rate must be an integer multiple >= 2x, got ratio {ratio}")
    t1 = s.num_timesteps
    if t1 < 2:
        raise ValueError("upsample: need at least two states to fill between")
    if a_c is not None:
        if a_c.layout != layout:
            raise ValueError("upsample: action track layout does not match model layout")
        if layout.num_actionable > 0 and a_c.num_timesteps != t1:
            raise ValueError("upsample: action track length does not match sequence")
    kf_per_chunk = (chunk_len - 1) // r
    if kf_per_chunk < 1:
        raise ValueError(f"upsample: chunk_len {chunk_len} cannot hold one keyframe interval of {r} steps")

    t2 = (t1 - 1) * r + 1
    values = np.zeros((t2, layout.state_dim), dtype=np.float32)
    values[::r] = s.values
    m_s = np.zeros((layout.num_properties, t2), dtype=np.float32)
    m_s[:, ::r] = 1.0
    labels = [[""] * t2 for _ in range(layout.num_actionable)]
    if a_c is not None:
        for ai in range(layout.num_actionable):
            for ti in range(t1):
                labels[ai][ti * r] = a_c.labels[ai][ti]

    for j0 in range(0, t1 - 1, kf_per_chunk):
        j1 = min(j0 + kf_per_chunk, t1 - 1)
        lo, hi = j0 * r, j1 * r
        sl = slice(lo, hi + 1)
        chunk_m = m_s[:, sl].copy()
        chunk_track = ActionTrack(layout, [row[sl] for row in labels])
        chunk = ConditioningBundle(
            s_c=StateSequence(layout, values[sl] * expand_state_mask(chunk_m, layout), rate_to),
            a_c=chunk_track,
            masks=MaskPair(chunk_m, chunk_track.label_mask()),
            framerate=rate_to,
        )
        values[sl] = sample(model, chunk, schedule, rng, sampler=sampler, ddim_steps=ddim_steps).values
    return StateSequence(layout, values, rate_to)


def autoregressive_extend(
    model: AnimationModel,
    s: StateSequence,
    t_new: int,
    tail_bundle: ConditioningBundle | None,
    schedule: NoiseSchedule,
    rng,
    sampler: str = "ddpm",
    ddim_steps: int = 50,
) -> StateSequence:
    """Advance a sequence by t_new steps: drop the oldest states, keep the
    rest as known context, and generate the vacated tail.

    tail_bundle, when given, supplies conditioning for just the new t_new
    timesteps. The retained states come back bit for bit.
    """
    layout = model.layout
    t = s.num_timesteps
    if not 0 <= t_new < t:
        raise ValueError(f"extend: t_new must be in [0, {t}), got {t_new}")
    keep = t - t_new
    values = np.zeros((t, layout.state_dim), dtype=np.float32)
    values[:keep] = s.values[t_new:]
    m_s = np.zeros((layout.num_properties, t), dtype=np.float32)
    m_s[:, :keep] = 1.0
    labels = [[""] * t for _ in range(layout.num_actionable)]
    m_a = np.zeros((layout.num_actionable, t), dtype=np.float32)
    if tail_bundle is not None:
        if tail_bundle.layout != layout:
            raise ValueError("extend: tail bundle layout does not match model layout")
        if tail_bundle.s_c.num_timesteps != t_new:
            raise ValueError(
                f"extend: tail bundle covers {tail_bundle.s_c.num_timesteps} timesteps, expected {t_new}"
            )
        tail_exp = expand_state_mask(tail_bundle.masks.m_state, layout)
        values[keep:] = tail_bundle.s_c.values * tail_exp
        m_s[:, keep:] = tail_bundle.masks.m_state
        m_a[:, keep:] = tail_bundle.masks.m_action
        for ai in range(layout.num_actionable):
            for j in range(t_new):
                labels[ai][keep + j] = tail_bundle.a_c.labels[ai][j]
    bundle = ConditioningBundle(
        s_c=StateSequence(layout, values, s.framerate),
        a_c=ActionTrack(layout, labels),
        masks=MaskPair(m_s, m_a),
        framerate=s.framerate,
    )
    return sample(model, bundle, schedule, rng, sampler=sampler, ddim_steps=ddim_steps)
