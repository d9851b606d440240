"""Masked denoising training over windows drawn from recorded episodes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .. import numerics as N
from ..actiontext import (
    AggregatorConfig,
    Vocabulary,
    encode_action_batch,
    freeze_pad_row,
    init_aggregator,
)
from ..numerics import AdamState, Tape, Tensor, adam_step, backward, lr_at, make_rng
from ..stateseq import ActionTrack, PropertyLayout, expand_state_mask, random_masks
from .model import AnimationModel, TemporalModelConfig, estimate_noise, init_temporal_model
from .schedule import NoiseSchedule


class EpisodeData(NamedTuple):
    """One recorded episode: states (L, D), per-object labels (A rows of L), rate."""

    states: np.ndarray
    labels: list[list[str]]
    framerate: float


class TrainingExample(NamedTuple):
    """A fixed-length window cut from an episode at some subsampled rate."""

    values: np.ndarray
    labels: list[list[str]]
    framerate: float


@dataclass
class TrainConfig:
    steps: int = 20000
    batch_size: int = 8
    base_lr: float = 1e-4
    warmup: int = 1000
    seq_len: int = 16
    seed: int = 0
    log_every: int = 200


def draw_example(episode: EpisodeData, seq_len: int, rng) -> TrainingExample:
    """Cut a window of seq_len states at a random stride and offset."""
    states = np.asarray(episode.states, dtype=np.float32)
    length = states.shape[0]
    if seq_len < 2 or length < seq_len:
        raise ValueError(f"draw_example: episode of {length} states cannot fill a window of {seq_len}")
    max_stride = (length - 1) // (seq_len - 1)
    stride = int(rng.integers(1, max_stride + 1))
    span = (seq_len - 1) * stride + 1
    start = int(rng.integers(0, length - span + 1))
    idx = start + stride * np.arange(seq_len)
    labels = [[row[j] for j in idx] for row in episode.labels]
    return TrainingExample(states[idx], labels, episode.framerate / stride)


def masked_noise_loss(
    eps_hat: Tensor,
    eps: np.ndarray,
    m_state: np.ndarray,
    layout: PropertyLayout,
) -> tuple[Tensor, int]:
    """Squared error averaged over generated cells, then over the batch.

    A cell is one (property, timestep) pair; its error is the squared norm
    across the property's components. Samples with nothing to generate are
    skipped; the second return value counts them. With no active samples the
    loss is an exact zero with no gradient.
    """
    b = eps.shape[0]
    cells = (1.0 - m_state).sum(axis=(1, 2))
    active = int((cells > 0).sum())
    if active == 0:
        return Tensor(np.zeros((), dtype=np.float32)), b
    m_exp = expand_state_mask(m_state, layout)
    per_sample = np.where(cells > 0, 1.0 / np.maximum(cells, 1.0), 0.0) / active
    weight = ((1.0 - m_exp) * per_sample[:, None, None]).astype(np.float32)
    diff = N.sub(eps_hat, eps.astype(np.float32))
    return N.sum_(N.mul(N.mul(diff, diff), weight)), b - active


def training_step(
    model: AnimationModel,
    schedule: NoiseSchedule,
    examples: list[TrainingExample],
    rng,
) -> tuple[float, dict[str, np.ndarray], int]:
    """One batch of the denoising objective; returns (loss, grads, skipped)."""
    if not examples:
        raise ValueError("training_step: empty batch")
    layout = model.layout
    p, a = layout.num_properties, layout.num_actionable
    b = len(examples)
    t = examples[0].values.shape[0]
    s_raw = np.stack([ex.values for ex in examples])
    s_n = model.normalize(s_raw)

    m_state = np.zeros((b, p, t), dtype=np.float32)
    m_action = np.zeros((b, a, t), dtype=np.float32)
    tracks: list[ActionTrack] = []
    for i, ex in enumerate(examples):
        masks = random_masks(t, p, a, rng)
        m_state[i] = masks.m_state
        kept = [
            [lab if (masks.m_action[ai, ti] == 1.0 and lab) else "" for ti, lab in enumerate(row)]
            for ai, row in enumerate(ex.labels)
        ]
        track = ActionTrack(layout, kept)
        m_action[i] = track.label_mask()
        tracks.append(track)

    m_exp = expand_state_mask(m_state, layout)
    k = rng.integers(1, schedule.num_steps + 1, size=b)
    eps = rng.standard_normal(s_n.shape).astype(np.float32)
    ab = schedule.alpha_bar[k - 1][:, None, None]
    x_k = ((np.sqrt(ab) * s_n + np.sqrt(1.0 - ab) * eps) * (1.0 - m_exp)).astype(np.float32)
    s_cond = (s_n * m_exp).astype(np.float32)
    rates = np.array([ex.framerate for ex in examples], dtype=np.float64)

    all_params = model.all_params()
    with Tape() as tape:
        if a > 0:
            a_emb = encode_action_batch(tracks, m_action, model.text_params, model.text_cfg, model.vocab)
        else:
            a_emb = np.zeros((b, 0, t, model.cfg.text_dim), dtype=np.float32)
        eps_hat = estimate_noise(
            model.params, model.cfg, layout, x_k, s_cond, m_state, a_emb, m_action, k, rates
        )
        loss, skipped = masked_noise_loss(eps_hat, eps, m_state, layout)
        grad_map = backward(loss, tape, list(all_params.values()))
    grads = {name: grad_map[tensor] for name, tensor in all_params.items()}
    freeze_pad_row(grads)
    return float(loss.data), grads, skipped


def compute_normalization(episodes: list[EpisodeData]) -> tuple[np.ndarray, np.ndarray]:
    """Per-component mean and std over every state in the corpus."""
    stacked = np.concatenate([np.asarray(ep.states, dtype=np.float64) for ep in episodes])
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), 1e-6)
    return mean.astype(np.float32), std.astype(np.float32)


def train(
    episodes: list[EpisodeData],
    layout: PropertyLayout,
    schedule: NoiseSchedule,
    cfg: TemporalModelConfig,
    text_cfg: AggregatorConfig,
    tcfg: TrainConfig,
    vocab: Vocabulary | None = None,
    log=print,
) -> AnimationModel:
    """Train a fresh model on a corpus of episodes."""
    if not episodes:
        raise ValueError("train: empty corpus")
    if vocab is None:
        vocab = Vocabulary.from_corpus(lab for ep in episodes for row in ep.labels for lab in row if lab)
    rng_init = make_rng(tcfg.seed, stream=1)
    rng_data = make_rng(tcfg.seed, stream=2)
    mean, std = compute_normalization(episodes)
    model = AnimationModel(
        layout=layout,
        cfg=cfg,
        text_cfg=text_cfg,
        vocab=vocab,
        params=init_temporal_model(layout, cfg, rng_init),
        text_params=init_aggregator(vocab.size, text_cfg, rng_init),
        norm_mean=mean,
        norm_std=std,
    )
    all_params = model.all_params()
    opt = AdamState.init(all_params)
    running, skipped_total = 0.0, 0
    for step in range(1, tcfg.steps + 1):
        batch = [
            draw_example(episodes[int(rng_data.integers(len(episodes)))], tcfg.seq_len, rng_data)
            for _ in range(tcfg.batch_size)
        ]
        loss, grads, skipped = training_step(model, schedule, batch, rng_data)
        lr = lr_at(step, tcfg.base_lr, tcfg.warmup, tcfg.steps)
        adam_step(all_params, grads, opt, lr)
        running += loss
        skipped_total += skipped
        if tcfg.log_every and step % tcfg.log_every == 0:
            log(
                f"step {step}/{tcfg.steps} loss {running / tcfg.log_every:.5f} "
                f"lr {lr:.3g} skipped {skipped_total}"
            )
            running, skipped_total = 0.0, 0
    return model
