"""Reconstruction and realism metrics plus the four standard inference tasks.

A task names a conditioning pattern (what the sampler gets to see); the metrics
compare generated sequences against held-out ground truth per property: mean
Euclidean distance for fidelity, Frechet distance between pooled per-timestep
property vectors for realism.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .animator import ConditioningBundle, sample_many
from .stateseq import ActionTrack, MaskPair, PropertyLayout, StateSequence, expand_state_mask

TASK_NAMES = ("action_conditioned", "unconditional", "opponent", "completion")
COMPLETION_GAP = (4, 12)


@dataclass(frozen=True)
class TaskSpec:
    name: str

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise ValueError(f"task: unknown name {self.name!r}, expected one of {TASK_NAMES}")

    def masks(self, layout: PropertyLayout, t: int) -> MaskPair:
        return build_task_masks(self, layout, t)


def build_task_masks(task: TaskSpec, layout: PropertyLayout, t: int) -> MaskPair:
    """Conditioning masks for one sequence of length t (1 = known)."""
    p = layout.num_properties
    a = layout.num_actionable
    m_state = np.zeros((p, t), dtype=np.float32)
    m_action = np.zeros((a, t), dtype=np.float32)
    if task.name == "action_conditioned":
        m_state[:, 0] = 1.0
        m_action[:] = 1.0
    elif task.name == "unconditional":
        m_state[:, 0] = 1.0
    elif task.name == "opponent":
        if a < 2:
            raise ValueError("task: the opponent task needs at least two actionable objects")
        known, hidden = layout.actionable[0], layout.actionable[1]
        for i, prop in enumerate(layout.properties):
            if prop.obj == known:
                m_state[i, :] = 1.0
            else:
                # the opponent and everything it interacts with start known at t=0 only
                m_state[i, 0] = 1.0
        m_action[0, :] = 1.0
    else:  # completion
        if t < 16:
            raise ValueError(f"task: completion needs sequences of at least 16 steps, got {t}")
        lo, hi = COMPLETION_GAP
        m_state[:] = 1.0
        m_state[:, lo:hi] = 0.0
        m_action[:] = 1.0
        m_action[:, lo:hi] = 0.0
    return MaskPair(m_state=m_state, m_action=m_action)


# ------------------------------------------------------------------- metrics


def l2_metric(gt: StateSequence, pred: StateSequence) -> dict[str, float]:
    """Per property: mean over timesteps of the Euclidean gt-to-pred distance."""
    if gt.layout != pred.layout:
        raise ValueError("l2_metric: layout mismatch")
    if gt.num_timesteps != pred.num_timesteps:
        raise ValueError(
            f"l2_metric: length mismatch, {gt.num_timesteps} vs {pred.num_timesteps}"
        )
    diff = gt.values.astype(np.float64) - pred.values.astype(np.float64)
    out: dict[str, float] = {}
    for prop, sl in gt.layout.slices().items():
        out[prop] = float(np.linalg.norm(diff[:, sl], axis=1).mean())
    return out


def fit_moments(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and shrunk covariance of a set of vectors, rows = samples."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("fit_moments: need at least 2 sample vectors")
    mu = x.mean(axis=0)
    cov = np.cov(x, rowvar=False).reshape(x.shape[1], x.shape[1])
    cov = cov + 1e-6 * np.eye(x.shape[1])
    return mu, cov


def frechet_from_moments(
    mu_a: np.ndarray, cov_a: np.ndarray, mu_b: np.ndarray, cov_b: np.ndarray
) -> float:
    mu_a = np.atleast_1d(np.asarray(mu_a, dtype=np.float64))
    mu_b = np.atleast_1d(np.asarray(mu_b, dtype=np.float64))
    cov_a = np.atleast_2d(np.asarray(cov_a, dtype=np.float64))
    cov_b = np.atleast_2d(np.asarray(cov_b, dtype=np.float64))
    wa, va = np.linalg.eigh(cov_a)
    root_a = (va * np.sqrt(np.clip(wa, 0.0, None))) @ va.T
    inner = root_a @ cov_b @ root_a
    ws = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    trace_sqrt = float(np.sqrt(np.clip(ws, 0.0, None)).sum())
    delta = mu_a - mu_b
    fd2 = float(delta @ delta) + float(np.trace(cov_a) + np.trace(cov_b)) - 2.0 * trace_sqrt
    return math.sqrt(max(fd2, 0.0))


def frechet_distance(samples_a: np.ndarray, samples_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two sample sets."""
    mu_a, cov_a = fit_moments(samples_a)
    mu_b, cov_b = fit_moments(samples_b)
    return frechet_from_moments(mu_a, cov_a, mu_b, cov_b)


# ------------------------------------------------------------------ protocol


@dataclass(frozen=True)
class EvalRow:
    task: str
    prop: str
    l2: float
    fd: float


@dataclass
class EvalReport:
    rows: list[EvalRow]

    def text(self) -> str:
        lines = ["task\tproperty\tl2\tfd"]
        for r in self.rows:
            lines.append(f"{r.task}\t{r.prop}\t{r.l2:.6f}\t{r.fd:.6f}")
        return "\n".join(lines) + "\n"

    def jsonl(self) -> str:
        return "".join(
            json.dumps({"task": r.task, "property": r.prop, "l2": r.l2, "fd": r.fd}) + "\n"
            for r in self.rows
        )


def _windows(episodes, seq_len: int):
    """Non-overlapping seq_len-frame cuts of every episode, in corpus order."""
    out = []
    for states, actions in episodes:
        total = states.num_timesteps
        for t0 in range(0, total - seq_len + 1, seq_len):
            window_states = StateSequence(
                layout=states.layout,
                values=states.values[t0 : t0 + seq_len].copy(),
                framerate=states.framerate,
            )
            window_actions = ActionTrack(
                layout=states.layout,
                labels=[row[t0 : t0 + seq_len] for row in actions.labels],
            )
            out.append((window_states, window_actions))
    return out


def run_eval(
    model,
    episodes,
    task: TaskSpec,
    rng,
    schedule=None,
    sampler="ddpm",
    ddim_steps: int = 50,
    seq_len: int = 16,
    batch_size: int = 64,
) -> EvalReport:
    """Sample every held-out window under the task's masks and score it.

    episodes is a list of (StateSequence, ActionTrack) pairs. sampler is
    "ddpm", "ddim", or a callable mapping (bundles, rng) to sampled sequences,
    which stands in for the model in oracle tests.
    """
    windows = _windows(episodes, seq_len)
    if not windows:
        raise ValueError("run_eval: empty test split")
    layout = windows[0][0].layout
    masks = build_task_masks(task, layout, seq_len)
    m_exp = expand_state_mask(masks.m_state, layout)

    bundles = []
    for gt_states, gt_actions in windows:
        # conditioning may only reveal labels the data actually has
        m_action = masks.m_action * gt_actions.label_mask()
        labels = [
            [lab if m_action[i, t] == 1.0 else "" for t, lab in enumerate(row)]
            for i, row in enumerate(gt_actions.labels)
        ]
        bundles.append(
            ConditioningBundle(
                s_c=StateSequence(layout, gt_states.values * m_exp, gt_states.framerate),
                a_c=ActionTrack(layout, labels),
                masks=MaskPair(m_state=masks.m_state.copy(), m_action=m_action),
                framerate=gt_states.framerate,
            )
        )

    generated: list[StateSequence] = []
    for start in range(0, len(bundles), batch_size):
        chunk = bundles[start : start + batch_size]
        if callable(sampler):
            generated.extend(sampler(chunk, rng))
        else:
            if model is None or schedule is None:
                raise ValueError("run_eval: model and schedule are required with a named sampler")
            generated.extend(
                sample_many(model, chunk, schedule, rng, sampler=sampler, ddim_steps=ddim_steps)
            )
    if len(generated) != len(windows):
        raise ValueError(
            f"run_eval: sampler returned {len(generated)} sequences for {len(windows)} windows"
        )

    slices = layout.slices()
    l2_totals = {prop: 0.0 for prop in slices}
    for (gt_states, _), pred in zip(windows, generated):
        scores = l2_metric(gt_states, pred)
        for prop, val in scores.items():
            l2_totals[prop] += val

    rows = []
    for prop, sl in slices.items():
        real = np.concatenate([gt.values[:, sl] for gt, _ in windows], axis=0)
        fake = np.concatenate([pred.values[:, sl] for pred in generated], axis=0)
        fd = frechet_distance(real, fake)
        rows.append(
            EvalRow(task=task.name, prop=prop, l2=l2_totals[prop] / len(windows), fd=fd)
        )
    return EvalReport(rows=rows)
