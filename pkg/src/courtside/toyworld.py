"""Scripted two-agent court rallies that emit annotated state sequences.

Each agent is a 2-D root plus a 2-joint arm; the ball flies under gravity,
quadratic drag, and ground bounces. A deterministic rally policy moves the
receiving agent toward the ball, swings on contact, and records one action
string per agent per frame. Episodes serialize to a line-delimited dataset
with a manifest and a template vocabulary.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import direction_to_rotvec, rotvec_to_direction
from .numerics import make_rng
from .stateseq import ActionTrack, PropertyLayout, PropertySpec, StateSequence

DATASET_SCHEMA = "courtside-dataset-1"
MANIFEST_NAME = "manifest.txt"
EPISODES_NAME = "episodes.jsonl"
VOCABULARY_NAME = "vocabulary.txt"

AGENT_SPEED = 1.5
RACKET_HEIGHT = 1.2
REGION_X = {"left": -2.5, "center": 0.0, "right": 2.5}

# arm (shoulder, elbow) angles over the four swing frames; contact is frame 2
SWING_PROFILE = (
    (0.35, 0.2),
    (1.2, 0.85),
    (2.05, 1.4),
    (0.8, 0.5),
)
SWING_HIT_OFFSET = 2

ACTION_VARIANTS = {
    "idle": ("agent stays put", "agent holds position"),
    "move_left": ("agent moves left", "agent slides left"),
    "move_right": ("agent moves right", "agent slides right"),
    "move_net": ("agent moves toward net", "agent closes in on the net"),
    "move_baseline": ("agent moves baseline", "agent retreats to the baseline"),
    "swing_left": (
        "agent swings and hits the ball toward the left",
        "agent drives the ball to the left",
    ),
    "swing_center": (
        "agent swings and hits the ball toward the center",
        "agent drives the ball down the middle",
    ),
    "swing_right": (
        "agent swings and hits the ball toward the right",
        "agent drives the ball to the right",
    ),
}
_ACTION_OF = {text: key for key, variants in ACTION_VARIANTS.items() for text in variants}


def action_vocabulary() -> list[str]:
    """Every surface form the policy can emit, in a stable order."""
    return [text for key in ACTION_VARIANTS for text in ACTION_VARIANTS[key]]


def court_layout() -> PropertyLayout:
    return PropertyLayout(
        properties=(
            PropertySpec("agent-a.root", "agent-a", 2, "position"),
            PropertySpec("agent-a.arm", "agent-a", 2, "joint_rotation"),
            PropertySpec("agent-b.root", "agent-b", 2, "position"),
            PropertySpec("agent-b.arm", "agent-b", 2, "joint_rotation"),
            PropertySpec("ball.position", "ball", 3, "position"),
            PropertySpec("ball.direction", "ball", 3, "velocity_dir"),
            PropertySpec("ball.speed", "ball", 1, "velocity_norm"),
        ),
        actionable=("agent-a", "agent-b"),
    )


@dataclass(frozen=True)
class ToyWorldConfig:
    half_extents: tuple[float, float] = (10.0, 12.0)
    gravity: float = 9.8
    drag: float = 0.05
    restitution: float = 0.75
    framerate: float = 20.0
    frames: int = 64
    template_seed: int = 0

    def __post_init__(self):
        if len(self.half_extents) != 2 or min(self.half_extents) <= 0:
            raise ValueError(f"config: half extents must be two positive numbers, got {self.half_extents}")
        if not 0.0 < self.restitution < 1.0:
            raise ValueError(f"config: restitution must lie in (0, 1), got {self.restitution}")
        if not self.framerate > 0:
            raise ValueError(f"config: framerate must be positive, got {self.framerate}")
        if self.frames < 1:
            raise ValueError(f"config: need at least one frame, got {self.frames}")
        if self.gravity < 0 or self.drag < 0:
            raise ValueError("config: gravity and drag must be non-negative")

    def to_dict(self) -> dict:
        return {
            "half_extents": list(self.half_extents),
            "gravity": self.gravity,
            "drag": self.drag,
            "restitution": self.restitution,
            "framerate": self.framerate,
            "frames": self.frames,
            "template_seed": self.template_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyWorldConfig":
        return cls(
            half_extents=tuple(float(v) for v in d["half_extents"]),
            gravity=float(d["gravity"]),
            drag=float(d["drag"]),
            restitution=float(d["restitution"]),
            framerate=float(d["framerate"]),
            frames=int(d["frames"]),
            template_seed=int(d["template_seed"]),
        )

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class EpisodeRecord:
    states: StateSequence
    actions: ActionTrack
    seed: int
    config_hash: str

    def __post_init__(self):
        if self.states.num_timesteps != self.actions.num_timesteps:
            raise ValueError("episode: state and action lengths differ")


def step_ball(
    position: np.ndarray,
    velocity: np.ndarray,
    dt: float,
    gravity: float,
    drag: float,
    restitution: float,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """One semi-implicit Euler step with a ground bounce at y = 0."""
    v = np.asarray(velocity, dtype=np.float64).copy()
    p = np.asarray(position, dtype=np.float64).copy()
    speed = math.sqrt(v @ v)
    v += dt * (np.array([0.0, -gravity, 0.0]) - drag * speed * v)
    p += dt * v
    bounced = False
    if p[1] < 0.0:
        p[1] = -restitution * p[1]
        v[1] = -restitution * v[1]
        bounced = True
    return p, v, bounced


def _encode_ball_velocity(v: np.ndarray) -> tuple[np.ndarray, float]:
    speed = float(np.linalg.norm(v))
    if speed < 1e-12:
        return np.zeros(3), 0.0
    return direction_to_rotvec(v / speed), speed


def decode_ball_velocity(rotvec: np.ndarray, speed: float) -> np.ndarray:
    if speed < 1e-12:
        return np.zeros(3)
    return rotvec_to_direction(np.asarray(rotvec, dtype=np.float64)) * speed


def _launch_velocity(p0: np.ndarray, region: str, z_target: float, rng) -> np.ndarray:
    x_target = REGION_X[region]
    dx = x_target - p0[0]
    dz = z_target - p0[2]
    dist = math.hypot(dx, dz)
    if dist < 1e-9:
        dx, dz, dist = 0.0, math.copysign(1.0, z_target), 1.0
    elevation = 0.09 + float(rng.uniform(0.0, 0.05))
    speed = float(rng.uniform(28.0, 34.0))
    horizontal = speed * math.cos(elevation)
    return np.array(
        [horizontal * dx / dist, speed * math.sin(elevation), horizontal * dz / dist]
    )


def simulate_episode(config: ToyWorldConfig, seed: int) -> EpisodeRecord:
    """Run one scripted rally; deterministic in (config, seed)."""
    rng = make_rng(seed, 1)
    text_rng = make_rng(seed, 1000 + config.template_seed)
    layout = court_layout()
    t_total = config.frames
    dt = 1.0 / config.framerate
    step = AGENT_SPEED * dt
    hx, hz = config.half_extents

    sides = (-1.0, 1.0)
    agent_x = [float(rng.uniform(-3.0, 3.0)) for _ in range(2)]
    agent_depth = [float(rng.uniform(0.55, 0.75)) * hz for _ in range(2)]
    init_x = list(agent_x)
    init_depth = list(agent_depth)

    roots = np.zeros((2, t_total, 2))
    arms = np.zeros((2, t_total, 2))
    idle_texts = [str(text_rng.choice(ACTION_VARIANTS["idle"])) for _ in range(2)]
    labels = [[idle_texts[i]] * t_total for i in range(2)]
    ball_p = np.zeros((t_total, 3))
    ball_v = np.zeros((t_total, 3))

    # per-frame motion plan; positions are integrated from these afterwards
    moves: list[list[tuple[str, float] | None]] = [[None] * t_total for _ in range(2)]

    def apply_move(agent: int, t0: int, t1: int, axis: str, sign: float, text: str):
        """Full 1.5 m/s steps on frames [t0, t1); returns frames actually used."""
        used = 0
        for t in range(t0, min(t1, t_total - 1)):
            if axis == "x":
                agent_x[agent] += sign * step
            else:
                agent_depth[agent] += sign * step
            labels[agent][t] = text
            moves[agent][t] = (axis, sign)
            used += 1
        return used

    def plan_walk_to(agent: int, target_x: float, t0: int, t1: int):
        gap = target_x - agent_x[agent]
        frames_needed = int(abs(gap) // step)
        if frames_needed == 0:
            return
        sign = 1.0 if gap > 0 else -1.0
        key = "move_right" if sign > 0 else "move_left"
        text = str(text_rng.choice(ACTION_VARIANTS[key]))
        avail = max(min(t1, t_total - 1) - t0, 0)
        apply_move(agent, t0, t0 + min(frames_needed, avail), "x", sign, text)

    def plan_reposition(agent: int, t0: int):
        choice = int(rng.integers(0, 3))
        span = int(rng.integers(3, 7))
        if choice == 0:
            return t0
        if choice == 1:
            key, sign = "move_net", -1.0
            room = int((agent_depth[agent] - 0.4 * hz) // step)
        else:
            key, sign = "move_baseline", 1.0
            room = int((0.88 * hz - agent_depth[agent]) // step)
        span = min(span, max(room, 0))
        if span == 0:
            return t0
        text = str(text_rng.choice(ACTION_VARIANTS[key]))
        used = apply_move(agent, t0, t0 + span, "depth", sign, text)
        return t0 + used

    def plan_swing(agent: int, f_hit: int, region: str):
        text = str(text_rng.choice(ACTION_VARIANTS[f"swing_{region}"]))
        w0 = f_hit - SWING_HIT_OFFSET
        for offset in range(len(SWING_PROFILE)):
            t = w0 + offset
            if 0 <= t < t_total:
                arms[agent, t] = SWING_PROFILE[offset]
                labels[agent][t] = text

    busy_until = [0, 0]
    t_serve = min(3 + int(rng.integers(0, 3)), t_total - 1) if t_total >= 4 else None

    # the ball rests at the server's racket until the serve
    racket0 = np.array([agent_x[0], RACKET_HEIGHT, sides[0] * agent_depth[0]])
    ball_p[:] = racket0

    hitter = 0
    f_hit = t_serve
    while f_hit is not None and f_hit <= t_total - 1:
        receiver = 1 - hitter
        region = ("left", "center", "right")[int(rng.integers(0, 3))]
        plan_swing(hitter, f_hit, region)
        busy_until[hitter] = f_hit + 2

        z_receiver = sides[receiver] * agent_depth[receiver]
        v_new = _launch_velocity(ball_p[f_hit], region, z_receiver, rng)
        ball_v[f_hit] = v_new

        f_next = None
        p = ball_p[f_hit].copy()
        v = v_new.copy()
        for t in range(f_hit, t_total - 1):
            p, v, _ = step_ball(p, v, dt, config.gravity, config.drag, config.restitution)
            ball_p[t + 1] = p
            ball_v[t + 1] = v
            if (p[2] - z_receiver) * sides[receiver] >= 0.0:
                f_next = t + 1
                break

        if f_next is not None:
            x_star = min(max(ball_p[f_next, 0], -0.8 * hx), 0.8 * hx)
            plan_walk_to(receiver, x_star, max(f_hit + 1, busy_until[receiver]), f_next - 3)
        busy_until[hitter] = plan_reposition(hitter, f_hit + 2)

        hitter = receiver
        f_hit = f_next

    # integrate planned agent motion into per-frame roots
    for i in range(2):
        x, d = init_x[i], init_depth[i]
        roots[i, 0] = (x, sides[i] * d)
        for t in range(t_total - 1):
            mv = moves[i][t]
            if mv is not None:
                axis, sign = mv
                if axis == "x":
                    x += sign * step
                else:
                    d += sign * step
            roots[i, t + 1] = (x, sides[i] * d)

    values = np.zeros((t_total, layout.state_dim))
    for t in range(t_total):
        rotvec, speed = _encode_ball_velocity(ball_v[t])
        values[t] = np.concatenate(
            [roots[0, t], arms[0, t], roots[1, t], arms[1, t], ball_p[t], rotvec, [speed]]
        )

    states = StateSequence(layout=layout, values=values, framerate=config.framerate)
    actions = ActionTrack(layout=layout, labels=labels)
    return EpisodeRecord(states=states, actions=actions, seed=seed, config_hash=config.digest())


def resample(record: EpisodeRecord, nu: float) -> tuple[StateSequence, ActionTrack]:
    """Keep every (nu0/nu)-th frame starting at frame 0."""
    nu0 = record.states.framerate
    ratio = nu0 / nu
    stride = round(ratio)
    if stride < 1 or abs(ratio - stride) > 1e-9:
        raise ValueError(f"resample: target rate {nu} must divide the base rate {nu0}")
    states = StateSequence(
        layout=record.states.layout,
        values=record.states.values[::stride].copy(),
        framerate=nu,
    )
    actions = ActionTrack(
        layout=record.actions.layout,
        labels=[row[::stride] for row in record.actions.labels],
    )
    return states, actions


# ---------------------------------------------------------------- rule oracle


def check_labels(record: EpisodeRecord, config: ToyWorldConfig) -> list[str]:
    """Check every labeled cell against the dynamics it claims; returns violations."""
    layout = record.states.layout
    values = record.states.values
    t_total = record.states.num_timesteps
    step = np.float32(AGENT_SPEED / config.framerate)
    out: list[str] = []
    slices = layout.slices()
    agents = ("agent-a", "agent-b")
    speeds = values[:, slices["ball.speed"]][:, 0]

    for i, agent in enumerate(agents):
        root = values[:, slices[f"{agent}.root"]]
        arm = values[:, slices[f"{agent}.arm"]]
        row = record.actions.labels[i]
        for t, text in enumerate(row):
            key = _ACTION_OF.get(text)
            if key is None:
                out.append(f"agent {i} frame {t}: unknown action text {text!r}")
                continue
            if t >= t_total - 1 or key.startswith("swing"):
                continue
            dx = float(root[t + 1, 0]) - float(root[t, 0])
            dd = abs(float(root[t + 1, 1])) - abs(float(root[t, 1]))
            if key == "idle" and (dx != 0.0 or dd != 0.0):
                out.append(f"agent {i} frame {t}: idle label but the root moved")
            if key == "move_left" and not (dx < 0 and abs(dx + step) < 1e-5):
                out.append(f"agent {i} frame {t}: left label but dx = {dx}")
            if key == "move_right" and not (dx > 0 and abs(dx - step) < 1e-5):
                out.append(f"agent {i} frame {t}: right label but dx = {dx}")
            if key == "move_net" and not (dd < 0 and abs(dd + step) < 1e-5):
                out.append(f"agent {i} frame {t}: net label but depth change = {dd}")
            if key == "move_baseline" and not (dd > 0 and abs(dd - step) < 1e-5):
                out.append(f"agent {i} frame {t}: baseline label but depth change = {dd}")

        # swing runs must trace the arm profile from its start
        profile = np.array(SWING_PROFILE, dtype=np.float32)
        t = 0
        while t < t_total:
            text = row[t]
            if _ACTION_OF.get(text, "").startswith("swing"):
                run = 0
                while t + run < t_total and row[t + run] == text and run < len(SWING_PROFILE):
                    run += 1
                if not np.array_equal(arm[t : t + run], profile[:run]):
                    out.append(f"agent {i} frame {t}: swing label without the swing arm profile")
                hit = t + SWING_HIT_OFFSET
                if hit < t_total and hit >= 1 and speeds[hit] <= speeds[hit - 1]:
                    out.append(f"agent {i} frame {t}: swing did not raise ball speed at frame {hit}")
                t += run
            else:
                t += 1
    return out


# ---------------------------------------------------------------- dataset files


def write_dataset(
    path: str | Path,
    config: ToyWorldConfig,
    episodes: list[EpisodeRecord],
    layout: PropertyLayout | None = None,
    vocabulary: list[str] | None = None,
) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    layout = layout if layout is not None else court_layout()
    vocabulary = vocabulary if vocabulary is not None else action_vocabulary()
    manifest = {
        "schema": DATASET_SCHEMA,
        "layout": layout.to_dict(),
        "config": config.to_dict(),
        "vocabulary_file": VOCABULARY_NAME,
        "episodes_file": EPISODES_NAME,
        "episodes": len(episodes),
    }
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    (path / VOCABULARY_NAME).write_text("".join(line + "\n" for line in vocabulary))
    with open(path / EPISODES_NAME, "w") as fh:
        for ep in episodes:
            obj = {
                "seed": ep.seed,
                "config_hash": ep.config_hash,
                "framerate": ep.states.framerate,
                "states": [float(v) for v in ep.states.values.reshape(-1)],
                "actions": ep.actions.labels,
            }
            fh.write(json.dumps(obj) + "\n")


def read_dataset(
    path: str | Path,
) -> tuple[ToyWorldConfig, PropertyLayout, list[str], list[EpisodeRecord]]:
    path = Path(path)
    manifest = json.loads((path / MANIFEST_NAME).read_text())
    if manifest.get("schema") != DATASET_SCHEMA:
        raise ValueError(
            f"dataset: schema {manifest.get('schema')!r} does not match {DATASET_SCHEMA!r}"
        )
    layout = PropertyLayout.from_dict(manifest["layout"])
    config = ToyWorldConfig.from_dict(manifest["config"])
    vocabulary = [
        line for line in (path / manifest["vocabulary_file"]).read_text().splitlines() if line
    ]
    episodes: list[EpisodeRecord] = []
    d = layout.state_dim
    with open(path / manifest["episodes_file"]) as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                flat = np.array(obj["states"], dtype=np.float64)
                if flat.size % d != 0:
                    raise ValueError(f"{flat.size} floats do not tile width {d}")
                states = StateSequence(
                    layout=layout,
                    values=flat.reshape(-1, d),
                    framerate=float(obj["framerate"]),
                )
                actions = ActionTrack(layout=layout, labels=[list(r) for r in obj["actions"]])
                episodes.append(
                    EpisodeRecord(
                        states=states,
                        actions=actions,
                        seed=int(obj["seed"]),
                        config_hash=str(obj.get("config_hash", "")),
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"dataset: episodes line {lineno}: {exc}") from exc
    if manifest["episodes"] != len(episodes):
        raise ValueError(
            f"dataset: manifest declares {manifest['episodes']} episodes, file has {len(episodes)}"
        )
    return config, layout, vocabulary, episodes
