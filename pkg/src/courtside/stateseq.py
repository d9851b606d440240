"""Game-state sequences: property layouts, conditioning masks, composition.

A state at one timestep is the concatenation of P property vectors (total
width D). Sequences are T×D float32 arrays plus a framerate. Masks live on
the P×T grid (value 1 = known/conditioning, 0 = to be generated) and expand
to T×D by repeating each property's bit across its n_i components.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

PROPERTY_KINDS = (
    "position",
    "joint_rotation",
    "joint_translation",
    "velocity_dir",
    "velocity_norm",
    "other",
)

STRATEGY_NAMES = {
    1: "bernoulli_25",
    2: "bernoulli_50",
    3: "block",
    4: "block_complement",
    5: "suffix",
    6: "property_subset",
}
_NAME_TO_STRATEGY = {v: k for k, v in STRATEGY_NAMES.items()}


class PropertySpec(NamedTuple):
    name: str
    obj: str
    dim: int
    kind: str


@dataclass(frozen=True)
class PropertyLayout:
    properties: tuple[PropertySpec, ...]
    actionable: tuple[str, ...]

    def __post_init__(self):
        names = [p.name for p in self.properties]
        if len(set(names)) != len(names):
            raise ValueError(f"layout: duplicate property names in {names}")
        for p in self.properties:
            if p.dim < 1:
                raise ValueError(f"layout: property {p.name!r} has dimension {p.dim} < 1")
            if p.kind not in PROPERTY_KINDS:
                raise ValueError(f"layout: property {p.name!r} has unknown kind {p.kind!r}")
        objects = {p.obj for p in self.properties}
        for obj in self.actionable:
            if obj not in objects:
                raise ValueError(f"layout: actionable object {obj!r} owns no property")
        if len(set(self.actionable)) != len(self.actionable):
            raise ValueError("layout: duplicate actionable object ids")

    @property
    def num_properties(self) -> int:
        return len(self.properties)

    @property
    def state_dim(self) -> int:
        return sum(p.dim for p in self.properties)

    @property
    def num_actionable(self) -> int:
        return len(self.actionable)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(p.dim for p in self.properties)

    def slices(self) -> dict[str, slice]:
        out = {}
        offset = 0
        for p in self.properties:
            out[p.name] = slice(offset, offset + p.dim)
            offset += p.dim
        return out

    def property_index(self, name: str) -> int:
        for i, p in enumerate(self.properties):
            if p.name == name:
                return i
        raise KeyError(f"layout: no property named {name!r}")

    def properties_of(self, obj: str) -> tuple[int, ...]:
        return tuple(i for i, p in enumerate(self.properties) if p.obj == obj)

    def to_dict(self) -> dict:
        return {
            "properties": [list(p) for p in self.properties],
            "actionable": list(self.actionable),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PropertyLayout":
        props = tuple(PropertySpec(str(n), str(o), int(dim), str(k)) for n, o, dim, k in d["properties"])
        return cls(properties=props, actionable=tuple(str(a) for a in d["actionable"]))


@dataclass
class StateSequence:
    layout: PropertyLayout
    values: np.ndarray  # (T, D) float32
    framerate: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[1] != self.layout.state_dim:
            raise ValueError(
                f"state sequence: values shape {self.values.shape} does not match "
                f"(T, {self.layout.state_dim})"
            )
        if not self.framerate > 0:
            raise ValueError(f"state sequence: framerate must be positive, got {self.framerate}")

    @property
    def num_timesteps(self) -> int:
        return self.values.shape[0]

    def property_values(self, name: str) -> np.ndarray:
        return self.values[:, self.layout.slices()[name]]


@dataclass
class ActionTrack:
    layout: PropertyLayout
    labels: list[list[str]]  # A rows of T strings; "" marks an unlabeled cell

    def __post_init__(self):
        a = self.layout.num_actionable
        if len(self.labels) != a:
            raise ValueError(f"action track: expected {a} rows, got {len(self.labels)}")
        t = len(self.labels[0]) if self.labels else 0
        for row in self.labels:
            if len(row) != t:
                raise ValueError("action track: ragged label rows")

    @property
    def num_timesteps(self) -> int:
        return len(self.labels[0]) if self.labels else 0

    def label_mask(self) -> np.ndarray:
        """m_a implied by the labels: 1 where a cell carries text."""
        a, t = self.layout.num_actionable, self.num_timesteps
        m = np.zeros((a, t), dtype=np.float32)
        for i, row in enumerate(self.labels):
            for j, s in enumerate(row):
                if s:
                    m[i, j] = 1.0
        return m

    def check_against_mask(self, m_a: np.ndarray) -> None:
        if not np.array_equal(self.label_mask(), np.asarray(m_a, dtype=np.float32)):
            raise ValueError("action track: empty cells must match m_a zeros exactly")


def _check_binary(mask: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(mask, dtype=np.float32)
    if not np.isin(arr, (0.0, 1.0)).all():
        raise ValueError(f"{name}: mask entries must be 0 or 1")
    return arr


@dataclass
class MaskPair:
    m_state: np.ndarray  # (P, T)
    m_action: np.ndarray  # (A, T)

    def __post_init__(self):
        self.m_state = _check_binary(self.m_state, "m_state")
        self.m_action = _check_binary(self.m_action, "m_action")
        if self.m_state.ndim != 2 or self.m_action.ndim != 2:
            raise ValueError("masks must be 2-D (rows x T)")
        if self.m_state.shape[1] != self.m_action.shape[1]:
            raise ValueError(
                f"mask T mismatch: m_state {self.m_state.shape} vs m_action {self.m_action.shape}"
            )


def expand_state_mask(m_state: np.ndarray, layout: PropertyLayout) -> np.ndarray:
    """(…, P, T) property mask -> (…, T, D) per-component mask."""
    m = np.asarray(m_state, dtype=np.float32)
    if m.shape[-2] != layout.num_properties:
        raise ValueError(
            f"mask rows {m.shape[-2]} do not match layout P={layout.num_properties}"
        )
    wide = np.repeat(m, repeats=layout.dims, axis=-2)  # (…, D, T)
    return np.swapaxes(wide, -1, -2)


def split(s: StateSequence, m_state: np.ndarray) -> tuple[StateSequence, StateSequence]:
    """s_p = s ⊙ (1−m), s_c = s ⊙ m, with the mask expanded per property."""
    m = expand_state_mask(_check_binary(m_state, "m_state"), s.layout)
    if m.shape != s.values.shape:
        raise ValueError(f"split: mask expands to {m.shape}, values are {s.values.shape}")
    s_p = StateSequence(s.layout, s.values * (1.0 - m), s.framerate)
    s_c = StateSequence(s.layout, s.values * m, s.framerate)
    return s_p, s_c


def compose(s_p: StateSequence, s_c: StateSequence, m_state: np.ndarray) -> StateSequence:
    """Merge generated and conditioning parts; conditioning survives bit-exactly."""
    if s_p.layout != s_c.layout:
        raise ValueError("compose: layouts differ")
    if s_p.values.shape != s_c.values.shape:
        raise ValueError(
            f"compose: shape mismatch {s_p.values.shape} vs {s_c.values.shape}"
        )
    if s_p.framerate != s_c.framerate:
        raise ValueError("compose: framerates differ")
    m = expand_state_mask(_check_binary(m_state, "m_state"), s_p.layout)
    if np.any((s_p.values != 0.0) & (m == 1.0)):
        raise ValueError("compose: mutual-exclusivity violation, s_p nonzero where m_s = 1")
    if np.any((s_c.values != 0.0) & (m == 0.0)):
        raise ValueError("compose: mutual-exclusivity violation, s_c nonzero where m_s = 0")
    # Equals s_p + s_c under the exclusivity precondition, but copies the
    # conditioning bits through untouched (no -0.0 + 0.0 rounding).
    values = np.where(m == 1.0, s_c.values, s_p.values)
    return StateSequence(s_p.layout, values, s_p.framerate)


def _strategy_grid(strategy: int, rows: int, t: int, rng: np.random.Generator) -> np.ndarray:
    """One mask grid with 1 = known; `strategy` follows the module docstring."""
    if strategy in (1, 2):
        rate = 0.25 if strategy == 1 else 0.5
        return (rng.random((rows, t)) >= rate).astype(np.float32)
    if strategy in (3, 4):
        if t < 2:
            raise ValueError("block strategies need T >= 2")
        length = int(rng.integers(1, t))
        start = int(rng.integers(0, t - length + 1))
        grid = np.ones((rows, t), dtype=np.float32)
        grid[:, start : start + length] = 0.0
        if strategy == 4:
            grid = 1.0 - grid
        return grid
    if strategy == 5:
        if t < 2:
            raise ValueError("suffix strategy needs T >= 2")
        length = int(rng.integers(1, t))
        grid = np.ones((rows, t), dtype=np.float32)
        grid[:, t - length :] = 0.0
        return grid
    if strategy == 6:
        while True:
            chosen = rng.random(rows) < 0.5
            if chosen.any():
                break
        grid = np.ones((rows, t), dtype=np.float32)
        grid[chosen, :] = 0.0
        return grid
    raise ValueError(f"unknown mask strategy {strategy!r}")


def sample_masks(strategy, t: int, p: int, a: int, rng: np.random.Generator) -> MaskPair:
    """Draw one MaskPair. The action mask is all-ones with probability 0.5,
    otherwise it follows the same strategy on its own A×T grid."""
    if isinstance(strategy, str):
        if strategy not in _NAME_TO_STRATEGY:
            raise ValueError(f"unknown mask strategy {strategy!r}")
        strategy = _NAME_TO_STRATEGY[strategy]
    strategy = int(strategy)
    if strategy not in STRATEGY_NAMES:
        raise ValueError(f"unknown mask strategy {strategy!r}")
    if t < 1 or p < 1 or a < 1:
        raise ValueError(f"sample_masks: T={t}, P={p}, A={a} must all be >= 1")
    m_state = _strategy_grid(strategy, p, t, rng)
    if rng.random() < 0.5:
        m_action = np.ones((a, t), dtype=np.float32)
    else:
        m_action = _strategy_grid(strategy, a, t, rng)
    return MaskPair(m_state=m_state, m_action=m_action)


def random_masks(t: int, p: int, a: int, rng: np.random.Generator) -> MaskPair:
    """Training-time draw: strategy uniform over the six, then sample_masks."""
    strategy = int(rng.integers(1, 7))
    return sample_masks(strategy, t, p, a, rng)
