"""Deterministic geometry kernels: kinematics, blend-weight deformation,
ball motion blur, drag motion, and ballistic fitting.

Everything here is pure numpy over float64 unless the caller passes float32;
nothing touches the autodiff tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_IDENTITY3 = np.eye(3)


def _check_rotation(r: np.ndarray, what: str, tol: float = 1e-6) -> None:
    err = np.abs(r @ r.swapaxes(-1, -2) - _IDENTITY3).max()
    if err > tol:
        raise ValueError(f"{what}: rotation not orthonormal (deviation {err:.2e})")
    det = np.linalg.det(r)
    if np.abs(det - 1.0).max() > tol:
        raise ValueError(f"{what}: rotation determinant differs from +1")


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotvec_to_matrix(rv: np.ndarray) -> np.ndarray:
    """Rodrigues rotation from an axis-angle vector (axis * angle)."""
    rv = np.asarray(rv, dtype=np.float64)
    theta = float(np.linalg.norm(rv))
    if theta < 1e-12:
        return _IDENTITY3.copy()
    k = skew(rv / theta)
    return _IDENTITY3 + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def minimal_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Smallest rotation carrying direction a onto direction b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise ValueError("minimal_rotation: zero-length direction")
    a = a / na
    b = b / nb
    axis = np.cross(a, b)
    s2 = float(axis @ axis)
    c = float(a @ b)
    if s2 < 1e-18:
        if c > 0.0:
            return _IDENTITY3.copy()
        # Antiparallel: half-turn about a fixed perpendicular choice.
        e = np.zeros(3)
        e[int(np.argmin(np.abs(a)))] = 1.0
        perp = np.cross(a, e)
        perp /= np.linalg.norm(perp)
        return rotvec_to_matrix(perp * math.pi)
    k = skew(axis)
    return _IDENTITY3 + k + (k @ k) * ((1.0 - c) / s2)


_REF_DIR = np.array([0.0, 1.0, 0.0])


def direction_to_rotvec(d: np.ndarray) -> np.ndarray:
    """Axis-angle vector rotating the +y reference onto direction d."""
    d = np.asarray(d, dtype=np.float64)
    n = np.linalg.norm(d)
    if n < 1e-12:
        raise ValueError("direction_to_rotvec: zero-length direction")
    d = d / n
    c = float(np.clip(_REF_DIR @ d, -1.0, 1.0))
    if c > 1.0 - 1e-12:
        return np.zeros(3)
    if c < -1.0 + 1e-12:
        return np.array([math.pi, 0.0, 0.0])
    axis = np.cross(_REF_DIR, d)
    axis /= np.linalg.norm(axis)
    return axis * math.acos(c)


def rotvec_to_direction(rv: np.ndarray) -> np.ndarray:
    return rotvec_to_matrix(rv) @ _REF_DIR


# --- kinematics ---------------------------------------------------------------


@dataclass
class KinematicTree:
    """Joint hierarchy with local rotation/translation per joint; parent -1 = root."""

    parents: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.translations = np.asarray(self.translations, dtype=np.float64)
        j = self.parents.shape[0]
        if self.rotations.shape != (j, 3, 3) or self.translations.shape != (j, 3):
            raise ValueError(
                f"kinematic tree: with {j} joints expected rotations (J,3,3) and "
                f"translations (J,3), got {self.rotations.shape} and {self.translations.shape}"
            )
        if np.any(self.parents < -1) or np.any(self.parents >= j):
            raise ValueError("kinematic tree: parent index out of range")
        _check_rotation(self.rotations, "kinematic tree")

    @property
    def num_joints(self) -> int:
        return self.parents.shape[0]


@dataclass
class JointTransforms:
    """Per-joint rigid map from bounding-box space into canonical space."""

    rotations: np.ndarray
    translations: np.ndarray

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.translations = np.asarray(self.translations, dtype=np.float64)
        j = self.rotations.shape[0]
        if self.rotations.shape != (j, 3, 3) or self.translations.shape != (j, 3):
            raise ValueError("joint transforms: inconsistent shapes")
        _check_rotation(self.rotations, "joint transforms")

    @property
    def num_joints(self) -> int:
        return self.rotations.shape[0]


def forward_kinematics(tree: KinematicTree) -> JointTransforms:
    """Compose each joint's chain of local transforms from the root down."""
    j = tree.num_joints
    rot = np.empty((j, 3, 3))
    tr = np.empty((j, 3))
    done = np.zeros(j, dtype=bool)

    def resolve(i: int, trail: set[int]) -> None:
        if done[i]:
            return
        if i in trail:
            raise ValueError("kinematic tree: cycle in parent indices")
        trail.add(i)
        p = int(tree.parents[i])
        if p == -1:
            rot[i] = tree.rotations[i]
            tr[i] = tree.translations[i]
        else:
            resolve(p, trail)
            rot[i] = rot[p] @ tree.rotations[i]
            tr[i] = rot[p] @ tree.translations[i] + tr[p]
        done[i] = True

    for i in range(j):
        resolve(i, set())
    return JointTransforms(rotations=rot, translations=tr)


# --- blend-weight deformation ---------------------------------------------------


@dataclass
class BlendWeightGrid:
    """Blending weights over the canonical bounding box.

    weights has shape (J+1, nx, ny, nz); the last channel is background. The
    channels must sum to one at every cell.
    """

    weights: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64)
        if self.weights.ndim != 4 or self.weights.shape[0] < 2:
            raise ValueError(f"blend grid: expected (J+1, nx, ny, nz) weights, got {self.weights.shape}")
        if any(n < 2 for n in self.weights.shape[1:]):
            raise ValueError("blend grid: each spatial axis needs at least 2 cells")
        if self.bbox_min.shape != (3,) or self.bbox_max.shape != (3,):
            raise ValueError("blend grid: bbox corners must be 3-vectors")
        if np.any(self.bbox_max <= self.bbox_min):
            raise ValueError("blend grid: bbox max must exceed min on every axis")
        total = self.weights.sum(axis=0)
        if np.abs(total - 1.0).max() > 1e-6:
            raise ValueError("blend grid: channels must sum to 1 at every cell")

    @property
    def num_joints(self) -> int:
        return self.weights.shape[0] - 1


def trilinear_sample(
    grid: np.ndarray,
    bbox_min: np.ndarray,
    bbox_max: np.ndarray,
    points: np.ndarray,
) -> np.ndarray:
    """Sample a (C, nx, ny, nz) grid at (N, 3) points, clamping to the box.

    Grid node (i, j, k) sits at bbox_min + (i, j, k)/(n-1) * (bbox_max - bbox_min).
    """
    grid = np.asarray(grid)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    dims = np.array(grid.shape[1:], dtype=np.float64)
    mn = np.asarray(bbox_min, dtype=np.float64)
    mx = np.asarray(bbox_max, dtype=np.float64)
    u = (pts - mn) / (mx - mn) * (dims - 1.0)
    u = np.clip(u, 0.0, dims - 1.0)
    i0 = np.minimum(u.astype(np.int64), (dims - 2.0).astype(np.int64))
    f = u - i0
    out = 0.0
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                vals = grid[:, i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
                out = out + (wx * wy * wz) * vals
    return np.ascontiguousarray(out.T)


def lbs_deform(x_c: np.ndarray, weights: np.ndarray, transforms: JointTransforms) -> np.ndarray:
    """Carry canonical points into the bounding box by blended inverse rigids."""
    pts = np.atleast_2d(np.asarray(x_c, dtype=np.float64))
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    j = transforms.num_joints
    if w.shape != (pts.shape[0], j):
        raise ValueError(f"lbs_deform: weights shape {w.shape} does not match ({pts.shape[0]}, {j})")
    if np.abs(w.sum(axis=1) - 1.0).max() > 1e-6:
        raise ValueError("lbs_deform: weights must sum to 1 per point")
    # R'^T (x - tr') per joint: (J, N, 3)
    moved = np.einsum("jab,nja->njb", transforms.rotations, pts[:, None, :] - transforms.translations)
    out = (w[:, :, None] * moved).sum(axis=1)
    return out if np.asarray(x_c).ndim == 2 else out[0]


def inverse_blend_weights(
    x_b: np.ndarray,
    grid: BlendWeightGrid,
    transforms: JointTransforms,
) -> np.ndarray:
    """Blend weights for box-space points; all-zero rows mark background."""
    pts = np.atleast_2d(np.asarray(x_b, dtype=np.float64))
    j = transforms.num_joints
    if grid.num_joints != j:
        raise ValueError(f"inverse_blend_weights: grid has {grid.num_joints} joints, transforms {j}")
    raw = np.empty((pts.shape[0], j))
    for jj in range(j):
        q = pts @ transforms.rotations[jj].T + transforms.translations[jj]
        raw[:, jj] = trilinear_sample(grid.weights[jj : jj + 1], grid.bbox_min, grid.bbox_max, q)[:, 0]
    denom = raw.sum(axis=1)
    fg = denom >= 1e-8
    out = np.zeros_like(raw)
    out[fg] = raw[fg] / denom[fg, None]
    return out if np.asarray(x_b).ndim == 2 else out[0]


def canonical_map(
    x_b: np.ndarray,
    grid: BlendWeightGrid,
    transforms: JointTransforms,
) -> tuple[np.ndarray, np.ndarray]:
    """Approximate canonical positions for box-space points.

    Returns (points, background): background rows carry zeros and should be
    treated as empty space by the caller.
    """
    single = np.asarray(x_b).ndim == 1
    pts = np.atleast_2d(np.asarray(x_b, dtype=np.float64))
    w = inverse_blend_weights(pts, grid, transforms)
    background = w.sum(axis=1) == 0.0
    # R' x + tr' per joint: (N, J, 3)
    moved = np.einsum("jab,nb->nja", transforms.rotations, pts) + transforms.translations
    out = (w[:, :, None] * moved).sum(axis=1)
    out[background] = 0.0
    if single:
        return out[0], bool(background[0])
    return out, background


# --- ball motion blur -----------------------------------------------------------


@dataclass
class BallBlurSpec:
    """Ball radius, world velocity, shutter time, and base density."""

    radius: float
    velocity: np.ndarray
    shutter: float
    density: float

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        if not self.radius > 0:
            raise ValueError(f"blur spec: radius must be positive, got {self.radius}")
        if self.velocity.shape != (3,):
            raise ValueError("blur spec: velocity must be a 3-vector")
        if self.shutter < 0:
            raise ValueError(f"blur spec: shutter time must be >= 0, got {self.shutter}")
        if not self.density > 0:
            raise ValueError(f"blur spec: density must be positive, got {self.density}")


def blur_probability(x_b: np.ndarray, spec: BallBlurSpec) -> np.ndarray | float:
    """Fraction of the shutter during which the moving ball covers the point.

    The point is given in the ball's bounding box, whose origin tracks the
    ball center at mid-shutter.
    """
    single = np.asarray(x_b).ndim == 1
    pts = np.atleast_2d(np.asarray(x_b, dtype=np.float64))
    speed = float(np.linalg.norm(spec.velocity))
    if speed < 1e-9:
        rot = _IDENTITY3
    else:
        rot = minimal_rotation(spec.velocity, _REF_DIR)
    x = pts @ rot.T
    r = spec.radius
    d = speed * spec.shutter
    r_y = np.hypot(x[:, 0], x[:, 2])
    d_y = 2.0 * np.sqrt(np.maximum(r * r - r_y * r_y, 0.0))
    if d < 1e-9:
        p = (np.linalg.norm(pts, axis=1) <= r).astype(np.float64)
    else:
        p = np.minimum(np.minimum(d_y / d, 1.0), 0.5 + d_y / (2.0 * d) - np.abs(x[:, 1]) / d)
        p = np.maximum(p, 0.0)
    return float(p[0]) if single else p


# --- drag motion ------------------------------------------------------------------


def drag_displacement(v0: float, c: float, t: float) -> float:
    """Distance covered from speed v0 after time t under drag coefficient c."""
    if v0 < 0 or t < 0 or c < 0:
        raise ValueError(f"drag_displacement: need v0, c, t >= 0, got v0={v0}, c={c}, t={t}")
    if c == 0.0:
        return v0 * t
    return math.log1p(c * v0 * t) / c


def estimate_drag_C(s: float, v0: float, t: float) -> float:
    """Invert drag_displacement for the coefficient; safeguarded Newton.

    Requires 0 < s <= v0*t; the straight-line bound corresponds to c = 0 and
    drag can only shorten the distance.
    """
    if not s > 0:
        raise ValueError(f"estimate_drag_C: displacement must be positive, got {s}")
    straight = v0 * t
    if s > straight:
        raise ValueError(f"estimate_drag_C: displacement {s} exceeds the drag-free bound {straight}")
    if s >= straight:
        return 0.0
    a = v0 * t
    lo, hi = 0.0, 1.0
    while drag_displacement(v0, hi, t) > s:
        hi *= 2.0
        if hi > 1e12:
            raise ValueError("estimate_drag_C: no bracketing coefficient below 1e12")
    # Second-order series start: s ~ a - c a^2 / 2.
    c = min(max(2.0 * (straight - s) / (a * a), 1e-12), hi)
    for _ in range(200):
        fx = drag_displacement(v0, c, t) - s
        if abs(fx) <= 1e-9 * s:
            return c
        if fx > 0:
            lo = c
        else:
            hi = c
        ac = a * c
        deriv = (a / (1.0 + ac)) / c - math.log1p(ac) / (c * c)
        step_ok = math.isfinite(deriv) and deriv < 0
        nxt = c - fx / deriv if step_ok else 0.5 * (lo + hi)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        c = nxt
    raise RuntimeError("estimate_drag_C: did not reach the residual tolerance")


def interpolate_keyframes(
    p_a: np.ndarray,
    p_b: np.ndarray,
    t_a: float,
    t_b: float,
    v0: float,
    c: float,
    t: float,
) -> np.ndarray:
    """Position at time t on the segment p_a -> p_b under drag motion."""
    p_a = np.asarray(p_a, dtype=np.float64)
    p_b = np.asarray(p_b, dtype=np.float64)
    if not t_a <= t <= t_b:
        raise ValueError(f"interpolate_keyframes: time {t} outside [{t_a}, {t_b}]")
    dist = float(np.linalg.norm(p_b - p_a))
    expected = drag_displacement(v0, c, t_b - t_a)
    if abs(expected - dist) > 1e-6 * max(dist, 1e-12):
        raise ValueError(
            f"interpolate_keyframes: speed/drag cover {expected:.9g} but keyframes are {dist:.9g} apart"
        )
    if dist == 0.0:
        return p_a.copy()
    frac = drag_displacement(v0, c, t - t_a) / dist
    return p_a + frac * (p_b - p_a)


def fit_ballistic(times: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Least-squares fit of p0 + v t + 0.5 a t^2 per axis.

    Returns (p0, v, a, rms) with rms over all residual components.
    """
    t = np.asarray(times, dtype=np.float64)
    p = np.asarray(points, dtype=np.float64)
    if t.ndim != 1 or p.shape != (t.shape[0], 3):
        raise ValueError(f"fit_ballistic: expected times (N,) and points (N, 3), got {t.shape} and {p.shape}")
    if t.shape[0] < 3:
        raise ValueError(f"fit_ballistic: need at least 3 samples, got {t.shape[0]}")
    design = np.stack([np.ones_like(t), t, 0.5 * t * t], axis=1)
    if np.linalg.matrix_rank(design) < 3:
        raise ValueError("fit_ballistic: sample times do not determine a parabola")
    coef, _, _, _ = np.linalg.lstsq(design, p, rcond=None)
    resid = design @ coef - p
    rms = float(np.sqrt(np.mean(resid * resid)))
    return coef[0], coef[1], coef[2], rms
