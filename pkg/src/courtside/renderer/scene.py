"""Scene description for the volumetric renderer: cameras, canonical fields,
object instances, and ray generation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import BallBlurSpec, BlendWeightGrid, KinematicTree
from ..layers import init_demod_affine
from ..numerics import Tensor, make_rng

DEFAULT_FEATURE_DIM = 19
DEFAULT_STYLE_DIM = 16
OPAQUE_SIGMA = 1e4
SKYBOX_DEPTH = 1e9

KINDS = ("voxel", "plane", "skybox", "ball", "articulated")

_EYE3 = np.eye(3)


def _require_rotation(r: np.ndarray, what: str) -> None:
    if np.abs(r @ r.T - _EYE3).max() > 1e-6 or abs(np.linalg.det(r) - 1.0) > 1e-6:
        raise ValueError(f"{what}: rotation must be orthonormal with determinant +1")


@dataclass
class Camera:
    """Pinhole camera; rotation/translation map world points into camera space."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"camera: focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("camera: rotation must be (3, 3) and translation (3,)")
        _require_rotation(self.rotation, "camera")
        if self.height < 1 or self.width < 1:
            raise ValueError(f"camera: image size must be positive, got {self.height}x{self.width}")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation


def generate_rays(camera: Camera, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rays through the given (x, y) pixel coordinates.

    Integer coordinates address pixel centers; (cx, cy) maps to the optical
    axis. Returns (origins, unit directions), both (N, 3) in world space.
    """
    px = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    if px.shape[1] != 2:
        raise ValueError(f"generate_rays: pixels must be (N, 2), got {px.shape}")
    if (
        px[:, 0].min() < -0.5
        or px[:, 0].max() > camera.width - 0.5
        or px[:, 1].min() < -0.5
        or px[:, 1].max() > camera.height - 0.5
    ):
        raise ValueError("generate_rays: pixel coordinates outside the image bounds")
    d_cam = np.stack(
        [
            (px[:, 0] - camera.cx) / camera.fx,
            (px[:, 1] - camera.cy) / camera.fy,
            np.ones(px.shape[0]),
        ],
        axis=1,
    )
    d_world = d_cam @ camera.rotation  # R^T d, row convention
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.center, d_world.shape).copy()
    return origins, d_world


def pixel_grid(camera: Camera, rows: np.ndarray | None = None) -> np.ndarray:
    """(x, y) coordinates of all pixel centers, row-major, optionally row-sliced."""
    ys = np.arange(camera.height) if rows is None else np.asarray(rows)
    xs = np.arange(camera.width)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)


def ray_box_intersection(
    origins: np.ndarray,
    directions: np.ndarray,
    bbox_min: np.ndarray,
    bbox_max: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab test. Returns (hit, t_enter, t_exit) with t_enter clamped to 0."""
    o = np.atleast_2d(origins)
    d = np.atleast_2d(directions)
    zero = np.abs(d) < 1e-15
    safe = np.where(zero, 1.0, d)
    lo = (bbox_min - o) / safe
    hi = (bbox_max - o) / safe
    t_lo = np.minimum(lo, hi)
    t_hi = np.maximum(lo, hi)
    inside = (o >= bbox_min) & (o <= bbox_max)
    t_lo = np.where(zero, np.where(inside, -np.inf, np.inf), t_lo)
    t_hi = np.where(zero, np.where(inside, np.inf, -np.inf), t_hi)
    t_near = t_lo.max(axis=1)
    t_far = t_hi.min(axis=1)
    t0 = np.maximum(t_near, 0.0)
    hit = (t_far > t0) & (t_far > 0.0)
    return hit, np.where(hit, t0, 0.0), np.where(hit, t_far, 0.0)


_MLP_KEYS = ("l1.w", "l1.b", "l1.style.w", "l1.style.b", "l2.w", "l2.b", "l2.style.w", "l2.style.b")


@dataclass
class VoxelField:
    """Canonical voxel grid plus the style network that decodes its features.

    grid is (F+1, nx, ny, nz); the last channel is density before softplus.
    The style MLP maps F -> hidden -> F with weights demodulated by the
    instance's style code.
    """

    grid: np.ndarray
    mlp: dict[str, np.ndarray]

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float32)
        if self.grid.ndim != 4 or self.grid.shape[0] < 2:
            raise ValueError(f"voxel field: grid must be (F+1, nx, ny, nz), got {self.grid.shape}")
        if any(n < 2 for n in self.grid.shape[1:]):
            raise ValueError("voxel field: each grid axis needs at least 2 nodes")
        missing = [k for k in _MLP_KEYS if k not in self.mlp]
        if missing:
            raise ValueError(f"voxel field: style MLP is missing {missing}")
        self.mlp = {k: np.asarray(v, dtype=np.float32) for k, v in self.mlp.items()}
        f = self.feature_dim
        hidden = self.mlp["l1.w"].shape[0]
        if self.mlp["l1.w"].shape != (hidden, f) or self.mlp["l2.w"].shape != (f, hidden):
            raise ValueError("voxel field: style MLP shapes do not match the grid feature count")

    @property
    def feature_dim(self) -> int:
        return self.grid.shape[0] - 1

    @property
    def style_dim(self) -> int:
        return self.mlp["l1.style.w"].shape[0]


def random_voxel_field(
    dims: tuple[int, int, int],
    rng,
    feature_dim: int = DEFAULT_FEATURE_DIM,
    style_dim: int = DEFAULT_STYLE_DIM,
    hidden: int = 64,
    density_bias: float = -1.0,
) -> VoxelField:
    """Fresh field with small random features and a mildly transparent start."""
    grid = rng.standard_normal((feature_dim + 1, *dims)).astype(np.float32) * np.float32(0.1)
    grid[-1] += np.float32(density_bias)
    tensors: dict[str, Tensor] = {}
    init_demod_affine(tensors, "l1", feature_dim, hidden, style_dim, rng)
    init_demod_affine(tensors, "l2", hidden, feature_dim, style_dim, rng)
    return VoxelField(grid=grid, mlp={k: t.data for k, t in tensors.items()})


@dataclass
class PlaneField:
    """Flat textured rectangle; skybox instances reuse the texture only.

    The rectangle spans origin + a*span_u + b*span_v for (a, b) in
    [0, extent[0]] x [0, extent[1]]; features are (F, H_P, W_P).
    """

    features: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    span_u: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    span_v: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    extent: np.ndarray = field(default_factory=lambda: np.ones(2))
    sigma: float = OPAQUE_SIGMA

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.span_u = np.asarray(self.span_u, dtype=np.float64)
        self.span_v = np.asarray(self.span_v, dtype=np.float64)
        self.extent = np.asarray(self.extent, dtype=np.float64)
        if self.features.ndim != 3 or min(self.features.shape[1:]) < 2:
            raise ValueError(f"plane field: features must be (F, H_P>=2, W_P>=2), got {self.features.shape}")
        for v, what in ((self.span_u, "span_u"), (self.span_v, "span_v")):
            if abs(np.linalg.norm(v) - 1.0) > 1e-6:
                raise ValueError(f"plane field: {what} must be unit length")
        if abs(self.span_u @ self.span_v) > 1e-6:
            raise ValueError("plane field: spanning vectors must be orthogonal")
        if np.any(self.extent <= 0):
            raise ValueError("plane field: extents must be positive")
        if not self.sigma > 0:
            raise ValueError("plane field: sigma must be positive")

    @property
    def feature_dim(self) -> int:
        return self.features.shape[0]

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.span_u, self.span_v)


@dataclass
class ObjectInstance:
    """One renderable object: a kind, a world bbox, a style code, and its fields."""

    name: str
    kind: str
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    style: np.ndarray | None = None
    voxel: VoxelField | None = None
    plane: PlaneField | None = None
    tree: KinematicTree | None = None
    blend: BlendWeightGrid | None = None
    blur: BallBlurSpec | None = None
    samples: int = 0

    def __post_init__(self):
        if not self.name or any(ch.isspace() for ch in self.name):
            raise ValueError(f"instance: name must be non-empty without whitespace, got {self.name!r}")
        if self.kind not in KINDS:
            raise ValueError(f"instance {self.name}: unknown kind {self.kind!r}, expected one of {KINDS}")
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64)
        if self.bbox_min.shape != (3,) or self.bbox_max.shape != (3,):
            raise ValueError(f"instance {self.name}: bbox corners must be 3-vectors")
        if np.any(self.bbox_max <= self.bbox_min):
            raise ValueError(f"instance {self.name}: bbox extents must be positive")
        if self.kind in ("voxel", "ball", "articulated"):
            if self.voxel is None:
                raise ValueError(f"instance {self.name}: kind {self.kind} needs a voxel field")
            if self.style is None:
                raise ValueError(f"instance {self.name}: kind {self.kind} needs a style code")
            self.style = np.asarray(self.style, dtype=np.float32)
            if self.style.shape != (self.voxel.style_dim,):
                raise ValueError(
                    f"instance {self.name}: style code has dim {self.style.shape}, "
                    f"field expects ({self.voxel.style_dim},)"
                )
            if self.samples == 0:
                self.samples = 16 if self.kind == "ball" else 32
        else:
            if self.plane is None:
                raise ValueError(f"instance {self.name}: kind {self.kind} needs a plane field")
            self.samples = 1
        if self.kind == "ball" and self.blur is None:
            raise ValueError(f"instance {self.name}: ball needs a blur spec")
        if self.kind == "articulated" and (self.tree is None or self.blend is None):
            raise ValueError(f"instance {self.name}: articulated needs a kinematic tree and blend grid")
        if self.kind == "articulated" and self.blend.num_joints != self.tree.num_joints:
            raise ValueError(f"instance {self.name}: blend grid joints do not match the tree")
        if self.samples < 1:
            raise ValueError(f"instance {self.name}: samples per ray must be >= 1")

    @property
    def feature_dim(self) -> int:
        return self.voxel.feature_dim if self.voxel is not None else self.plane.feature_dim

    @property
    def bbox_center(self) -> np.ndarray:
        return 0.5 * (self.bbox_min + self.bbox_max)


@dataclass
class SceneGraph:
    instances: list[ObjectInstance]
    feature_dim: int = DEFAULT_FEATURE_DIM

    def __post_init__(self):
        names = [inst.name for inst in self.instances]
        if len(set(names)) != len(names):
            raise ValueError("scene: instance names must be unique")
        for inst in self.instances:
            if inst.feature_dim != self.feature_dim:
                raise ValueError(
                    f"scene: instance {inst.name} has feature dim {inst.feature_dim}, "
                    f"scene expects {self.feature_dim}"
                )

    def instance(self, name: str) -> ObjectInstance:
        for inst in self.instances:
            if inst.name == name:
                return inst
        raise KeyError(f"scene: no instance named {name!r}")


def demo_camera(height: int = 64, width: int = 64, focal: float = 64.0) -> Camera:
    """Axis-aligned camera at the origin looking along +z."""
    return Camera(
        fx=focal,
        fy=focal,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        rotation=np.eye(3),
        translation=np.zeros(3),
        height=height,
        width=width,
    )


def _box_grid(feature_dim: int, dims, color: np.ndarray, rng) -> np.ndarray:
    grid = rng.standard_normal((feature_dim + 1, *dims)).astype(np.float32) * np.float32(0.05)
    grid[: len(color)] += np.asarray(color, dtype=np.float32)[:, None, None, None]
    grid[-1] = 6.0
    return grid


def three_box_scene(seed: int = 0, feature_dim: int = DEFAULT_FEATURE_DIM) -> SceneGraph:
    """Synthetic fitting target: three colored boxes over a gray ground plane."""
    rng = make_rng(seed, 7)
    boxes = [
        ("box-red", np.array([1.0, 0.15, 0.1]), np.array([-0.55, -0.25, 1.6]), np.array([-0.15, 0.25, 2.1])),
        ("box-green", np.array([0.1, 0.9, 0.2]), np.array([-0.2, -0.35, 2.4]), np.array([0.3, 0.15, 2.9])),
        ("box-blue", np.array([0.2, 0.25, 1.0]), np.array([0.25, -0.2, 1.8]), np.array([0.6, 0.3, 2.3])),
    ]
    instances = []
    for name, color, mn, mx in boxes:
        fieldv = random_voxel_field((8, 8, 8), rng, feature_dim=feature_dim)
        fieldv.grid[:] = _box_grid(feature_dim, (8, 8, 8), color, rng)
        instances.append(
            ObjectInstance(
                name=name,
                kind="voxel",
                bbox_min=mn,
                bbox_max=mx,
                style=rng.standard_normal(DEFAULT_STYLE_DIM).astype(np.float32),
                voxel=fieldv,
            )
        )
    tex = np.full((feature_dim, 4, 4), 0.0, dtype=np.float32)
    tex[:3] = 0.45
    instances.append(
        ObjectInstance(
            name="ground",
            kind="plane",
            bbox_min=np.array([-3.0, -0.46, 0.1]),
            bbox_max=np.array([3.0, -0.35, 6.0]),
            plane=PlaneField(
                features=tex,
                origin=np.array([-3.0, -0.4, 0.1]),
                span_u=np.array([1.0, 0.0, 0.0]),
                span_v=np.array([0.0, 0.0, 1.0]),
                extent=np.array([6.0, 5.9]),
            ),
        )
    )
    return SceneGraph(instances=instances, feature_dim=feature_dim)
