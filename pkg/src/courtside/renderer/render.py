"""Ray sampling, emission-absorption compositing, and image IO.

The sampling and compositing path runs on taped tensors so scene fitting can
differentiate through pixel values into grid features, densities, style
codes, and the style MLP. Depths and ray geometry stay in plain numpy; they
are never optimized.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np

from .. import numerics as N
from ..geometry import blur_probability, canonical_map, forward_kinematics
from ..layers import demod_linear
from ..numerics import Tensor
from .scene import SKYBOX_DEPTH, Camera, ObjectInstance, SceneGraph, generate_rays, pixel_grid, ray_box_intersection

_MISS_DEPTH = 1e30


def scene_parameters(scene: SceneGraph) -> dict[str, Tensor]:
    """Copy every render-relevant array into named tensors."""
    params: dict[str, Tensor] = {}
    for inst in scene.instances:
        if inst.voxel is not None:
            params[f"{inst.name}.grid"] = Tensor(inst.voxel.grid.copy())
            params[f"{inst.name}.style"] = Tensor(inst.style.copy())
            for key, arr in inst.voxel.mlp.items():
                params[f"{inst.name}.mlp.{key}"] = Tensor(arr.copy())
        else:
            params[f"{inst.name}.plane"] = Tensor(inst.plane.features.copy())
    return params


def _trilinear_gather(flat: Tensor, dims: tuple[int, int, int], u: np.ndarray) -> Tensor:
    """Differentiable trilinear interpolation.

    flat is the grid reshaped to (nx*ny*nz, C); u holds continuous node
    coordinates (N, 3), clamped to the grid.
    """
    nx, ny, nz = dims
    hi = np.array([nx - 1, ny - 1, nz - 1], dtype=np.float64)
    u = np.clip(u, 0.0, hi)
    i0 = np.minimum(u.astype(np.int64), (hi - 1.0).astype(np.int64))
    i0 = np.maximum(i0, 0)
    f = u - i0
    dt = flat.dtype
    out = None
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                idx = ((i0[:, 0] + dx) * ny + (i0[:, 1] + dy)) * nz + (i0[:, 2] + dz)
                w = (wx * wy * wz).astype(dt)[:, None]
                term = N.mul(N.gather(flat, idx), w)
                out = term if out is None else N.add(out, term)
    return out


def _bilinear_gather(flat: Tensor, h: int, w: int, uv: np.ndarray) -> Tensor:
    """Differentiable bilinear interpolation; flat is (H*W, F), uv (N, 2) node coords."""
    hi = np.array([w - 1, h - 1], dtype=np.float64)
    uv = np.clip(uv, 0.0, hi)
    i0 = np.maximum(np.minimum(uv.astype(np.int64), (hi - 1.0).astype(np.int64)), 0)
    f = uv - i0
    dt = flat.dtype
    out = None
    for du in (0, 1):
        wu = f[:, 0] if du else 1.0 - f[:, 0]
        for dv in (0, 1):
            wv = f[:, 1] if dv else 1.0 - f[:, 1]
            idx = (i0[:, 1] + dv) * w + (i0[:, 0] + du)
            ww = (wu * wv).astype(dt)[:, None]
            term = N.mul(N.gather(flat, idx), ww)
            out = term if out is None else N.add(out, term)
    return out


# BLAS matmul picks different kernels by batch size, and a row's bits can change
# with them. Running the style MLP in fixed-shape chunks keeps a sample's decoded
# value identical no matter how rays are batched, so tiled renders stay bit-equal.
_DECODE_CHUNK = 4096


def decode_features(params: dict[str, Tensor], name: str, feats: Tensor, style: Tensor) -> Tensor:
    """Style MLP: two demodulated layers with a relu between, (1, N, F) -> (1, N, F)."""
    m = feats.shape[1]
    f = feats.shape[2]
    outs = []
    for start in range(0, m, _DECODE_CHUNK):
        stop = min(start + _DECODE_CHUNK, m)
        xc = N.slice_(feats, (slice(None), slice(start, stop)))
        pad = _DECODE_CHUNK - (stop - start)
        if pad:
            filler = Tensor(np.zeros((1, pad, f), dtype=feats.dtype))
            xc = N.concat([xc, filler], axis=1)
        h = N.relu(demod_linear(params, f"{name}.mlp.l1", xc, style))
        yc = demod_linear(params, f"{name}.mlp.l2", h, style)
        if pad:
            yc = N.slice_(yc, (slice(None), slice(0, stop - start)))
        outs.append(yc)
    if len(outs) == 1:
        return outs[0]
    return N.concat(outs, axis=1)


def _node_coords(points: np.ndarray, lo: np.ndarray, hi: np.ndarray, dims) -> np.ndarray:
    scale = (np.array(dims, dtype=np.float64) - 1.0) / (hi - lo)
    return (points - lo) * scale


def _voxelish_samples(inst: ObjectInstance, origins, dirs, params):
    hit, t0, t1 = ray_box_intersection(origins, dirs, inst.bbox_min, inst.bbox_max)
    r = origins.shape[0]
    n = inst.samples
    h = (t1 - t0) / n
    depth = t0[:, None] + (np.arange(n) + 0.5) * h[:, None]
    delta = np.repeat(h[:, None], n, axis=1)
    delta[:, -1] = 0.5 * h

    grid_t = params[f"{inst.name}.grid"]
    c = grid_t.shape[0]
    f = c - 1
    dims = grid_t.shape[1:]
    dt = grid_t.dtype

    # Only rays that enter the bbox touch the differentiable path; the rest
    # scatter to a zero sentinel row below.
    ridx = np.nonzero(hit)[0]
    rh = ridx.shape[0]
    if rh == 0:
        zero_feats = Tensor(np.zeros((r, n, f), dtype=dt))
        zero_sigma = Tensor(np.zeros((r, n), dtype=dt))
        return depth, delta, zero_sigma, zero_feats, hit
    pts = (origins[ridx, None, :] + depth[ridx, :, None] * dirs[ridx, None, :]).reshape(rh * n, 3)

    flat = N.transpose(N.reshape(grid_t, (c, dims[0] * dims[1] * dims[2])))
    fg = None
    if inst.kind == "articulated":
        transforms = forward_kinematics(inst.tree)
        x_c, background = canonical_map(pts - inst.bbox_center, inst.blend, transforms)
        u = _node_coords(x_c, inst.blend.bbox_min, inst.blend.bbox_max, dims)
        fg = (~background).astype(dt)
    else:
        u = _node_coords(pts, inst.bbox_min, inst.bbox_max, dims)
    vals = _trilinear_gather(flat, dims, u)

    feats_raw = N.slice_(vals, (slice(None), slice(0, f)))
    if inst.kind == "ball":
        p_cover = blur_probability(pts - inst.bbox_center, inst.blur)
        sigma_hit = Tensor((inst.blur.density * p_cover).astype(dt))
    else:
        sigma_hit = N.softplus(N.slice_(vals, (slice(None), f)))
        if fg is not None:
            sigma_hit = N.mul(sigma_hit, fg)

    style = N.reshape(params[f"{inst.name}.style"], (1, -1))
    feats_hit = decode_features(params, inst.name, N.reshape(feats_raw, (1, rh * n, f)), style)

    scatter = np.full(r, rh, dtype=np.int64)
    scatter[ridx] = np.arange(rh)
    idx = (scatter[:, None] * n + np.arange(n)).clip(max=rh * n)
    feats = N.gather(
        N.concat([N.reshape(feats_hit, (rh * n, f)), Tensor(np.zeros((1, f), dtype=dt))], axis=0), idx
    )
    sigma = N.gather(N.concat([sigma_hit, Tensor(np.zeros(1, dtype=dt))], axis=0), idx)
    return depth, delta, sigma, feats, hit


def _plane_samples(inst: ObjectInstance, origins, dirs, params):
    plane = inst.plane
    f, hp, wp = plane.features.shape
    tex = params[f"{inst.name}.plane"]
    flat = N.transpose(N.reshape(tex, (f, hp * wp)))
    r = origins.shape[0]

    if inst.kind == "skybox":
        yaw = np.arctan2(dirs[:, 0], dirs[:, 2])
        pitch = np.arcsin(np.clip(dirs[:, 1], -1.0, 1.0))
        uv = np.stack(
            [
                (yaw + math.pi) / (2.0 * math.pi) * (wp - 1),
                (pitch + math.pi / 2.0) / math.pi * (hp - 1),
            ],
            axis=1,
        )
        depth = np.full((r, 1), SKYBOX_DEPTH)
        delta = np.ones((r, 1))
        hit = np.ones(r, dtype=bool)
    else:
        normal = plane.normal
        denom = dirs @ normal
        ok = np.abs(denom) > 1e-12
        t = np.where(ok, ((plane.origin - origins) @ normal) / np.where(ok, denom, 1.0), -1.0)
        p = origins + t[:, None] * dirs
        rel = p - plane.origin
        a = rel @ plane.span_u
        b = rel @ plane.span_v
        hit = ok & (t > 1e-9) & (a >= 0) & (a <= plane.extent[0]) & (b >= 0) & (b <= plane.extent[1])
        uv = np.stack(
            [
                np.where(hit, a / plane.extent[0], 0.0) * (wp - 1),
                np.where(hit, b / plane.extent[1], 0.0) * (hp - 1),
            ],
            axis=1,
        )
        depth = np.where(hit, t, _MISS_DEPTH)[:, None]
        delta = np.where(hit, 1.0, 0.0)[:, None]

    feats = N.reshape(_bilinear_gather(flat, hp, wp, uv), (r, 1, f))
    sigma = Tensor(np.full((r, 1), plane.sigma, dtype=tex.dtype))
    return depth, delta, sigma, feats, hit


def _instance_samples(inst: ObjectInstance, origins, dirs, params):
    if inst.voxel is not None:
        return _voxelish_samples(inst, origins, dirs, params)
    return _plane_samples(inst, origins, dirs, params)


def sample_object(
    origin: np.ndarray,
    direction: np.ndarray,
    inst: ObjectInstance,
    n: int | None = None,
    params: dict[str, Tensor] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Samples for one ray: (depths, features, densities, interval lengths).

    Empty arrays when the ray misses the object. n overrides the instance's
    per-ray sample count.
    """
    if n is not None:
        if n < 1:
            raise ValueError(f"sample_object: n must be >= 1, got {n}")
        inst = dataclasses.replace(inst, samples=n)
    if params is None:
        params = scene_parameters(SceneGraph([inst], feature_dim=inst.feature_dim))
    o = np.asarray(origin, dtype=np.float64)[None]
    d = np.asarray(direction, dtype=np.float64)[None]
    depth, delta, sigma, feats, hit = _instance_samples(inst, o, d, params)
    if not hit[0]:
        f = inst.feature_dim
        return np.zeros(0), np.zeros((0, f)), np.zeros(0), np.zeros(0)
    return depth[0], feats.data[0], sigma.data[0], delta[0]


def composite(
    depths: np.ndarray,
    features: np.ndarray,
    sigmas: np.ndarray,
    deltas: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Emission-absorption quadrature over depth-sorted samples.

    w_i = T_i (1 - exp(-sigma_i delta_i)) with T_i the transmittance through
    all earlier samples; returns (sum of w_i f_i, sum of w_i).
    """
    depths = np.asarray(depths, dtype=np.float64)
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    sigmas = np.asarray(sigmas, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    m = depths.shape[0]
    if m == 0:
        return np.zeros(features.shape[1] if features.ndim == 2 else 0), 0.0
    if features.shape[0] != m or sigmas.shape != (m,) or deltas.shape != (m,):
        raise ValueError("composite: depths, features, sigmas, deltas must agree in length")
    if np.any(np.diff(depths) < 0):
        raise ValueError("composite: samples must be sorted ascending by depth")
    if np.any(deltas < 0) or np.any(sigmas < 0):
        raise ValueError("composite: densities and interval lengths must be >= 0")
    sd = sigmas * deltas
    trans = np.exp(-(np.cumsum(sd) - sd))
    w = trans * (1.0 - np.exp(-sd))
    return w @ features, float(w.sum())


def render_rays(
    scene: SceneGraph,
    origins: np.ndarray,
    dirs: np.ndarray,
    params: dict[str, Tensor],
) -> tuple[Tensor, Tensor]:
    """Batched sampling and compositing; returns (pixels (R, F), alpha (R,))."""
    r = origins.shape[0]
    f = scene.feature_dim
    if not scene.instances:
        return Tensor(np.zeros((r, f), dtype=np.float32)), Tensor(np.zeros(r, dtype=np.float32))
    depth_parts, sd_parts, feat_parts = [], [], []
    for inst in scene.instances:
        depth, delta, sigma, feats, _ = _instance_samples(inst, origins, dirs, params)
        depth_parts.append(depth)
        sd_parts.append(N.mul(sigma, delta.astype(sigma.dtype)))
        feat_parts.append(feats)
    depth_all = np.concatenate(depth_parts, axis=1)
    sd_all = N.concat(sd_parts, axis=1)
    feat_all = N.concat(feat_parts, axis=1)
    m = depth_all.shape[1]

    order = np.argsort(depth_all, axis=1, kind="stable")
    flat_idx = order + (np.arange(r) * m)[:, None]
    feats_sorted = N.gather(N.reshape(feat_all, (r * m, f)), flat_idx)
    sd_sorted = N.gather(N.reshape(sd_all, (r * m,)), flat_idx)

    cum = N.cumsum(sd_sorted, axis=1)
    trans = N.exp(N.neg(N.sub(cum, sd_sorted)))
    absorb = N.sub(1.0, N.exp(N.neg(sd_sorted)))
    weights = N.mul(trans, absorb)
    pixels = N.sum_(N.mul(feats_sorted, N.reshape(weights, (r, m, 1))), axis=1)
    alpha = N.sum_(weights, axis=1)
    return pixels, alpha


def render(
    scene: SceneGraph,
    camera: Camera,
    params: dict[str, Tensor] | None = None,
    tile_rows: int = 16,
) -> tuple[np.ndarray, np.ndarray]:
    """Full-image render: feature grid (F, H, W) and clamped RGB (3, H, W)."""
    if params is None:
        params = scene_parameters(scene)
    f = scene.feature_dim
    grid_out = np.zeros((f, camera.height, camera.width), dtype=np.float32)
    for start in range(0, camera.height, tile_rows):
        rows = np.arange(start, min(start + tile_rows, camera.height))
        origins, dirs = generate_rays(camera, pixel_grid(camera, rows))
        pixels, _ = render_rays(scene, origins, dirs, params)
        block = pixels.data.reshape(len(rows), camera.width, f)
        grid_out[:, rows[0] : rows[-1] + 1] = np.transpose(block, (2, 0, 1)).astype(np.float32)
    image = np.clip(grid_out[:3], 0.0, 1.0)
    return grid_out, image


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images."""
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return -10.0 * math.log10(mse)


def write_image(image: np.ndarray, path: str | Path) -> None:
    """Binary PPM (P6, maxval 255), row-major RGB."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"write_image: expected (3, H, W), got {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("write_image: values must lie in [0, 1]")
    h, w = img.shape[1:]
    data = np.rint(img * 255.0).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_image(path: str | Path) -> np.ndarray:
    """Read a maxval-255 binary PPM back to float32 (3, H, W) in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P6":
        raise ValueError(f"read_image: not a binary PPM: magic {tokens[0]!r}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"read_image: only maxval 255 supported, got {maxval}")
    pos += 1
    data = np.frombuffer(raw, dtype=np.uint8, count=h * w * 3, offset=pos)
    return (data.reshape(h, w, 3).transpose(2, 0, 1) / np.float32(255.0)).astype(np.float32)
