"""Scene reconstruction by patch-wise squared error against posed images."""

from __future__ import annotations

import math

import numpy as np

from .. import numerics as N
from ..numerics import AdamState, Tape, adam_step, backward, make_rng
from .render import generate_rays, render_rays, scene_parameters
from .scene import Camera, SceneGraph


def trainable_parameter_names(scene: SceneGraph) -> list[str]:
    """Grids, style codes, and style MLP weights; plane textures stay fixed."""
    names = []
    for inst in scene.instances:
        if inst.voxel is None:
            continue
        names.append(f"{inst.name}.grid")
        names.append(f"{inst.name}.style")
        names.extend(f"{inst.name}.mlp.{key}" for key in inst.voxel.mlp)
    return names


def _patch_pixels(ox: int, oy: int, size: int) -> np.ndarray:
    xs = np.arange(ox, ox + size)
    ys = np.arange(oy, oy + size)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)


def fit_scene(
    scene: SceneGraph,
    cameras: list[Camera],
    images: list[np.ndarray],
    steps: int = 2000,
    patch_size: int = 32,
    lr: float = 5e-3,
    seed: int = 0,
    log=print,
    log_every: int = 200,
) -> list[float]:
    """Optimize the scene's fields to reproduce the images; returns the loss trace.

    The scene object is updated with the optimized arrays when fitting ends.
    """
    if len(cameras) < 2:
        raise ValueError(f"fit_scene: need at least 2 views, got {len(cameras)}")
    if len(images) != len(cameras):
        raise ValueError(f"fit_scene: {len(images)} images for {len(cameras)} cameras")
    for i, (cam, img) in enumerate(zip(cameras, images)):
        img = np.asarray(img)
        if img.shape != (3, cam.height, cam.width):
            raise ValueError(f"fit_scene: image {i} has shape {img.shape}, camera expects (3, {cam.height}, {cam.width})")
        if patch_size > min(cam.height, cam.width):
            raise ValueError(f"fit_scene: patch size {patch_size} exceeds view {i} extents")
    if steps < 1:
        raise ValueError(f"fit_scene: steps must be >= 1, got {steps}")

    params = scene_parameters(scene)
    names = trainable_parameter_names(scene)
    if not names:
        raise ValueError("fit_scene: scene has no trainable fields")
    trainable = {name: params[name] for name in names}
    opt = AdamState.init(trainable)
    rng = make_rng(seed, 5)
    losses: list[float] = []

    for step in range(1, steps + 1):
        vi = int(rng.integers(len(cameras)))
        cam = cameras[vi]
        ox = int(rng.integers(cam.width - patch_size + 1))
        oy = int(rng.integers(cam.height - patch_size + 1))
        origins, dirs = generate_rays(cam, _patch_pixels(ox, oy, patch_size))
        target = np.ascontiguousarray(
            np.asarray(images[vi])[:, oy : oy + patch_size, ox : ox + patch_size]
            .reshape(3, -1)
            .T
        )
        with Tape() as tape:
            pixels, _ = render_rays(scene, origins, dirs, params)
            pred = N.slice_(pixels, (slice(None), slice(0, 3)))
            diff = N.sub(pred, target.astype(pred.dtype))
            loss = N.mean(N.mul(diff, diff))
            grad_map = backward(loss, tape, list(trainable.values()))
        value = float(loss.data)
        if not math.isfinite(value):
            raise RuntimeError(
                f"fit_scene: non-finite loss {value} at step {step} (view {vi}, patch {ox},{oy})"
            )
        losses.append(value)
        grads = {name: grad_map[tensor] for name, tensor in trainable.items()}
        adam_step(trainable, grads, opt, lr)
        if log is not None and (step % log_every == 0 or step == steps):
            log(f"step {step}/{steps} loss {value:.6f}")

    for inst in scene.instances:
        if inst.voxel is None:
            continue
        inst.voxel.grid = params[f"{inst.name}.grid"].data.astype(np.float32)
        inst.style = params[f"{inst.name}.style"].data.astype(np.float32)
        inst.voxel.mlp = {
            key: params[f"{inst.name}.mlp.{key}"].data.astype(np.float32) for key in inst.voxel.mlp
        }
    return losses
