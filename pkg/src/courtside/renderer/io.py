"""Scene and camera files: a key-value text manifest plus checkpoint blobs."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..geometry import BallBlurSpec, BlendWeightGrid, KinematicTree
from ..numerics import load_checkpoint, save_checkpoint
from .scene import Camera, ObjectInstance, PlaneField, SceneGraph, VoxelField

SCENE_NAME = "scene.txt"
_FORMAT = "courtside-scene-1"
_MLP_KEYS = ("l1.w", "l1.b", "l1.style.w", "l1.style.b", "l2.w", "l2.b", "l2.style.w", "l2.style.b")


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values, dtype=np.float64).ravel())


def save_scene(scene: SceneGraph, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [f"format {_FORMAT}", f"features {scene.feature_dim}", ""]
    arrays: dict[str, np.ndarray] = {}
    for inst in scene.instances:
        lines.append(f"instance {inst.name}")
        lines.append(f"kind {inst.kind}")
        lines.append(f"bbox {_fmt(inst.bbox_min)} {_fmt(inst.bbox_max)}")
        lines.append(f"samples {inst.samples}")
        if inst.voxel is not None:
            arrays[f"{inst.name}.grid"] = inst.voxel.grid
            arrays[f"{inst.name}.style"] = inst.style
            for key in _MLP_KEYS:
                arrays[f"{inst.name}.mlp.{key}"] = inst.voxel.mlp[key]
        if inst.plane is not None:
            lines.append(f"sigma {inst.plane.sigma!r}")
            arrays[f"{inst.name}.plane.features"] = inst.plane.features
            arrays[f"{inst.name}.plane.origin"] = inst.plane.origin.astype(np.float32)
            arrays[f"{inst.name}.plane.span_u"] = inst.plane.span_u.astype(np.float32)
            arrays[f"{inst.name}.plane.span_v"] = inst.plane.span_v.astype(np.float32)
            arrays[f"{inst.name}.plane.extent"] = inst.plane.extent.astype(np.float32)
        if inst.blur is not None:
            lines.append(
                f"blur {inst.blur.radius!r} {_fmt(inst.blur.velocity)} "
                f"{inst.blur.shutter!r} {inst.blur.density!r}"
            )
        if inst.tree is not None:
            lines.append("parents " + " ".join(str(int(p)) for p in inst.tree.parents))
            arrays[f"{inst.name}.tree.rot"] = inst.tree.rotations.astype(np.float32)
            arrays[f"{inst.name}.tree.tr"] = inst.tree.translations.astype(np.float32)
        if inst.blend is not None:
            arrays[f"{inst.name}.blend.weights"] = inst.blend.weights.astype(np.float32)
            arrays[f"{inst.name}.blend.min"] = inst.blend.bbox_min.astype(np.float32)
            arrays[f"{inst.name}.blend.max"] = inst.blend.bbox_max.astype(np.float32)
        lines.append("end")
        lines.append("")
    (path / SCENE_NAME).write_text("\n".join(lines))
    save_checkpoint(path, arrays)


def load_scene(path: str | Path) -> SceneGraph:
    path = Path(path)
    text = (path / SCENE_NAME).read_text().splitlines()
    arrays = load_checkpoint(path)

    feature_dim = None
    blocks: list[dict] = []
    block: dict | None = None
    for raw in text:
        line = raw.strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        if block is None:
            if key == "format":
                if rest != _FORMAT:
                    raise ValueError(f"scene file: unsupported format {rest!r}")
            elif key == "features":
                feature_dim = int(rest)
            elif key == "instance":
                block = {"name": rest}
            else:
                raise ValueError(f"scene file: unexpected line {line!r}")
            continue
        if key == "end":
            blocks.append(block)
            block = None
        elif key in ("kind", "parents", "bbox", "samples", "sigma", "blur"):
            block[key] = rest
        else:
            raise ValueError(f"scene file: unknown instance key {key!r}")
    if block is not None:
        raise ValueError(f"scene file: unterminated instance {block['name']!r}")
    if feature_dim is None:
        raise ValueError("scene file: missing features line")

    instances = []
    for blk in blocks:
        name = blk["name"]
        kind = blk["kind"]
        bbox = np.array([float(v) for v in blk["bbox"].split()])
        voxel = style = plane = tree = blend = blur = None
        if f"{name}.grid" in arrays:
            voxel = VoxelField(
                grid=arrays[f"{name}.grid"],
                mlp={key: arrays[f"{name}.mlp.{key}"] for key in _MLP_KEYS},
            )
            style = arrays[f"{name}.style"]
        if f"{name}.plane.features" in arrays:
            plane = PlaneField(
                features=arrays[f"{name}.plane.features"],
                origin=arrays[f"{name}.plane.origin"].astype(np.float64),
                span_u=arrays[f"{name}.plane.span_u"].astype(np.float64),
                span_v=arrays[f"{name}.plane.span_v"].astype(np.float64),
                extent=arrays[f"{name}.plane.extent"].astype(np.float64),
                sigma=float(blk["sigma"]),
            )
        if "blur" in blk:
            vals = [float(v) for v in blk["blur"].split()]
            blur = BallBlurSpec(radius=vals[0], velocity=np.array(vals[1:4]), shutter=vals[4], density=vals[5])
        if "parents" in blk:
            tree = KinematicTree(
                parents=np.array([int(v) for v in blk["parents"].split()], dtype=np.int64),
                rotations=arrays[f"{name}.tree.rot"].astype(np.float64),
                translations=arrays[f"{name}.tree.tr"].astype(np.float64),
            )
            blend = BlendWeightGrid(
                weights=arrays[f"{name}.blend.weights"].astype(np.float64),
                bbox_min=arrays[f"{name}.blend.min"].astype(np.float64),
                bbox_max=arrays[f"{name}.blend.max"].astype(np.float64),
            )
        instances.append(
            ObjectInstance(
                name=name,
                kind=kind,
                bbox_min=bbox[:3],
                bbox_max=bbox[3:],
                style=style,
                voxel=voxel,
                plane=plane,
                tree=tree,
                blend=blend,
                blur=blur,
                samples=int(blk["samples"]),
            )
        )
    return SceneGraph(instances=instances, feature_dim=feature_dim)


def save_camera(camera: Camera, path: str | Path) -> None:
    lines = [
        f"fx {camera.fx!r}",
        f"fy {camera.fy!r}",
        f"cx {camera.cx!r}",
        f"cy {camera.cy!r}",
        f"size {camera.height} {camera.width}",
        "rotation " + _fmt(camera.rotation),
        "translation " + _fmt(camera.translation),
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_camera(path: str | Path) -> Camera:
    fields: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        fields[key] = rest
    try:
        h, w = (int(v) for v in fields["size"].split())
        return Camera(
            fx=float(fields["fx"]),
            fy=float(fields["fy"]),
            cx=float(fields["cx"]),
            cy=float(fields["cy"]),
            rotation=np.array([float(v) for v in fields["rotation"].split()]).reshape(3, 3),
            translation=np.array([float(v) for v in fields["translation"].split()]),
            height=h,
            width=w,
        )
    except KeyError as exc:
        raise ValueError(f"camera file {path}: missing field {exc.args[0]!r}") from None
