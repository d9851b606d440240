"""Compositional volumetric renderer: scenes, rays, compositing, and fitting."""

from .fit import fit_scene, trainable_parameter_names
from .io import load_camera, load_scene, save_camera, save_scene
from .render import (
    composite,
    decode_features,
    psnr,
    read_image,
    render,
    render_rays,
    sample_object,
    scene_parameters,
    write_image,
)
from .scene import (
    DEFAULT_FEATURE_DIM,
    DEFAULT_STYLE_DIM,
    OPAQUE_SIGMA,
    SKYBOX_DEPTH,
    Camera,
    ObjectInstance,
    PlaneField,
    SceneGraph,
    VoxelField,
    demo_camera,
    generate_rays,
    pixel_grid,
    random_voxel_field,
    ray_box_intersection,
    three_box_scene,
)

__all__ = [
    "DEFAULT_FEATURE_DIM",
    "DEFAULT_STYLE_DIM",
    "OPAQUE_SIGMA",
    "SKYBOX_DEPTH",
    "Camera",
    "ObjectInstance",
    "PlaneField",
    "SceneGraph",
    "VoxelField",
    "composite",
    "decode_features",
    "demo_camera",
    "fit_scene",
    "generate_rays",
    "load_camera",
    "load_scene",
    "pixel_grid",
    "psnr",
    "random_voxel_field",
    "ray_box_intersection",
    "read_image",
    "render",
    "render_rays",
    "sample_object",
    "save_camera",
    "save_scene",
    "scene_parameters",
    "three_box_scene",
    "trainable_parameter_names",
    "write_image",
]
