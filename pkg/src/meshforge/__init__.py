"""Multi-view textured mesh recovery by differentiable rendering.

Shape is an oriented point cloud turned into a surface by a spectral Poisson
solve and marching cubes; reflectance is a dense trilinear texture grid; light
is a per-view latitude-longitude environment map. All three are fitted to
images, masks and depth maps with hand-written adjoints and Adam.
"""

from .errors import (
    ConfigError,
    DegenerateNormalizationError,
    EmptySurfaceError,
    MeshforgeError,
    NumericError,
    SceneError,
)
from .iso import TriangleMesh, marching_cubes, mc_backward, watertight_check
from .pbr import EnvironmentMap, brdf, env_texel_direction, shade, shade_adjoint
from .psr import OrientedPointCloud, PsrConfig, resample, scatter_normals, solve, solve_adjoint
from .scene_io import CameraView, Scene, export_image, export_mesh, load_scene, project
from .texgrid import TextureGrid, sample, sample_adjoint, upsample

__version__ = "0.1.0"

__all__ = [
    "CameraView",
    "ConfigError",
    "DegenerateNormalizationError",
    "EmptySurfaceError",
    "EnvironmentMap",
    "MeshforgeError",
    "NumericError",
    "OrientedPointCloud",
    "PsrConfig",
    "Scene",
    "SceneError",
    "TextureGrid",
    "TriangleMesh",
    "brdf",
    "env_texel_direction",
    "export_image",
    "export_mesh",
    "load_scene",
    "marching_cubes",
    "mc_backward",
    "project",
    "resample",
    "sample",
    "sample_adjoint",
    "scatter_normals",
    "shade",
    "shade_adjoint",
    "solve",
    "solve_adjoint",
    "upsample",
    "watertight_check",
]
