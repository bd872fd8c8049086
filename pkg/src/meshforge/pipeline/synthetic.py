"""Analytic test scenes rendered with this package's own forward renderer.

Shapes are implicit functions (negative inside) triangulated by marching
cubes. Reflectance is a smooth procedural field over world space and one
environment map lights every view. Images are rendered at 4x resolution and
box-filtered; masks and depth come from a 1x rasterization of the same mesh.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import iso, pbr, raster
from ..scene_io import CameraView, Scene, look_at, save_scene, write_obj_geometry, write_pfm
from .model import _view_dirs

BASES = ("sphere", "bumpy_sphere", "cube", "two_blobs")
TEXTURES = ("smooth", "constant")
ENVS = ("sky", "uniform")

DOMAIN_HALF = 0.8
CAMERA_DISTANCE = 3.2
SUPERSAMPLE = 4
GT_RES = 160


def shape_function(base: str):
    """Implicit function of world points ``(..., 3)``; negative inside."""
    if base == "sphere":
        return lambda p: np.linalg.norm(p, axis=-1) - 0.5
    if base == "bumpy_sphere":
        def f(p):
            bumps = np.cos(8 * p[..., 0]) + np.cos(8 * p[..., 1]) + np.cos(8 * p[..., 2])
            return np.linalg.norm(p, axis=-1) - 0.5 - 0.04 * bumps / 3.0
        return f
    if base == "cube":
        def f(p):
            q = np.abs(p) - (0.38 - 0.06)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            return outside + np.minimum(q.max(axis=-1), 0.0) - 0.06
        return f
    if base == "two_blobs":
        def f(p):
            a = np.linalg.norm(p - np.array([0.28, 0.0, 0.0]), axis=-1) - 0.3
            b = np.linalg.norm(p + np.array([0.28, 0.0, 0.0]), axis=-1) - 0.3
            k = 0.1
            h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
            return b * (1 - h) + a * h - k * h * (1 - h)
        return f
    raise ValueError(f"unknown base shape {base!r}; choose from {BASES}")


def gt_mesh(base: str, res: int = GT_RES) -> iso.TriangleMesh:
    """Ground-truth surface in world coordinates."""
    c = np.linspace(-DOMAIN_HALF, DOMAIN_HALF, res)
    g = np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1)
    phi = shape_function(base)(g)
    h = c[1] - c[0]
    return iso.marching_cubes(phi, 0.0, origin=-DOMAIN_HALF, spacing=h)


def gt_reflectance(points, pattern: str = "smooth") -> np.ndarray:
    """Per-point ``(k, 7)`` reflectance: diffuse RGB, specular RGB, roughness."""
    p = np.asarray(points, dtype=float)
    out = np.empty((len(p), 7))
    if pattern == "smooth":
        out[:, 0] = 0.45 + 0.25 * np.sin(3.0 * p[:, 0] + 1.0)
        out[:, 1] = 0.45 + 0.25 * np.sin(3.0 * p[:, 1] + 2.0)
        out[:, 2] = 0.45 + 0.25 * np.sin(3.0 * p[:, 2] + 0.5)
    elif pattern == "constant":
        out[:, 0:3] = (0.6, 0.45, 0.3)
    else:
        raise ValueError(f"unknown texture pattern {pattern!r}; choose from {TEXTURES}")
    out[:, 3:6] = 0.15
    out[:, 6] = 0.35
    return out


def gt_environment(pattern: str = "sky", shape=(4, 8)) -> pbr.EnvironmentMap:
    H_e, W_e = shape
    dirs, _ = pbr.env_directions(H_e, W_e)
    if pattern == "uniform":
        rad = np.full((H_e * W_e, 3), 0.3)
    elif pattern == "sky":
        up = np.clip(dirs[:, 1], 0.0, None)[:, None]
        rad = 0.12 + up * np.array([0.25, 0.28, 0.35])
        side = np.clip(dirs[:, 0], 0.0, None)[:, None]
        rad = rad + side * np.array([0.2, 0.15, 0.08])
    else:
        raise ValueError(f"unknown env pattern {pattern!r}; choose from {ENVS}")
    return pbr.EnvironmentMap.from_radiance(rad.reshape(H_e, W_e, 3))


def ring_cameras(n_views: int, W: int, H: int, seed=0, distance: float = CAMERA_DISTANCE):
    """Ring at ~15 deg elevation plus a top ring at ~55 deg, all aimed at the origin."""
    rng = np.random.default_rng(seed)
    n_top = n_views // 3
    n_ring = n_views - n_top
    f = 1.9 * max(W, H)
    K = np.array([[f, 0.0, W / 2.0], [0.0, f, H / 2.0], [0.0, 0.0, 1.0]])
    cams = []
    jitter = rng.uniform(-0.1, 0.1, size=n_views)
    for i in range(n_views):
        if i < n_ring:
            elev, az = np.radians(15.0), 2 * np.pi * i / n_ring
        else:
            j = i - n_ring
            elev, az = np.radians(55.0), 2 * np.pi * (j + 0.5) / max(n_top, 1)
        az = az + jitter[i]
        eye = distance * np.array([np.cos(elev) * np.cos(az), np.sin(elev), np.cos(elev) * np.sin(az)])
        cams.append(CameraView(K, look_at(eye, np.zeros(3)), W, H, env_index=i))
    return cams


def heldout_cameras(n_views: int, W: int, H: int, distance: float = CAMERA_DISTANCE):
    f = 1.9 * max(W, H)
    K = np.array([[f, 0.0, W / 2.0], [0.0, f, H / 2.0], [0.0, 0.0, 1.0]])
    cams = []
    for i in range(n_views):
        elev, az = np.radians(35.0), 2 * np.pi * (i + 0.37) / n_views
        eye = distance * np.array([np.cos(elev) * np.cos(az), np.sin(elev), np.cos(elev) * np.sin(az)])
        cams.append(CameraView(K, look_at(eye, np.zeros(3)), W, H, env_index=0))
    return cams


def render_gt(mesh: iso.TriangleMesh, params: np.ndarray, env: pbr.EnvironmentMap, camera: CameraView,
              supersample: int = SUPERSAMPLE):
    """``(image, mask, depth)`` for one camera."""
    big = camera.scaled(supersample)
    attrs = np.concatenate([params, mesh.vertices], axis=1)
    gb = raster.rasterize(mesh, attrs, big, big.width, big.height)
    img = pbr.shade(gb.attributes[..., :7], gb.normals, _view_dirs(gb, gb.attributes[..., 7:], big), env, gb.coverage)
    s = supersample
    img = img.reshape(camera.height, s, camera.width, s, 3).mean(axis=(1, 3))
    gb1 = raster.rasterize(mesh, None, camera, camera.width, camera.height)
    return img, gb1.coverage, gb1.depth


def make_synthetic_scene(out_dir, base: str = "bumpy_sphere", texture_pattern: str = "smooth",
                         env_pattern: str = "sky", n_views: int = 24, W: int = 256, H: int = 256,
                         seed=0, n_heldout: int = 4) -> Scene:
    """Render a synthetic dataset to ``out_dir`` and return the training scene.

    Also writes ``gt_mesh.obj``, ``gt_env.pfm`` and a ``heldout/`` dataset of
    novel views for evaluation.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh = gt_mesh(base)
    params = gt_reflectance(mesh.vertices, texture_pattern)
    env = gt_environment(env_pattern)
    box = (np.full(3, -DOMAIN_HALF), np.full(3, DOMAIN_HALF))
    meta = {"base": base, "texture_pattern": texture_pattern, "env_pattern": env_pattern,
            "seed": int(seed), "gt_mesh": "gt_mesh.obj"}

    def build(cams):
        for cam in cams:
            cam.image, cam.mask, cam.depth = render_gt(mesh, params, env, cam)
            cam.valid = cam.mask.copy()
        return Scene(cams, *box, meta=dict(meta))

    scene = build(ring_cameras(n_views, W, H, seed))
    save_scene(scene, out)
    if n_heldout > 0:
        save_scene(build(heldout_cameras(n_heldout, W, H)), out / "heldout")
    write_obj_geometry(out / "gt_mesh.obj", mesh.vertices, mesh.faces)
    write_pfm(out / "gt_env.pfm", env.radiance)
    return scene
