"""Learnable state and the per-view differentiable render/loss step.

Forward chain for one view::

    points -> psr.solve -> Phi -> marching_cubes -> mesh (unit cube)
    mesh -> texgrid.sample -> per-vertex reflectance
    mesh (world) -> rasterize / soft_silhouette -> buffers
    buffers -> pbr.shade -> image

The reverse chain mirrors it. Two paths are cut on purpose: the shaded
normals do not send gradient back into Phi, and view directions are treated
as constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import iso, pbr, psr, raster, texgrid
from ..losses_opt import depth_loss, photometric_loss, silhouette_loss, total_loss
from ..scene_io import CameraView, Scene
from .config import OptimConfig


@dataclass
class ModelState:
    """Everything that is optimized, plus the world mapping."""

    points: psr.OrientedPointCloud
    texture: texgrid.TextureGrid
    envs: list[pbr.EnvironmentMap]
    domain_min: np.ndarray
    domain_max: np.ndarray
    grid_res: int
    sigma: float = 2.0
    env_centers: np.ndarray | None = None
    mesh_cache: dict = field(default_factory=dict, repr=False)

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.domain_max) - np.asarray(self.domain_min)

    def unit_mesh(self) -> iso.TriangleMesh:
        """Current surface in unit-cube coordinates (cached until points change)."""
        key = (self.grid_res, self.points.positions.tobytes(), self.points.normals.tobytes())
        if self.mesh_cache.get("key") != key:
            phi = psr.solve(self.points, psr.PsrConfig(self.sigma), self.grid_res)
            self.mesh_cache = {"key": key, "mesh": iso.marching_cubes(phi)}
        return self.mesh_cache["mesh"]

    def world_mesh(self) -> iso.TriangleMesh:
        return self.unit_mesh().transformed(self.domain_min, self.extent)

    def nearest_env(self, camera: CameraView) -> pbr.EnvironmentMap:
        if self.env_centers is None or len(self.env_centers) != len(self.envs):
            return self.envs[0]
        d = np.linalg.norm(self.env_centers - camera.center, axis=1)
        return self.envs[int(np.argmin(d))]


@dataclass
class ViewResult:
    L_c: float
    L_s: float
    L_d: float
    total: float
    image: np.ndarray
    silhouette: np.ndarray
    gbuffer: raster.GBuffer


@dataclass
class Gradients:
    positions: np.ndarray
    normals: np.ndarray
    texture: np.ndarray
    env: np.ndarray


def _view_dirs(gb: raster.GBuffer, points_world: np.ndarray, camera: CameraView) -> np.ndarray:
    d = camera.center[None, None, :] - points_world
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    return d / np.maximum(n, 1e-12)


def render_buffers(mesh_u: iso.TriangleMesh, state: ModelState, camera: CameraView, env: pbr.EnvironmentMap):
    """Forward-only image plus the intermediate buffers the adjoint needs."""
    mesh_w = mesh_u.transformed(state.domain_min, state.extent)
    params = texgrid.sample(state.texture, mesh_u.vertices)
    attrs = np.concatenate([params, mesh_w.vertices], axis=1)
    gb = raster.rasterize(mesh_w, attrs, camera, camera.width, camera.height)
    params_img = gb.attributes[..., :7]
    view_dirs = _view_dirs(gb, gb.attributes[..., 7:], camera)
    img = pbr.shade(params_img, gb.normals, view_dirs, env, gb.coverage)
    return mesh_w, params, gb, params_img, view_dirs, img


def render(state: ModelState, camera: CameraView, env: pbr.EnvironmentMap | None = None) -> np.ndarray:
    env = env if env is not None else state.nearest_env(camera)
    return render_buffers(state.unit_mesh(), state, camera, env)[-1]


def view_step(state: ModelState, view: CameraView, cfg: OptimConfig, need_grad: bool = True):
    """Losses for one view and, if requested, gradients for every block."""
    pcfg = psr.PsrConfig(cfg.sigma)
    r = state.grid_res
    phi, ps = psr.solve(state.points, pcfg, r, return_state=True)
    mesh_u = iso.marching_cubes(phi)
    env = state.envs[view.env_index]
    mesh_w, params, gb, params_img, view_dirs, img = render_buffers(mesh_u, state, view, env)
    W, H = view.width, view.height

    s, sstate = raster.soft_silhouette(mesh_w, view, W, H, cfg.gamma, cfg.band, return_state=True)
    mask = view.mask if view.mask is not None else np.ones((H, W))
    if cfg.use_mask:
        L_s, g_s = silhouette_loss(mask, s, cfg.silhouette_loss_type)
        region = gb.coverage * mask
    else:
        L_s, g_s = 0.0, None
        region = gb.coverage
    valid = view.valid if view.valid is not None else np.zeros((H, W))
    depth = view.depth if view.depth is not None else np.zeros((H, W))
    L_d, g_d = depth_loss(depth, valid, gb.depth, gb.coverage, cfg.depth_loss_type)
    L_c, g_c = photometric_loss(view.image, img, region)
    w = cfg.weights
    total = total_loss(L_c, L_s, L_d, w)
    result = ViewResult(L_c, L_s, L_d, total, img, s, gb)
    if not need_grad:
        return result, None

    # shading -> per-pixel reflectance and light
    d_params_img, _, d_env = pbr.shade_adjoint(
        params_img, gb.normals, view_dirs, env, gb.coverage, w.lambda_c * g_c
    )
    d_attr_img = np.concatenate([d_params_img, np.zeros(params_img.shape[:2] + (3,))], axis=-1)
    d_attrs, dV_world = raster.raster_adjoint(gb, mesh_w, None, view, d_attr_img, w.lambda_d * g_d)
    if g_s is not None and w.lambda_s > 0:
        dV_world += raster.soft_silhouette_adjoint(mesh_w, view, w.lambda_s * g_s, sstate)
    d_tex, d_pos_tex = texgrid.sample_adjoint(state.texture, mesh_u.vertices, d_attrs[:, :7])

    dV_unit = dV_world * state.extent[None, :]
    if cfg.texture_position_grad:
        dV_unit += d_pos_tex
    d_phi = iso.mc_backward(mesh_u, dV_unit)
    d_pos, d_nrm = psr.solve_adjoint(state.points, pcfg, r, d_phi, ps)
    return result, Gradients(d_pos, d_nrm, d_tex, d_env)
