"""Coarse-to-fine optimization, rendering and evaluation of a run."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import iso, pbr, psr, texgrid, visualhull
from ..errors import ConfigError, EmptySurfaceError, NumericError, SceneError
from ..losses_opt import AdamState, LossLog, adam_step
from ..scene_io import CameraView, Scene, export_image, export_mesh, load_obj, load_scene, write_pfm
from .config import OptimConfig, dump_config, load_config
from .metrics import chamfer, psnr
from .model import ModelState, render, view_step

log = logging.getLogger(__name__)

SPHERE_RADIUS = 0.3


# --------------------------------------------------------------------------
# initialization


def sphere_points(n: int, seed=0, radius: float = SPHERE_RADIUS) -> psr.OrientedPointCloud:
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return psr.OrientedPointCloud(0.5 + radius * d, d)


def initialize(scene: Scene, cfg: OptimConfig) -> psr.OrientedPointCloud:
    """Initial oriented points in unit-cube coordinates."""
    n = cfg.coarse.n_points
    if cfg.init_mode == "sphere":
        return sphere_points(n, cfg.seed)
    if not cfg.use_mask:
        raise ConfigError("visual-hull initialization needs masks; use init_mode = sphere when use_mask = false")
    if any(v.mask is None for v in scene.views):
        raise SceneError("visual-hull initialization needs a mask for every view")
    grid = visualhull.carve(scene, cfg.hull_res, margin=cfg.hull_margin)
    mesh = visualhull.hull_mesh(grid)
    return psr.resample(mesh, n, seed=cfg.seed)


# --------------------------------------------------------------------------
# run artifacts


@dataclass
class RunArtifacts:
    state: ModelState
    config: OptimConfig
    loss_rows: list = field(default_factory=list)
    out_dir: Path | None = None
    report: dict = field(default_factory=dict)

    @property
    def mesh(self) -> iso.TriangleMesh:
        return self.state.world_mesh()


def new_state(scene: Scene, cfg: OptimConfig, points: psr.OrientedPointCloud) -> ModelState:
    envs = [pbr.EnvironmentMap.constant(cfg.env_init, (cfg.env_height, cfg.env_width)) for _ in scene.views]
    n_env = max(v.env_index for v in scene.views) + 1
    envs = envs + [pbr.EnvironmentMap.constant(cfg.env_init, (cfg.env_height, cfg.env_width))
                   for _ in range(n_env - len(envs))]
    centers = np.zeros((n_env, 3))
    for v in scene.views:
        centers[v.env_index] = v.center
    return ModelState(
        points=points,
        texture=texgrid.TextureGrid.initial(cfg.tex_res),
        envs=envs,
        domain_min=scene.domain_min.copy(),
        domain_max=scene.domain_max.copy(),
        grid_res=cfg.coarse.grid_res,
        sigma=cfg.sigma,
        env_centers=centers,
    )


def save_state(state: ModelState, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.savez(d / "points.npz", positions=state.points.positions, normals=state.points.normals)
    texgrid.save_texture(d / "texture.mftg", state.texture)
    np.savez(
        d / "envs.npz",
        raw=np.stack([e.raw for e in state.envs]),
        centers=state.env_centers if state.env_centers is not None else np.zeros((len(state.envs), 3)),
    )
    (d / "state.json").write_text(json.dumps({
        "domain_min": np.asarray(state.domain_min).tolist(),
        "domain_max": np.asarray(state.domain_max).tolist(),
        "grid_res": state.grid_res,
        "sigma": state.sigma,
    }))
    return d


def load_state(directory) -> ModelState:
    d = Path(directory)
    try:
        meta = json.loads((d / "state.json").read_text())
        pts = np.load(d / "points.npz")
        envs = np.load(d / "envs.npz")
        tex = texgrid.load_texture(d / "texture.mftg")
    except (OSError, ValueError, KeyError) as exc:
        raise SceneError(f"cannot load run state from {d}: {exc}") from exc
    return ModelState(
        points=psr.OrientedPointCloud(pts["positions"], pts["normals"]),
        texture=tex,
        envs=[pbr.EnvironmentMap(r) for r in envs["raw"]],
        domain_min=np.array(meta["domain_min"]),
        domain_max=np.array(meta["domain_max"]),
        grid_res=int(meta["grid_res"]),
        sigma=float(meta["sigma"]),
        env_centers=envs["centers"],
    )


def export_run(state: ModelState, out_dir, name: str = "mesh") -> Path:
    """Final mesh (OBJ/MTL/atlas) and per-view env maps (PFM)."""
    out = Path(out_dir)
    mesh_u = state.unit_mesh()
    params = texgrid.sample(state.texture, mesh_u.vertices)
    path = export_mesh(mesh_u.transformed(state.domain_min, state.extent), params, out, name)
    env_dir = out / "envmaps"
    env_dir.mkdir(exist_ok=True)
    for i, e in enumerate(state.envs):
        write_pfm(env_dir / f"env_{i:03d}.pfm", e.radiance)
    return path


# --------------------------------------------------------------------------
# optimization


def _resample(state: ModelState, n: int, seed) -> None:
    mesh = state.unit_mesh()
    pts = psr.resample(mesh, n, seed=seed)
    pts.project_valid(state.grid_res)
    state.points = pts


def optimize(scene: Scene, cfg: OptimConfig, out_dir=None, points=None, progress=None) -> RunArtifacts:
    """Run the coarse and fine stages; one epoch visits every view once.

    Adam steps after every view. Points are resampled from the current surface
    every ``resample_every`` epochs and at the stage transition, where the
    texture grid is also upsampled. With ``out_dir`` the loss CSV, checkpoints
    and the final export are written there.
    """
    cfg.validate()
    scene.validate()
    rng = np.random.default_rng(cfg.seed)
    if points is None:
        points = initialize(scene, cfg)
    points = points.copy()
    points.project_valid(cfg.coarse.grid_res)
    state = new_state(scene, cfg, points)
    out = Path(out_dir) if out_dir is not None else None
    loss_log = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(dump_config(cfg))
        loss_log = LossLog(out / "losses.csv")

    opt_pts = AdamState(cfg.lr_points, name="points")
    opt_tex = AdamState(cfg.lr_texture, name="texture")
    opt_env = [AdamState(cfg.lr_env, name=f"env[{i}]") for i in range(len(state.envs))]
    rows = []
    epoch = 0
    t0 = time.perf_counter()

    stages = [("coarse", cfg.coarse), ("fine", cfg.fine)]
    for si, (stage_name, stage) in enumerate(stages):
        if si == 1 and stage.epochs > 0:
            state.texture = texgrid.upsample(state.texture, cfg.tex_max_res)
            opt_tex = AdamState(cfg.lr_texture, name="texture")
            _resample(state, stage.n_points, rng.integers(2**63))
            state.grid_res = stage.grid_res
            state.points.project_valid(state.grid_res)
            opt_pts = AdamState(cfg.lr_points, name="points")
        for _ in range(stage.epochs):
            sums = np.zeros(4)
            for vi in rng.permutation(len(scene.views)):
                view = scene.views[vi]
                try:
                    res, g = view_step(state, view, cfg)
                except (EmptySurfaceError, NumericError) as exc:
                    _abort(state, out, epoch)
                    raise NumericError(f"epoch {epoch + 1}, view {vi}: {exc}") from exc
                if not np.isfinite(res.total):
                    _abort(state, out, epoch)
                    raise NumericError(f"epoch {epoch + 1}, view {vi}: loss is not finite")
                sums += (res.L_c, res.L_s, res.L_d, res.total)
                try:
                    block = np.concatenate([state.points.positions, state.points.normals], axis=1)
                    adam_step(block, np.concatenate([g.positions, g.normals], axis=1), opt_pts)
                    adam_step(state.texture.raw, g.texture, opt_tex)
                    adam_step(state.envs[view.env_index].raw, g.env, opt_env[view.env_index])
                except NumericError as exc:
                    _abort(state, out, epoch)
                    raise NumericError(f"epoch {epoch + 1}, view {vi}: {exc}") from exc
                state.points = psr.OrientedPointCloud(block[:, :3], block[:, 3:])
                state.points.project_valid(state.grid_res)
            epoch += 1
            row = (epoch, *(sums / len(scene.views)))
            rows.append(row)
            if loss_log is not None:
                loss_log.append(*row)
            if progress is not None:
                progress(stage_name, epoch, row, time.perf_counter() - t0)
            if epoch % cfg.checkpoint_every == 0 and out is not None:
                save_state(state, out / "checkpoints" / f"epoch_{epoch:04d}")
            if epoch % cfg.resample_every == 0:
                n = stage.n_points
                _resample(state, n, rng.integers(2**63))
                opt_pts = AdamState(cfg.lr_points, name="points")

    art = RunArtifacts(state, cfg, rows, out)
    art.report["runtime_s"] = time.perf_counter() - t0
    art.report["epochs"] = epoch
    if out is not None:
        save_state(state, out / "final")
        export_run(state, out / "export")
    return art


def _abort(state: ModelState, out, epoch: int) -> None:
    if out is not None:
        try:
            save_state(state, Path(out) / "checkpoints" / f"abort_epoch_{epoch:04d}")
        except OSError:
            log.exception("could not write abort checkpoint")


# --------------------------------------------------------------------------
# rendering / evaluation


def render_view(artifacts, camera: CameraView) -> np.ndarray:
    """Forward-only render; the env map comes from the nearest training view."""
    state = artifacts.state if isinstance(artifacts, RunArtifacts) else artifacts
    return render(state, camera)


def evaluate(state: ModelState, dataset_dir, n_samples: int = 100000, seed=0) -> dict:
    """Chamfer to the ground-truth mesh and PSNR on held-out (or training) views."""
    root = Path(dataset_dir)
    report = {}
    meta_file = root / "cameras.json"
    meta = json.loads(meta_file.read_text()) if meta_file.exists() else {}
    gt_path = root / meta.get("gt_mesh", "gt_mesh.obj")
    diag = float(np.linalg.norm(state.extent))
    report["domain_diagonal"] = diag
    if gt_path.exists():
        v, f = load_obj(gt_path)
        gt = iso.TriangleMesh(v, f)
        cd = chamfer(state.world_mesh(), gt, n_samples, seed)
        report["chamfer"] = cd
        report["chamfer_rel_diagonal"] = cd / diag
    eval_dir = root / "heldout" if (root / "heldout" / "cameras.json").exists() else root
    views = load_scene(eval_dir).views
    scores = []
    for cam in views:
        img = render(state, cam)
        region = np.maximum(cam.mask, (img.sum(axis=-1) > 0).astype(float))
        scores.append(psnr(img, cam.image, region))
    report["psnr_views"] = scores
    report["psnr_mean"] = float(np.mean(scores))
    report["eval_split"] = eval_dir.name
    return report


def render_scene_views(state: ModelState, scene: Scene, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, cam in enumerate(scene.views):
        png, _ = export_image(render(state, cam), out / f"view_{i:03d}")
        paths.append(png)
    return paths


def run_from_dirs(scene_dir, out_dir, config_path=None, seed=None, progress=None) -> RunArtifacts:
    cfg = load_config(config_path) if config_path else OptimConfig()
    if seed is not None:
        cfg.seed = int(seed)
        cfg.validate()
    scene = load_scene(scene_dir)
    return optimize(scene, cfg, out_dir, progress=progress)


__all__ = [
    "RunArtifacts",
    "evaluate",
    "export_run",
    "initialize",
    "load_state",
    "optimize",
    "render_view",
    "render_scene_views",
    "run_from_dirs",
    "save_state",
    "sphere_points",
]
