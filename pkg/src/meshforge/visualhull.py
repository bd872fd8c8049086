"""Silhouette carving into an occupancy grid, and its triangulation.

Voxel ``(i, j, k)`` has its centre at ``((i, j, k) + 0.5) / r`` in the unit
cube, mapped to world space by the scene's domain box. Occupancy is the
minimum over views of a per-view soft inside-ness; projections behind a camera
or outside its image do not carve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptySurfaceError, SceneError
from .iso import TriangleMesh, marching_cubes
from .scene_io import Scene, project

DEFAULT_MARGIN = 0.5
# a mask sampled at pixel centres locates the silhouette only to within half a
# pixel diagonal, so the soft carve keeps that much extra room
MASK_QUANTIZATION = 0.5 * np.sqrt(2.0)
DOMAIN_DILATION = 0.05


@dataclass
class OccupancyGrid:
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 3 or len(set(self.values.shape)) != 1:
            raise ValueError("occupancy grid must be cubic")
        if self.values.shape[0] < 8:
            raise ValueError("occupancy resolution must be >= 8")

    @property
    def resolution(self) -> int:
        return self.values.shape[0]


def voxel_centers(r: int) -> np.ndarray:
    """Unit-cube voxel centres, ``(r^3, 3)`` in C order."""
    c = (np.arange(r) + 0.5) / r
    g = np.meshgrid(c, c, c, indexing="ij")
    return np.stack([a.ravel() for a in g], axis=1)


def bilinear(img: np.ndarray, u, v) -> np.ndarray:
    """Sample ``img`` at pixel coordinates (centres at ``+0.5``), edge-clamped."""
    H, W = img.shape
    x = np.clip(np.asarray(u) - 0.5, 0.0, W - 1)
    y = np.clip(np.asarray(v) - 0.5, 0.0, H - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(W - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(H - 2, 0))
    x1, y1 = np.minimum(x0 + 1, W - 1), np.minimum(y0 + 1, H - 1)
    fx, fy = x - x0, y - y0
    return (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x1] * fx * (1 - fy)
        + img[y1, x0] * (1 - fx) * fy
        + img[y1, x1] * fx * fy
    )


def signed_distance_image(mask: np.ndarray) -> np.ndarray:
    """Pixel distance to the silhouette boundary, positive inside."""
    m = np.asarray(mask) > 0.5
    if m.all():
        return np.full(m.shape, np.inf)
    if not m.any():
        return np.full(m.shape, -np.inf)
    inside = ndimage.distance_transform_edt(m)
    outside = ndimage.distance_transform_edt(~m)
    # boundary sits halfway between an inside and an outside pixel centre
    return np.where(m, inside - 0.5, -(outside - 0.5))


def _view_value(view, centers_world, voxel_world, margin):
    u, v, z, behind = project(view, centers_world)
    H, W = view.height, view.width
    outside = behind | ~((u >= 0) & (u <= W) & (v >= 0) & (v <= H))
    val = np.ones(len(centers_world))
    ok = ~outside
    if not ok.any():
        return val
    if margin <= 0:
        val[ok] = bilinear(np.asarray(view.mask, dtype=float), u[ok], v[ok])
        return val
    sd = signed_distance_image(view.mask)
    if np.isinf(sd).all():
        val[ok] = 1.0 if sd.flat[0] > 0 else 0.0
        return val
    d = bilinear(sd, u[ok], v[ok])
    # tolerance in pixels: ``margin`` voxels at this voxel's depth
    rho = margin * voxel_world * 0.5 * (view.fx + view.fy) / z[ok]
    val[ok] = np.clip(0.5 + (d + MASK_QUANTIZATION + rho) / (2.0 * rho), 0.0, 1.0)
    return val


def carve(scene: Scene, r: int, margin: float = DEFAULT_MARGIN, chunk: int = 1 << 18) -> OccupancyGrid:
    """Occupancy ``min_views inside(project(voxel))``.

    With ``margin > 0`` each view's inside-ness is a ramp on the silhouette's
    signed distance map, shifted outward by ``margin`` voxels plus the mask's
    pixel quantization, so voxels whose centre projects just outside the mask
    are kept; the hull then contains the object even though carving only
    tests voxel centres. ``margin = 0`` samples
    the binary mask bilinearly.
    """
    for i, view in enumerate(scene.views):
        if view.mask is None:
            raise SceneError(f"view {i} has no mask")
    centers = voxel_centers(r)
    voxel_world = float(np.max(scene.extent)) / r
    values = np.ones(len(centers))
    for s in range(0, len(centers), chunk):
        cw = scene.to_world(centers[s : s + chunk])
        occ = values[s : s + chunk]
        for view in scene.views:
            np.minimum(occ, _view_value(view, cw, voxel_world, margin), out=occ)
    if not np.any(values >= 0.5):
        raise SceneError("silhouettes inconsistent: carved hull is empty")
    return OccupancyGrid(values.reshape(r, r, r))


def hull_mesh(grid: OccupancyGrid) -> TriangleMesh:
    """Triangulate the 0.5 level of the occupancy in unit-cube coordinates.

    The outermost voxel layer is forced empty so the surface closes even where
    the hull touches the domain boundary.
    """
    v = grid.values
    if not (np.any(v >= 0.5) and np.any(v < 0.5)):
        raise EmptySurfaceError("occupancy has no 0.5 crossing")
    occ = v.copy()
    occ[[0, -1], :, :] = 0.0
    occ[:, [0, -1], :] = 0.0
    occ[:, :, [0, -1]] = 0.0
    r = grid.resolution
    # interior where occupancy > 0.5  <=>  phi < 0
    return marching_cubes(0.5 - occ, 0.0, origin=0.5 / r, spacing=1.0 / r)


def estimate_domain_box(scene: Scene, r: int = 64, dilation: float = DOMAIN_DILATION):
    """World-space box around the visual hull, dilated by ``dilation`` per side.

    The hull is carved inside a generous box around the point where the
    camera optical axes pass closest to each other. Voxels inside fewer than
    half of the view frusta are ignored here: carving leaves them occupied,
    but they say nothing about where the object is.
    """
    centers = np.array([v.center for v in scene.views])
    axes = np.array([v.R[2] for v in scene.views])
    # least-squares point nearest to all optical axes
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for c, d in zip(centers, axes):
        P = np.eye(3) - np.outer(d, d)
        A += P
        b += P @ c
    focus = np.linalg.lstsq(A, b, rcond=None)[0]
    radius = 0.5 * np.min(np.linalg.norm(centers - focus, axis=1))
    probe = Scene(scene.views, focus - radius, focus + radius)
    grid = carve(probe, r, margin=1.0)
    cw = probe.to_world(voxel_centers(r))
    seen = np.zeros(len(cw))
    for view in scene.views:
        u, v, _, behind = project(view, cw)
        seen += ~behind & (u >= 0) & (u <= view.width) & (v >= 0) & (v <= view.height)
    occ = (grid.values >= 0.5) & (seen >= 0.5 * len(scene.views)).reshape(grid.values.shape)
    if not occ.any():
        raise SceneError("cannot estimate the domain box: no voxel is seen by half of the views")
    idx = np.argwhere(occ)
    lo = probe.to_world(idx.min(axis=0) / r)
    hi = probe.to_world((idx.max(axis=0) + 1) / r)
    pad = dilation * (hi - lo)
    return lo - pad, hi + pad
