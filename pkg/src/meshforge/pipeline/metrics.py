"""Evaluation metrics: bidirectional point-to-surface Chamfer and PSNR."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..iso import TriangleMesh
from ..psr import resample

_K_NEAREST = 8


def point_triangle_distance(p, a, b, c) -> np.ndarray:
    """Exact Euclidean distance from points ``p`` to triangles ``(a, b, c)``.

    All arguments broadcast over leading axes (closest-point region test).
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, -1)
    d2 = np.sum(ac * ap, -1)
    bp = p - b
    d3 = np.sum(ab * bp, -1)
    d4 = np.sum(ac * bp, -1)
    cp = p - c
    d5 = np.sum(ab * cp, -1)
    d6 = np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    # interior projection by default
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
        q = a + v[..., None] * ab + w[..., None] * ac

        # edge regions
        t_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
        on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        q = np.where(on_ab[..., None], a + t_ab[..., None] * ab, q)
        t_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
        on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        q = np.where(on_ac[..., None], a + t_ac[..., None] * ac, q)
        e = (d4 - d3) + (d5 - d6)
        t_bc = np.where(e != 0, (d4 - d3) / e, 0.0)
        on_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        q = np.where(on_bc[..., None], b + t_bc[..., None] * (c - b), q)

    # vertex regions take precedence
    q = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, q)
    q = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, q)
    q = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, q)
    return np.linalg.norm(p - q, axis=-1)


class TriangleIndex:
    """Nearest-triangle queries: centroid k-d tree + exact distance refinement.

    A triangle whose centroid lies farther than ``best + R`` (``R`` = the
    largest centroid-to-vertex distance in the mesh) cannot beat ``best``, so a
    ball query of that radius makes each answer exact.
    """

    def __init__(self, vertices, faces):
        self.tri = np.asarray(vertices, dtype=float)[np.asarray(faces)]
        if len(self.tri) == 0:
            raise ValueError("mesh has no faces")
        cent = self.tri.mean(axis=1)
        self.reach = float(np.linalg.norm(self.tri - cent[:, None], axis=2).max())
        self.tree = cKDTree(cent)

    def _dist(self, p, f):
        t = self.tri[f]
        return point_triangle_distance(p, t[..., 0, :], t[..., 1, :], t[..., 2, :])

    def distance(self, points, chunk: int = 20000) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        out = np.empty(len(points))
        k = min(_K_NEAREST, len(self.tri))
        for s in range(0, len(points), chunk):
            p = points[s : s + chunk]
            cd, ci = self.tree.query(p, k=k)
            ci = ci.reshape(len(p), k)
            cd = cd.reshape(len(p), k)
            best = self._dist(p[:, None, :], ci).min(axis=1)
            # unresolved if an unchecked triangle could still be closer
            todo = np.flatnonzero(cd[:, -1] < best + self.reach) if k < len(self.tri) else []
            for i in todo:
                cand = self.tree.query_ball_point(p[i], best[i] + self.reach)
                best[i] = min(best[i], self._dist(p[i], np.asarray(cand)).min())
            out[s : s + len(p)] = best
        return out


def chamfer(meshA: TriangleMesh, meshB: TriangleMesh, n_samples: int = 100000, seed=0) -> float:
    """Mean of the two directed mean point-to-surface distances."""
    for m in (meshA, meshB):
        if len(m.faces) == 0 or not np.sum(m.face_areas()) > 0:
            raise ValueError("chamfer needs non-degenerate meshes")
    # same seed on both sides keeps the metric exactly symmetric
    pa = resample(meshA, n_samples, seed=seed).positions
    pb = resample(meshB, n_samples, seed=seed).positions
    d_ab = TriangleIndex(meshB.vertices, meshB.faces).distance(pa).mean()
    d_ba = TriangleIndex(meshA.vertices, meshA.faces).distance(pb).mean()
    return float(0.5 * (d_ab + d_ba))


def psnr(img, ref, region_mask=None) -> float:
    """``10 log10(1 / MSE)`` over ``region_mask`` (peak 1); ``inf`` at zero MSE."""
    img = np.asarray(img, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if img.shape != ref.shape:
        raise ValueError("image shapes differ")
    if region_mask is None:
        region_mask = np.ones(img.shape[:2], dtype=bool)
    sel = np.asarray(region_mask) > 0.5
    if not sel.any():
        raise ValueError("empty PSNR region")
    mse = float(np.mean((img[sel] - ref[sel]) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))
