"""Independent oracles shared by the test modules."""

import numpy as np

from meshforge.scene_io import CameraView


def winding_number(points, vertices, faces, chunk=256):
    """Generalized winding number of a closed triangle mesh at ``points``.

    Sum of signed solid angles (Van Oosterom-Strackee); ~1 inside, ~0 outside.
    """
    tri = vertices[faces]
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        a = tri[None, :, 0] - p[:, None]
        b = tri[None, :, 1] - p[:, None]
        c = tri[None, :, 2] - p[:, None]
        la, lb, lc = (np.linalg.norm(x, axis=-1) for x in (a, b, c))
        det = np.einsum("pfk,pfk->pf", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("pfk,pfk->pf", a, b) * lc
               + np.einsum("pfk,pfk->pf", b, c) * la + np.einsum("pfk,pfk->pf", c, a) * lb)
        out[s:s + chunk] = np.arctan2(det, den).sum(axis=1) / (2 * np.pi)
    return out


def sphere_mask(camera: CameraView, center, radius):
    """Exact silhouette of a sphere: pixel-centre rays within ``radius`` of ``center``."""
    jj, ii = np.mgrid[0:camera.height, 0:camera.width]
    pix = np.stack([ii + 0.5, jj + 0.5, np.ones_like(ii, dtype=float)], axis=-1)
    d_cam = pix @ np.linalg.inv(camera.intrinsics).T
    d = d_cam @ camera.R  # camera -> world directions
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    oc = np.asarray(center, float) - camera.center
    t = d @ oc
    dist2 = oc @ oc - t * t
    return ((dist2 <= radius * radius) & (t > 0)).astype(float)


def sphere_surface_samples(n, center, radius, seed=0):
    d = np.random.default_rng(seed).standard_normal((n, 3))
    return np.asarray(center, float) + radius * d / np.linalg.norm(d, axis=1, keepdims=True)
