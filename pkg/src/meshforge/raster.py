"""Software rasterization of triangle meshes with hand-written adjoints.

Two paths share the projected vertices:

* ``rasterize`` — hard z-buffered coverage at pixel centres, with
  perspective-correct barycentrics used to interpolate depth, attributes and
  normals. Its adjoint treats the barycentrics as constants (attribute path).
* ``soft_silhouette`` — a smooth coverage image whose gradient moves vertices
  laterally; this is the only route by which boundaries receive gradient.

Pixel ``(row j, col i)`` has its centre at ``(i + 0.5, j + 0.5)``. Kernels are
serial numba loops, so accumulation order (and hence every result) is
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .scene_io import CameraView, project_jacobian

NEAR = 1e-6
DEFAULT_GAMMA = 0.1
DEFAULT_BAND = 3.0


@dataclass
class GBuffer:
    coverage: np.ndarray
    depth: np.ndarray
    face_id: np.ndarray
    barycentrics: np.ndarray
    attributes: np.ndarray | None = None
    normals: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.face_id.shape


def _screen(mesh, camera: CameraView):
    """Projected ``(n, 2)`` pixel coordinates and camera-space depth ``(n,)``."""
    xc = np.asarray(mesh.vertices, dtype=float) @ camera.R.T + camera.t
    z = xc[:, 2]
    zs = np.where(z > NEAR, z, 1.0)
    uv = np.stack([camera.fx * xc[:, 0] / zs + camera.cx, camera.fy * xc[:, 1] / zs + camera.cy], axis=1)
    return uv, z


# --------------------------------------------------------------------------
# hard rasterization


@numba.njit(cache=True)
def _raster_kernel(uv, z, faces, W, H, near):
    face_id = np.full((H, W), -1, dtype=np.int64)
    depth = np.full((H, W), np.inf)
    bary = np.zeros((H, W, 3))
    for f in range(faces.shape[0]):
        a, b, c = faces[f, 0], faces[f, 1], faces[f, 2]
        za, zb, zc = z[a], z[b], z[c]
        if za <= near or zb <= near or zc <= near:
            continue
        ax, ay = uv[a, 0], uv[a, 1]
        bx, by = uv[b, 0], uv[b, 1]
        cx, cy = uv[c, 0], uv[c, 1]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        i0 = max(int(np.ceil(min(ax, bx, cx) - 0.5)), 0)
        i1 = min(int(np.floor(max(ax, bx, cx) - 0.5)), W - 1)
        j0 = max(int(np.ceil(min(ay, by, cy) - 0.5)), 0)
        j1 = min(int(np.floor(max(ay, by, cy) - 0.5)), H - 1)
        inv_area = 1.0 / area
        for j in range(j0, j1 + 1):
            py = j + 0.5
            for i in range(i0, i1 + 1):
                px = i + 0.5
                w0 = ((bx - px) * (cy - py) - (by - py) * (cx - px)) * inv_area
                w1 = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) * inv_area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                # perspective correction
                q0, q1, q2 = w0 / za, w1 / zb, w2 / zc
                s = q0 + q1 + q2
                d = 1.0 / s
                if d < depth[j, i]:
                    depth[j, i] = d
                    face_id[j, i] = f
                    bary[j, i, 0] = q0 * d
                    bary[j, i, 1] = q1 * d
                    bary[j, i, 2] = q2 * d
    for j in range(H):
        for i in range(W):
            if face_id[j, i] < 0:
                depth[j, i] = 0.0
    return face_id, depth, bary


def interpolate(gb: GBuffer, faces: np.ndarray, attrs: np.ndarray) -> np.ndarray:
    """Barycentric interpolation of per-vertex ``attrs (n, C)``; zero off-mesh.

    Evaluated as ``a0 + b1 (a1 - a0) + b2 (a2 - a0)`` so constant attributes
    are reproduced exactly.
    """
    attrs = np.asarray(attrs, dtype=float)
    H, W = gb.shape
    out = np.zeros((H, W, attrs.shape[1]))
    cov = gb.face_id >= 0
    tri = faces[gb.face_id[cov]]
    b = gb.barycentrics[cov]
    a0 = attrs[tri[:, 0]]
    out[cov] = a0 + b[:, 1:2] * (attrs[tri[:, 1]] - a0) + b[:, 2:3] * (attrs[tri[:, 2]] - a0)
    return out


def interpolate_adjoint(gb: GBuffer, faces: np.ndarray, n_vertices: int, d_img: np.ndarray) -> np.ndarray:
    """Transpose of ``interpolate`` (barycentrics held fixed): ``(n, C)``."""
    d_img = np.asarray(d_img, dtype=float)
    cov = gb.face_id >= 0
    tri = faces[gb.face_id[cov]]  # (P, 3)
    b = gb.barycentrics[cov].copy()
    b[:, 0] = 1.0 - b[:, 1] - b[:, 2]  # the coefficient the forward actually applies
    g = d_img[cov]  # (P, C)
    C = g.shape[1]
    out = np.empty((n_vertices, C))
    for c in range(C):
        out[:, c] = np.bincount(tri.ravel(), weights=(b * g[:, c, None]).ravel(), minlength=n_vertices)
    return out


def rasterize(mesh, attrs, camera: CameraView, W: int, H: int) -> GBuffer:
    """Hard rasterization with z-buffer and perspective-correct interpolation.

    ``attrs`` may be ``None``. Normals come from ``mesh.vertex_normals`` when
    present and are renormalized per pixel. Back faces are not culled.
    """
    if W * H == 0:
        raise ValueError("image has zero pixels")
    faces = np.asarray(mesh.faces, dtype=np.int64)
    if len(faces) == 0:
        raise ValueError("mesh has no faces")
    if attrs is not None and len(attrs) != len(mesh.vertices):
        raise ValueError("attrs must have one row per vertex")
    uv, z = _screen(mesh, camera)
    face_id, depth, bary = _raster_kernel(uv, z, faces, int(W), int(H), NEAR)
    gb = GBuffer((face_id >= 0).astype(float), depth, face_id, bary)
    if attrs is not None:
        gb.attributes = interpolate(gb, faces, attrs)
    if mesh.vertex_normals is not None:
        nrm = interpolate(gb, faces, mesh.vertex_normals)
        norm = np.linalg.norm(nrm, axis=-1, keepdims=True)
        gb.normals = np.where(norm > 0, nrm / np.maximum(norm, 1e-300), 0.0)
    return gb


def raster_adjoint(gb: GBuffer, mesh, attrs, camera: CameraView, dL_dattributes_img=None, dL_ddepth_img=None):
    """Reverse of ``rasterize`` along the attribute path.

    Returns ``(dL/dattrs (n, C) or None, dL/dV (n, 3))``. Depth gradients reach
    vertices through each vertex's camera-space z (``dz/dp = R[2]``); the
    barycentrics are constants here, so coverage motion is left to
    ``soft_silhouette``.
    """
    faces = np.asarray(mesh.faces, dtype=np.int64)
    n = len(mesh.vertices)
    if gb.face_id.size and gb.face_id.max() >= len(faces):
        raise ValueError("gbuffer does not match mesh")
    d_attrs = None
    if dL_dattributes_img is not None:
        d_attrs = interpolate_adjoint(gb, faces, n, dL_dattributes_img)
    dV = np.zeros((n, 3))
    if dL_ddepth_img is not None:
        dz = interpolate_adjoint(gb, faces, n, np.asarray(dL_ddepth_img, dtype=float)[..., None])[:, 0]
        dV += dz[:, None] * camera.R[2][None, :]
    return d_attrs, dV


# --------------------------------------------------------------------------
# soft silhouette


@numba.njit(cache=True)
def _edge_sq(px, py, ax, ay, bx, by):
    ex, ey = bx - ax, by - ay
    L = ex * ex + ey * ey
    t = 0.0
    if L > 0.0:
        t = ((px - ax) * ex + (py - ay) * ey) / L
        t = min(max(t, 0.0), 1.0)
    qx, qy = ax + t * ex, ay + t * ey
    dx, dy = px - qx, py - qy
    return dx * dx + dy * dy, t, dx, dy


@numba.njit(cache=True)
def _tri_sd(px, py, ax, ay, bx, by, cx, cy):
    """Signed squared distance to the triangle boundary (+ inside) and the
    nearest edge's ``(k, t, dx, dy)``."""
    d0, t0, x0, y0 = _edge_sq(px, py, ax, ay, bx, by)
    d1, t1, x1, y1 = _edge_sq(px, py, bx, by, cx, cy)
    d2, t2, x2, y2 = _edge_sq(px, py, cx, cy, ax, ay)
    k, d, t, dx, dy = 0, d0, t0, x0, y0
    if d1 < d:
        k, d, t, dx, dy = 1, d1, t1, x1, y1
    if d2 < d:
        k, d, t, dx, dy = 2, d2, t2, x2, y2
    e0 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    e1 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
    e2 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
    inside = (e0 > 0.0 and e1 > 0.0 and e2 > 0.0) or (e0 < 0.0 and e1 < 0.0 and e2 < 0.0)
    sign = 1.0 if inside else -1.0
    return sign, d, k, t, dx, dy


@numba.njit(cache=True)
def _one_minus_sigmoid(x):
    # 1 - sigmoid(x) = sigmoid(-x), evaluated without overflow
    if x >= 0.0:
        e = np.exp(-x)
        return e / (1.0 + e)
    return 1.0 / (1.0 + np.exp(x))


@numba.njit(cache=True)
def _face_bounds(uv, a, b, c, band, W, H):
    i0 = max(int(np.ceil(min(uv[a, 0], uv[b, 0], uv[c, 0]) - band - 0.5)), 0)
    i1 = min(int(np.floor(max(uv[a, 0], uv[b, 0], uv[c, 0]) + band - 0.5)), W - 1)
    j0 = max(int(np.ceil(min(uv[a, 1], uv[b, 1], uv[c, 1]) - band - 0.5)), 0)
    j1 = min(int(np.floor(max(uv[a, 1], uv[b, 1], uv[c, 1]) + band - 0.5)), H - 1)
    return i0, i1, j0, j1


@numba.njit(cache=True)
def _soft_forward(uv, z, faces, W, H, gamma, band, near):
    prod = np.ones((H, W))
    zeros = np.zeros((H, W), dtype=np.int64)
    for f in range(faces.shape[0]):
        a, b, c = faces[f, 0], faces[f, 1], faces[f, 2]
        if z[a] <= near or z[b] <= near or z[c] <= near:
            continue
        i0, i1, j0, j1 = _face_bounds(uv, a, b, c, band, W, H)
        for j in range(j0, j1 + 1):
            py = j + 0.5
            for i in range(i0, i1 + 1):
                px = i + 0.5
                sign, d, k, t, dx, dy = _tri_sd(px, py, uv[a, 0], uv[a, 1], uv[b, 0], uv[b, 1], uv[c, 0], uv[c, 1])
                om = _one_minus_sigmoid(sign * d / gamma)
                if om == 0.0:
                    zeros[j, i] += 1
                else:
                    prod[j, i] *= om
    return prod, zeros


@numba.njit(cache=True)
def _soft_backward(uv, z, faces, W, H, gamma, band, near, prod, zeros, g):
    duv = np.zeros(uv.shape)
    for f in range(faces.shape[0]):
        a, b, c = faces[f, 0], faces[f, 1], faces[f, 2]
        if z[a] <= near or z[b] <= near or z[c] <= near:
            continue
        i0, i1, j0, j1 = _face_bounds(uv, a, b, c, band, W, H)
        for j in range(j0, j1 + 1):
            py = j + 0.5
            for i in range(i0, i1 + 1):
                if g[j, i] == 0.0:
                    continue
                px = i + 0.5
                sign, d, k, t, dx, dy = _tri_sd(px, py, uv[a, 0], uv[a, 1], uv[b, 0], uv[b, 1], uv[c, 0], uv[c, 1])
                x = sign * d / gamma
                om = _one_minus_sigmoid(x)
                # product of the other faces' factors
                if om == 0.0:
                    others = prod[j, i] if zeros[j, i] == 1 else 0.0
                elif zeros[j, i] > 0:
                    continue
                else:
                    others = prod[j, i] / om
                # s = 1 - om * others;  d om / dx = -sigmoid(x) * om
                sig = 1.0 - om
                ds_dd = others * sig * om * sign / gamma
                gd = g[j, i] * ds_dd
                if gd == 0.0:
                    continue
                # d(d^2)/d(endpoint): -2 (p - q) (1 - t) and -2 (p - q) t
                if k == 0:
                    va, vb = a, b
                elif k == 1:
                    va, vb = b, c
                else:
                    va, vb = c, a
                duv[va, 0] += gd * (-2.0 * dx * (1.0 - t))
                duv[va, 1] += gd * (-2.0 * dy * (1.0 - t))
                duv[vb, 0] += gd * (-2.0 * dx * t)
                duv[vb, 1] += gd * (-2.0 * dy * t)
    return duv


@dataclass
class SoftState:
    uv: np.ndarray
    z: np.ndarray
    prod: np.ndarray
    zeros: np.ndarray
    gamma: float
    band: float


def _check_gamma(gamma):
    if not gamma > 0:
        raise ValueError("gamma must be positive")


def soft_silhouette_uv(uv, z, faces, W, H, gamma=DEFAULT_GAMMA, band=DEFAULT_BAND):
    """Soft silhouette from already-projected vertices (``(s, SoftState)``)."""
    _check_gamma(gamma)
    faces = np.asarray(faces, dtype=np.int64)
    uv = np.ascontiguousarray(uv, dtype=float)
    z = np.ascontiguousarray(z, dtype=float)
    prod, zeros = _soft_forward(uv, z, faces, int(W), int(H), float(gamma), float(band), NEAR)
    s = np.where(zeros > 0, 1.0, 1.0 - prod)
    return s, SoftState(uv, z, prod, zeros, float(gamma), float(band))


def soft_silhouette_uv_adjoint(state: SoftState, faces, dL_ds) -> np.ndarray:
    """Gradient wrt projected vertex coordinates ``(n, 2)``."""
    faces = np.asarray(faces, dtype=np.int64)
    g = np.ascontiguousarray(dL_ds, dtype=float)
    H, W = g.shape
    return _soft_backward(
        state.uv, state.z, faces, W, H, state.gamma, state.band, NEAR, state.prod, state.zeros, g
    )


def soft_silhouette(mesh, camera: CameraView, W: int, H: int, gamma: float = DEFAULT_GAMMA,
                    band: float = DEFAULT_BAND, return_state: bool = False):
    """Smooth coverage ``1 - prod_j (1 - sigmoid(sign_j d_j^2 / gamma))``.

    ``d_j`` is the pixel distance to triangle ``j``'s boundary; only triangles
    whose screen bounds lie within ``band`` pixels contribute.
    """
    if len(mesh.faces) == 0:
        raise ValueError("mesh has no faces")
    uv, z = _screen(mesh, camera)
    s, state = soft_silhouette_uv(uv, z, mesh.faces, W, H, gamma, band)
    return (s, state) if return_state else s


def soft_silhouette_adjoint(mesh, camera: CameraView, dL_ds, state: SoftState | None = None,
                            gamma: float = DEFAULT_GAMMA, band: float = DEFAULT_BAND) -> np.ndarray:
    """Reverse of ``soft_silhouette``: ``dL/dV (n, 3)`` through the projection."""
    H, W = np.shape(dL_ds)
    if state is None:
        _, state = soft_silhouette(mesh, camera, W, H, gamma, band, return_state=True)
    duv = soft_silhouette_uv_adjoint(state, mesh.faces, dL_ds)
    used = np.any(duv != 0.0, axis=1)
    dV = np.zeros((len(mesh.vertices), 3))
    if used.any():
        J = project_jacobian(camera, mesh.vertices[used])
        dV[used] = np.einsum("nk,nkd->nd", duv[used], J[:, :2, :])
    return dV
