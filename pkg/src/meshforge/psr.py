"""Spectral Poisson surface reconstruction with an exact adjoint.

An oriented point cloud in the unit cube is splatted onto a periodic ``r^3``
grid (trilinear weights), the divergence of that normal field is inverted in
the Fourier domain under a Gaussian low-pass, and the result is re-centred on
the points and scaled by its magnitude at the grid corner.

Grid node ``(i, j, k)`` sits at ``(i, j, k) / r``. With outward normals the
field comes out negative inside the surface and positive outside.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft

from .errors import DegenerateNormalizationError
from .iso import TriangleMesh

_OFFSETS = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64)


@dataclass
class OrientedPointCloud:
    positions: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        if self.positions.shape != self.normals.shape:
            raise ValueError("positions and normals must have the same shape")

    def __len__(self) -> int:
        return len(self.positions)

    def copy(self) -> "OrientedPointCloud":
        return OrientedPointCloud(self.positions.copy(), self.normals.copy())

    def project_valid(self, r: int) -> None:
        """Renormalize normals and clamp positions to ``[1/(2r), 1 - 1/(2r)]``."""
        eps = 0.5 / r
        np.clip(self.positions, eps, 1.0 - eps, out=self.positions)
        norm = np.linalg.norm(self.normals, axis=1, keepdims=True)
        self.normals /= np.maximum(norm, 1e-12)


@dataclass(frozen=True)
class PsrConfig:
    sigma: float = 2.0
    m: float = 0.5

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


# --------------------------------------------------------------------------
# trilinear splatting on the periodic grid


def trilinear_stencil(positions: np.ndarray, r: int):
    """Flat node indices, weights and weight gradients for periodic trilinear
    interpolation at unit-cube ``positions``.

    Returns ``idx (k, 8)``, ``w (k, 8)`` and ``dw (k, 8, 3)`` where ``dw`` is
    the derivative of each weight with respect to the position.
    """
    g = np.asarray(positions, dtype=float) * r
    base = np.floor(g)
    f = g - base
    base = base.astype(np.int64)
    idx3 = (base[:, None, :] + _OFFSETS[None]) % r
    idx = (idx3[..., 0] * r + idx3[..., 1]) * r + idx3[..., 2]
    # per-axis factor: f if offset==1 else 1-f
    fac = np.where(_OFFSETS[None] == 1, f[:, None, :], 1.0 - f[:, None, :])
    dfac = np.where(_OFFSETS[None] == 1, 1.0, -1.0) * r
    w = fac.prod(axis=2)
    dw = np.empty(fac.shape)
    dw[..., 0] = dfac[..., 0] * fac[..., 1] * fac[..., 2]
    dw[..., 1] = fac[..., 0] * dfac[..., 1] * fac[..., 2]
    dw[..., 2] = fac[..., 0] * fac[..., 1] * dfac[..., 2]
    return idx, w, dw


def scatter(values: np.ndarray, positions: np.ndarray, r: int, stencil=None) -> np.ndarray:
    """Splat per-point values ``(k,)`` or ``(k, c)`` onto an ``r^3`` grid."""
    idx, w, _ = stencil if stencil is not None else trilinear_stencil(positions, r)
    values = np.asarray(values, dtype=float)
    flat_idx = idx.ravel()
    if values.ndim == 1:
        out = np.bincount(flat_idx, weights=(w * values[:, None]).ravel(), minlength=r**3)
        return out.reshape(r, r, r)
    chans = [
        np.bincount(flat_idx, weights=(w * values[:, c, None]).ravel(), minlength=r**3)
        for c in range(values.shape[1])
    ]
    return np.stack(chans, axis=-1).reshape(r, r, r, values.shape[1])


def gather(grid: np.ndarray, positions: np.ndarray, stencil=None) -> np.ndarray:
    """Trilinear interpolation of a periodic grid (the transpose of ``scatter``)."""
    r = grid.shape[0]
    idx, w, _ = stencil if stencil is not None else trilinear_stencil(positions, r)
    flat = grid.reshape(r**3, -1)
    out = np.einsum("kj,kjc->kc", w, flat[idx])
    return out[:, 0] if grid.ndim == 3 else out


def gather_grad(grid: np.ndarray, positions: np.ndarray, stencil=None) -> np.ndarray:
    """Spatial gradient of the trilinear interpolant of a scalar grid, ``(k, 3)``."""
    r = grid.shape[0]
    idx, _, dw = stencil if stencil is not None else trilinear_stencil(positions, r)
    return np.einsum("kjd,kj->kd", dw, grid.ravel()[idx])


def scatter_normals(P: OrientedPointCloud, r: int) -> np.ndarray:
    """Trilinear splat of the normals onto an ``r^3 x 3`` vector field."""
    return scatter(P.normals, P.positions, r)


# --------------------------------------------------------------------------
# spectral operator


@lru_cache(maxsize=8)
def spectral_kernel(r: int, sigma: float) -> np.ndarray:
    """Per-axis transfer functions ``K_c(u) = g(u) * i u_c / (-2 pi |u|^2)``.

    Laid out for ``rfftn`` (last axis halved), shape ``(3, r, r, r//2+1)``.
    The derivative factor is zeroed at the Nyquist frequency so each ``K_c``
    is the transform of a real odd kernel; the DC term is zero.
    """
    fx = np.fft.fftfreq(r, d=1.0 / r)
    fz = np.fft.rfftfreq(r, d=1.0 / r)
    u = np.meshgrid(fx, fx, fz, indexing="ij")
    sq = u[0] ** 2 + u[1] ** 2 + u[2] ** 2
    gauss = np.exp(-2.0 * sigma**2 * sq / r**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(sq > 0, gauss / (-2.0 * np.pi * sq), 0.0)
    nyq = r // 2 if r % 2 == 0 else None
    out = np.empty((3, r, r, r // 2 + 1), dtype=complex)
    for c in range(3):
        uc = u[c].copy()
        if nyq is not None:
            uc[np.abs(uc) == nyq] = 0.0
        out[c] = 1j * uc * scale
    out.setflags(write=False)
    return out


def poisson_field(v: np.ndarray, sigma: float) -> np.ndarray:
    """Unnormalized indicator ``Phi'`` from a splatted normal field ``(r,r,r,3)``."""
    r = v.shape[0]
    K = spectral_kernel(r, float(sigma))
    spec = sum(K[c] * scipy.fft.rfftn(v[..., c]) for c in range(3))
    return scipy.fft.irfftn(spec, s=(r, r, r))


def poisson_field_adjoint(y: np.ndarray, sigma: float) -> np.ndarray:
    """Transpose of ``poisson_field``: grid ``(r,r,r)`` -> vector field ``(r,r,r,3)``.

    Each per-axis operator is a convolution with a real odd kernel, so its
    transpose is the same convolution negated.
    """
    r = y.shape[0]
    K = spectral_kernel(r, float(sigma))
    Y = scipy.fft.rfftn(y)
    return np.stack([-scipy.fft.irfftn(K[c] * Y, s=(r, r, r)) for c in range(3)], axis=-1)


# --------------------------------------------------------------------------
# forward / adjoint


@dataclass
class PsrState:
    """Intermediate values of a forward solve, reused by the adjoint."""

    r: int
    stencil: tuple
    phi_raw: np.ndarray
    anchor: float
    mean_at_points: float


def solve(P: OrientedPointCloud, cfg: PsrConfig, r: int, return_state: bool = False):
    """Indicator grid ``(r, r, r)`` whose zero level set is the surface."""
    if len(P) == 0:
        raise ValueError("point cloud is empty")
    stencil = trilinear_stencil(P.positions, r)
    v = scatter(P.normals, P.positions, r, stencil)
    phi_raw = poisson_field(v, cfg.sigma)
    anchor = float(phi_raw[0, 0, 0])
    if abs(anchor) < 1e-12:
        raise DegenerateNormalizationError(
            f"degenerate normalization: |Phi'(0)| = {abs(anchor):.3g}"
        )
    mean = float(gather(phi_raw, P.positions, stencil).mean())
    phi = (cfg.m / abs(anchor)) * (phi_raw - mean)
    if return_state:
        return phi, PsrState(r, stencil, phi_raw, anchor, mean)
    return phi


def solve_adjoint(
    P: OrientedPointCloud,
    cfg: PsrConfig,
    r: int,
    dL_dphi: np.ndarray,
    state: PsrState | None = None,
):
    """Reverse-mode derivative of ``solve``: ``(dL/dpositions, dL/dnormals)``."""
    if state is None:
        _, state = solve(P, cfg, r, return_state=True)
    G = np.asarray(dL_dphi, dtype=float)
    k = len(P)
    s = cfg.m / abs(state.anchor)
    sumG = G.sum()

    # phi = s * (phi_raw - mean)
    d_raw = s * G
    d_mean = -s * sumG
    # s depends on anchor = phi_raw[0,0,0]; ds/danchor = -s * sign / |anchor|
    d_s = np.sum(G * (state.phi_raw - state.mean_at_points))
    d_raw[0, 0, 0] += d_s * (-s * np.sign(state.anchor) / abs(state.anchor))
    # mean = (1/k) sum_j interp(phi_raw, x_j)
    d_f = np.full(k, d_mean / k)
    d_raw += scatter(d_f, P.positions, r, state.stencil)
    d_pos = d_f[:, None] * gather_grad(state.phi_raw, P.positions, state.stencil)

    d_v = poisson_field_adjoint(d_raw, cfg.sigma)
    idx, w, dw = state.stencil
    dv_at = d_v.reshape(r**3, 3)[idx]  # (k, 8, 3)
    d_normals = np.einsum("kj,kjc->kc", w, dv_at)
    d_pos += np.einsum("kjd,kjc,kc->kd", dw, dv_at, P.normals)
    return d_pos, d_normals


# --------------------------------------------------------------------------
# point resampling


def resample(mesh: TriangleMesh, k: int, seed=None) -> OrientedPointCloud:
    """Area-uniform surface samples with the normals of their faces."""
    if k == 0:
        return OrientedPointCloud(np.zeros((0, 3)), np.zeros((0, 3)))
    fn = mesh.face_normals()
    area2 = np.linalg.norm(fn, axis=1)
    total = area2.sum()
    if not total > 0:
        raise ValueError("cannot sample a mesh with zero total area")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(area2), size=k, p=area2 / total)
    u = rng.random((k, 2))
    su = np.sqrt(u[:, 0])
    b0, b1 = 1.0 - su, su * (1.0 - u[:, 1])
    b2 = 1.0 - b0 - b1
    tri = mesh.vertices[mesh.faces[face]]
    pos = b0[:, None] * tri[:, 0] + b1[:, None] * tri[:, 1] + b2[:, None] * tri[:, 2]
    nrm = fn[face] / np.maximum(area2[face], 1e-300)[:, None]
    return OrientedPointCloud(pos, nrm)
