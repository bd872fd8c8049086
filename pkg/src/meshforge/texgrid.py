"""Dense learnable reflectance grid.

Seven channels per node: diffuse RGB, specular RGB and roughness. Values are
stored unconstrained ("raw") and squashed on lookup, so an optimizer can move
them freely. Node ``i`` sits at ``i / r`` on each axis; lookups outside
``[0, (r-1)/r]`` clamp to the border.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy.special import expit, logit

N_CHANNELS = 7
CHANNEL_ORDER = "ad_r,ad_g,ad_b,as_r,as_g,as_b,alpha"
ALPHA_MIN = 0.01

_OFFSETS = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64)
_MAGIC = b"MFTG"


@dataclass
class TextureGrid:
    raw: np.ndarray

    def __post_init__(self):
        if self.raw.ndim != 4 or self.raw.shape[-1] != N_CHANNELS:
            raise ValueError("raw must have shape (r, r, r, 7)")
        if len(set(self.raw.shape[:3])) != 1 or self.raw.shape[0] < 2:
            raise ValueError("texture grid must be cubic with r >= 2")

    @property
    def resolution(self) -> int:
        return self.raw.shape[0]

    @classmethod
    def initial(cls, r: int, dtype=np.float64, diffuse=0.5, specular=0.04, roughness=0.5):
        raw = np.empty((r, r, r, N_CHANNELS), dtype=dtype)
        raw[..., 0:3] = logit(diffuse)
        raw[..., 3:6] = logit(specular)
        raw[..., 6] = logit((roughness - ALPHA_MIN) / (1.0 - ALPHA_MIN))
        return cls(raw)


def activate(raw: np.ndarray) -> np.ndarray:
    """Raw channels -> (a_d, a_s, alpha) with a_d, a_s in [0, 1], alpha in [0.01, 1]."""
    out = expit(raw)
    out[..., 6] = ALPHA_MIN + (1.0 - ALPHA_MIN) * out[..., 6]
    return out


def activate_grad(raw: np.ndarray) -> np.ndarray:
    s = expit(raw)
    d = s * (1.0 - s)
    d[..., 6] *= 1.0 - ALPHA_MIN
    return d


def _stencil(positions: np.ndarray, r: int):
    g = np.asarray(positions, dtype=float) * r
    inside = (g > 0.0) & (g < r - 1)
    u = np.clip(g, 0.0, r - 1)
    base = np.minimum(np.floor(u).astype(np.int64), r - 2)
    f = u - base
    idx3 = base[:, None, :] + _OFFSETS[None]
    idx = (idx3[..., 0] * r + idx3[..., 1]) * r + idx3[..., 2]
    fac = np.where(_OFFSETS[None] == 1, f[:, None, :], 1.0 - f[:, None, :])
    dfac = np.where(_OFFSETS[None] == 1, 1.0, -1.0) * r * inside[:, None, :]
    w = fac.prod(axis=2)
    dw = np.empty(fac.shape)
    dw[..., 0] = dfac[..., 0] * fac[..., 1] * fac[..., 2]
    dw[..., 1] = fac[..., 0] * dfac[..., 1] * fac[..., 2]
    dw[..., 2] = fac[..., 0] * fac[..., 1] * dfac[..., 2]
    return idx, w, dw


def interpolate_raw(T: TextureGrid, positions: np.ndarray) -> np.ndarray:
    idx, w, _ = _stencil(positions, T.resolution)
    flat = T.raw.reshape(-1, N_CHANNELS)
    return np.einsum("kj,kjc->kc", w, flat[idx])


def sample(T: TextureGrid, positions: np.ndarray) -> np.ndarray:
    """Activated per-point parameters ``(k, 7)`` at unit-cube positions."""
    return activate(interpolate_raw(T, positions))


def sample_adjoint(T: TextureGrid, positions: np.ndarray, dL_dparams: np.ndarray):
    """Reverse of ``sample``: ``(dL/draw (r,r,r,7), dL/dpositions (k,3))``."""
    r = T.resolution
    idx, w, dw = _stencil(positions, r)
    flat = T.raw.reshape(-1, N_CHANNELS)
    corner = flat[idx]  # (k, 8, 7)
    raw_at = np.einsum("kj,kjc->kc", w, corner)
    d_raw_at = np.asarray(dL_dparams, dtype=float) * activate_grad(raw_at)
    d_pos = np.einsum("kjd,kjc,kc->kd", dw, corner, d_raw_at)
    d_grid = np.zeros((r**3, N_CHANNELS), dtype=T.raw.dtype)
    _scatter_rows(d_grid, idx, w, d_raw_at)
    return d_grid.reshape(T.raw.shape), d_pos


@numba.njit(cache=True)
def _scatter_rows(out, idx, w, vals):
    # sequential accumulation: deterministic order
    for k in range(idx.shape[0]):
        for j in range(idx.shape[1]):
            node = idx[k, j]
            wk = w[k, j]
            for c in range(vals.shape[1]):
                out[node, c] += wk * vals[k, c]


def upsample(T: TextureGrid, max_resolution: int = 512) -> TextureGrid:
    """Double the resolution by trilinear refinement of the raw values.

    Old node ``i`` becomes new node ``2i``; odd nodes are edge midpoints, and the
    last plane extrapolates linearly so affine fields are reproduced exactly.
    """
    r = T.resolution
    if 2 * r > max_resolution:
        raise MemoryError(f"texture resolution {2 * r} exceeds cap {max_resolution}")
    out = T.raw
    for axis in range(3):
        out = _refine_axis(out, axis)
    return TextureGrid(np.ascontiguousarray(out))


def _refine_axis(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    r = a.shape[0]
    out = np.empty((2 * r,) + a.shape[1:], dtype=a.dtype)
    out[0::2] = a
    out[1:-1:2] = 0.5 * (a[:-1] + a[1:])
    out[-1] = a[-1] + 0.5 * (a[-1] - a[-2])  # exact for constants
    return np.moveaxis(out, 0, axis)


# --------------------------------------------------------------------------
# checkpoint: 4-byte magic "MFTG", u32 version, u32 resolution, u32 channels,
# 64-byte NUL-padded ASCII channel order, then float32 LE values in C order
# (x, y, z, channel).


def save_texture(path, T: TextureGrid) -> None:
    header = _MAGIC + struct.pack("<III", 1, T.resolution, N_CHANNELS)
    header += CHANNEL_ORDER.encode("ascii").ljust(64, b"\0")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(T.raw, dtype="<f4").tobytes())


def load_texture(path, dtype=np.float64) -> TextureGrid:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a texture grid checkpoint")
    version, r, nch = struct.unpack("<III", data[4:16])
    if version != 1 or nch != N_CHANNELS:
        raise ValueError(f"{path}: unsupported version {version} / {nch} channels")
    order = data[16:80].rstrip(b"\0").decode("ascii")
    if order != CHANNEL_ORDER:
        raise ValueError(f"{path}: unexpected channel order {order!r}")
    vals = np.frombuffer(data, dtype="<f4", offset=80)
    if vals.size != r**3 * nch:
        raise ValueError(f"{path}: truncated payload")
    return TextureGrid(vals.reshape(r, r, r, nch).astype(dtype))
