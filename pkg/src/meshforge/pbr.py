"""Cook-Torrance shading under a latitude-longitude environment map.

Each environment texel acts as a directional light weighted by its solid
angle. The diffuse lobe is the albedo itself (no ``1/pi``); the learnable light
absorbs that scale. Shadowing and interreflection are not modelled.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

F0 = 0.04
SPEC_EPS = 1e-6
_HN_EPS = 1e-12
_CHUNK = 32768


@dataclass
class EnvironmentMap:
    """Radiance on an ``H_e x W_e`` lat-long grid, stored through softplus."""

    raw: np.ndarray

    @classmethod
    def from_radiance(cls, radiance) -> "EnvironmentMap":
        radiance = np.asarray(radiance, dtype=float)
        if np.any(radiance < 0) or not np.all(np.isfinite(radiance)):
            raise ValueError("radiance must be finite and nonnegative")
        # inverse softplus, stable for large values
        r = np.maximum(radiance, 1e-12)
        return cls(np.where(r > 30, r, np.log(np.expm1(np.minimum(r, 30)))))

    @classmethod
    def constant(cls, value: float, shape=(4, 8)) -> "EnvironmentMap":
        return cls.from_radiance(np.full(tuple(shape) + (3,), float(value)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.raw.shape[:2]

    @property
    def radiance(self) -> np.ndarray:
        return np.logaddexp(0.0, self.raw)

    def radiance_grad(self) -> np.ndarray:
        """d radiance / d raw (the logistic function)."""
        return 0.5 * (1.0 + np.tanh(0.5 * self.raw))


def env_texel_direction(h: int, w: int, H_e: int, W_e: int):
    """Unit direction (y up) and solid angle of texel ``(h, w)``."""
    theta = np.pi * (h + 0.5) / H_e
    phi = 2.0 * np.pi * (w + 0.5) / W_e
    d = np.array([np.sin(theta) * np.cos(phi), np.cos(theta), np.sin(theta) * np.sin(phi)])
    # exact area of the latitude band slice; the midpoint rule sin(theta) * dtheta
    # overshoots 4 pi by ~2.6% at 4 rows
    band = np.cos(np.pi * h / H_e) - np.cos(np.pi * (h + 1) / H_e)
    return d, (2.0 * np.pi / W_e) * band


@lru_cache(maxsize=16)
def env_directions(H_e: int, W_e: int):
    """All texel directions ``(H_e*W_e, 3)`` and solid angles ``(H_e*W_e,)``."""
    dirs, dom = zip(*(env_texel_direction(h, w, H_e, W_e) for h in range(H_e) for w in range(W_e)))
    dirs, dom = np.array(dirs), np.array(dom)
    dirs.setflags(write=False)
    dom.setflags(write=False)
    return dirs, dom


# --------------------------------------------------------------------------
# BRDF pieces


def fresnel(cos_vh):
    c = np.clip(cos_vh, 0.0, 1.0)
    return F0 + (1.0 - F0) * (1.0 - c) ** 5


def ggx_distribution(nh, alpha):
    """GGX normal distribution with the positivity step on ``h . n``."""
    a2 = alpha * alpha
    q = 1.0 + nh * nh * (a2 - 1.0)
    return np.where(nh > 0, a2 / (np.pi * q * q), 0.0)


def smith_factor(wn, wh, nh, alpha):
    """Single-direction geometry term; the tangent uses ``(h . n)^2`` below the line."""
    a2 = alpha * alpha
    t = a2 * (1.0 - wn * wn) / np.maximum(nh * nh, _HN_EPS)
    chi = (wh * wn) > 0
    return np.where(chi, 2.0 / (1.0 + np.sqrt(1.0 + t)), 0.0)


def brdf(w_i, w_o, n, a_d, a_s, alpha):
    """Diffuse plus microfacet specular reflectance (RGB), broadcasting over
    leading axes. Directions point away from the surface."""
    h = w_i + w_o
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-300)
    nl = np.sum(n * w_i, axis=-1)
    nv = np.sum(n * w_o, axis=-1)
    nh = np.sum(n * h, axis=-1)
    vh = np.sum(w_o * h, axis=-1)
    lh = np.sum(w_i * h, axis=-1)
    D = ggx_distribution(nh, alpha)
    G = smith_factor(nl, lh, nh, alpha) * smith_factor(nv, vh, nh, alpha)
    F = fresnel(vh)
    denom = 4.0 * np.maximum(nv, 0.0) * np.maximum(nl, 0.0) + SPEC_EPS
    k = D * F * G / denom
    return np.asarray(a_d) + np.asarray(a_s) * k[..., None]


# --------------------------------------------------------------------------
# shading


def _split(params):
    return params[:, 0:3], params[:, 3:6], params[:, 6]


def _spec_terms(n, v, alpha, dirs):
    """Per (pixel, texel) quantities shared by forward and adjoint."""
    h = dirs[None, :, :] + v[:, None, :]
    h /= np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-300)
    nl = n @ dirs.T
    nv = np.sum(n * v, axis=1)[:, None]
    nh = np.einsum("pc,ptc->pt", n, h)
    vh = np.einsum("pc,ptc->pt", v, h)
    lh = np.einsum("tc,ptc->pt", dirs, h)
    return h, nl, nv, nh, vh, lh


def _shade_chunk(params, n, v, L, dirs, dom):
    a_d, a_s, alpha = _split(params)
    alpha = alpha[:, None]
    _, nl, nv, nh, vh, lh = _spec_terms(n, v, alpha, dirs)
    D = ggx_distribution(nh, alpha)
    G = smith_factor(nl, lh, nh, alpha) * smith_factor(nv, vh, nh, alpha)
    F = fresnel(vh)
    k = D * F * G / (4.0 * np.maximum(nv, 0.0) * np.maximum(nl, 0.0) + SPEC_EPS)
    wgt = np.maximum(nl, 0.0) * dom[None, :]  # (P, T)
    diffuse = a_d * (wgt @ L)
    specular = a_s * ((wgt * k) @ L)
    return diffuse + specular


def _flatten_inputs(params_img, normals_img, view_dirs, coverage):
    cov = np.asarray(coverage) > 0.5
    return (
        cov,
        np.asarray(params_img, dtype=float)[cov],
        np.asarray(normals_img, dtype=float)[cov],
        np.asarray(view_dirs, dtype=float)[cov],
    )


def shade(params_img, normals_img, view_dirs, env: EnvironmentMap, coverage) -> np.ndarray:
    """Outgoing radiance image ``(H, W, 3)``; uncovered pixels are zero.

    ``view_dirs`` point from the surface toward the camera.
    """
    cov, params, n, v = _flatten_inputs(params_img, normals_img, view_dirs, coverage)
    dirs, dom = env_directions(*env.shape)
    L = env.radiance.reshape(-1, 3)
    out = np.zeros(cov.shape + (3,))
    vals = np.empty((len(params), 3))
    for s in range(0, len(params), _CHUNK):
        e = s + _CHUNK
        vals[s:e] = _shade_chunk(params[s:e], n[s:e], v[s:e], L, dirs, dom)
    out[cov] = vals
    return out


def _adjoint_chunk(params, n, v, L, dirs, dom, g):
    a_d, a_s, alpha = _split(params)
    al = alpha[:, None]
    a2 = al * al
    h, nl, nv, nh, vh, lh = _spec_terms(n, v, al, dirs)

    pos_nh = nh > 0
    q = 1.0 + nh * nh * (a2 - 1.0)
    D = np.where(pos_nh, a2 / (np.pi * q * q), 0.0)
    dD_da2 = np.where(pos_nh, 1.0 / (np.pi * q * q) - 2.0 * a2 * nh * nh / (np.pi * q**3), 0.0)
    dD_dnh = np.where(pos_nh, -4.0 * a2 * nh * (a2 - 1.0) / (np.pi * q**3), 0.0)

    nh2 = nh * nh
    nh2c = np.maximum(nh2, _HN_EPS)
    dnh2c_dnh = np.where(nh2 > _HN_EPS, 2.0 * nh, 0.0)

    def smith(wn, wh):
        t = a2 * (1.0 - wn * wn) / nh2c
        s = np.sqrt(1.0 + t)
        chi = (wh * wn) > 0
        gp = np.where(chi, 2.0 / (1.0 + s), 0.0)
        dgp_dt = np.where(chi, -1.0 / ((1.0 + s) ** 2 * s), 0.0)
        dt_da2 = (1.0 - wn * wn) / nh2c
        dt_dwn = -2.0 * a2 * wn / nh2c
        dt_dnh = -t / nh2c * dnh2c_dnh
        return gp, dgp_dt * dt_da2, dgp_dt * dt_dwn, dgp_dt * dt_dnh

    Gi, dGi_da2, dGi_dnl, dGi_dnh = smith(nl, lh)
    Gv, dGv_da2, dGv_dnv, dGv_dnh = smith(nv, vh)
    F = fresnel(vh)
    pl = np.maximum(nl, 0.0)
    pv = np.maximum(nv, 0.0)
    denom = 4.0 * pv * pl + SPEC_EPS
    k = D * F * Gi * Gv / denom
    wgt = pl * dom[None, :]

    # upstream: g (P,3). sums over RGB
    gaL = (g * a_s) @ L.T  # (P, T): sum_c g_c a_s,c L_tc
    gdL = (g * a_d) @ L.T

    d_ad = g * (wgt @ L)
    d_as = g * ((wgt * k) @ L)

    dk = gaL * wgt  # dL/dk
    dwgt = gdL + gaL * k  # dL/dwgt
    dD = dk * F * Gi * Gv / denom
    dGi = dk * D * F * Gv / denom
    dGv = dk * D * F * Gi / denom
    ddenom = -dk * k / denom

    d_a2 = dD * dD_da2 + dGi * dGi_da2 + dGv * dGv_da2
    d_alpha = np.sum(d_a2 * 2.0 * al, axis=1)

    d_nh = dD * dD_dnh + dGi * dGi_dnh + dGv * dGv_dnh
    d_nl = dGi * dGi_dnl + ddenom * 4.0 * pv * (nl > 0) + dwgt * dom[None, :] * (nl > 0)
    d_nv = np.sum(dGv * dGv_dnv + ddenom * 4.0 * pl * (nv > 0), axis=1)

    d_n = d_nl @ dirs + d_nv[:, None] * v + np.einsum("pt,ptc->pc", d_nh, h)
    d_L = (wgt.T @ (g * a_d)) + ((wgt * k).T @ (g * a_s))  # (T, 3)
    d_params = np.concatenate([d_ad, d_as, d_alpha[:, None]], axis=1)
    return d_params, d_n, d_L


def shade_adjoint(params_img, normals_img, view_dirs, env: EnvironmentMap, coverage, dL_dimg):
    """Reverse of ``shade``.

    Returns ``(dL/dparams_img, dL/dnormals_img, dL/denv_raw)``; the view
    directions are treated as constants.
    """
    cov, params, n, v = _flatten_inputs(params_img, normals_img, view_dirs, coverage)
    g_all = np.asarray(dL_dimg, dtype=float)[cov]
    dirs, dom = env_directions(*env.shape)
    L = env.radiance.reshape(-1, 3)
    d_params = np.empty_like(params)
    d_n = np.empty_like(n)
    d_L = np.zeros_like(L)
    for s in range(0, len(params), _CHUNK):
        e = s + _CHUNK
        dp, dn, dl = _adjoint_chunk(params[s:e], n[s:e], v[s:e], L, dirs, dom, g_all[s:e])
        d_params[s:e] = dp
        d_n[s:e] = dn
        d_L += dl
    out_p = np.zeros(cov.shape + (params.shape[1],))
    out_n = np.zeros(cov.shape + (3,))
    out_p[cov] = d_params
    out_n[cov] = d_n
    d_raw = d_L.reshape(env.raw.shape) * env.radiance_grad()
    return out_p, out_n, d_raw
