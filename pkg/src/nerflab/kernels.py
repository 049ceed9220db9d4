"""Numerically hot inner loops, JIT-compiled with numba when available.

Every kernel has a pure-numpy twin; set the environment variable
``NERFLAB_NO_NUMBA=1`` to force the numpy path (useful for debugging and as
the baseline in ``benchmarks/bench_kernels.py``).
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("NERFLAB_NO_NUMBA", "0").lower() not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit, prange
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if not USE_NUMBA:  # identity decorators for the fallback path

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

    prange = range


# ------------------------------------------------------- integrated encoding
#
# Sinusoidal features of a Gaussian: E[sin(s*x)] = sin(s*mu) * exp(-s^2 var/2)
# for x ~ N(mu, var), likewise cosine. Tables of sin, cos and the damping
# factor are enough to assemble both the forward features and their partials
# w.r.t. mu and var.


def _ipe_tables_np(mu, var, scales):
    arg = mu[..., None] * scales  # (..., 3, L)
    damp = np.exp(-0.5 * var[..., None] * scales**2)
    return np.sin(arg), np.cos(arg), damp


@njit(cache=True)
def _ipe_tables_nb(mu, var, scales):  # pragma: no cover - compiled
    n = mu.shape[0]
    d = mu.shape[1]
    L = scales.shape[0]
    s = np.empty((n, d, L))
    c = np.empty((n, d, L))
    damp = np.empty((n, d, L))
    for i in prange(n):
        for j in range(d):
            m = mu[i, j]
            v = var[i, j]
            for k in range(L):
                sc = scales[k]
                a = m * sc
                s[i, j, k] = np.sin(a)
                c[i, j, k] = np.cos(a)
                damp[i, j, k] = np.exp(-0.5 * v * sc * sc)
    return s, c, damp


def ipe_tables(mu, var, scales):
    """sin/cos/damping tables, shape (..., dim, L)."""
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    var = np.ascontiguousarray(var, dtype=np.float64)
    scales = np.ascontiguousarray(scales, dtype=np.float64)
    if USE_NUMBA and mu.ndim == 2:
        return _ipe_tables_nb(mu, var, scales)
    return _ipe_tables_np(mu, var, scales)


# ------------------------------------------------------- smooth activations
#
# softplus and its derivative (the logistic sigmoid) in one pass; these run
# on every trunk activation of every sample and dominate elementwise cost.


def _softplus_pair_np(x):
    e = np.exp(-np.abs(x))
    sig = np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.logaddexp(0.0, x), sig


@njit(cache=True, parallel=True)
def _softplus_pair_nb(x):  # pragma: no cover - compiled
    n = x.size
    out = np.empty(n)
    sig = np.empty(n)
    flat = x.ravel()
    for i in prange(n):
        v = flat[i]
        if v >= 0.0:
            e = np.exp(-v)
            out[i] = v + np.log1p(e)
            sig[i] = 1.0 / (1.0 + e)
        else:
            e = np.exp(v)
            out[i] = np.log1p(e)
            sig[i] = e / (1.0 + e)
    return out, sig


def softplus_pair(x):
    """(softplus(x), sigmoid(x)) computed together."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if USE_NUMBA:
        out, sig = _softplus_pair_nb(x)
        return out.reshape(x.shape), sig.reshape(x.shape)
    return _softplus_pair_np(x)


def sigmoid_val(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


# --------------------------------------------------------- dense ray marcher
#
# Emission-absorption quadrature with exponential transmittance, one ray per
# row. Used by the analytic-scene oracle renderer at thousands of samples per
# ray, where a fused loop beats materializing (rays, samples) temporaries.


def _raymarch_np(sigma, delta, rgb, t_mid, far, background):
    tau = sigma * delta
    t_exc = np.exp(-np.cumsum(tau, axis=-1) + tau)  # T_i, exclusive cumsum
    w = t_exc * (1.0 - np.exp(-tau))
    t_final = np.exp(-np.sum(tau, axis=-1))
    color = (w[..., None] * rgb).sum(axis=-2) + t_final[..., None] * background
    depth = (w * t_mid).sum(axis=-1) + t_final * far
    return color, depth


@njit(cache=True, parallel=True)
def _raymarch_nb(sigma, delta, rgb, t_mid, far, background):  # pragma: no cover
    n, m = sigma.shape
    color = np.empty((n, 3))
    depth = np.empty(n)
    for i in prange(n):
        trans = 1.0
        cr = 0.0
        cg = 0.0
        cb = 0.0
        d = 0.0
        for j in range(m):
            alpha = 1.0 - np.exp(-sigma[i, j] * delta[i, j])
            w = trans * alpha
            cr += w * rgb[i, j, 0]
            cg += w * rgb[i, j, 1]
            cb += w * rgb[i, j, 2]
            d += w * t_mid[i, j]
            trans *= 1.0 - alpha
        color[i, 0] = cr + trans * background[0]
        color[i, 1] = cg + trans * background[1]
        color[i, 2] = cb + trans * background[2]
        depth[i] = d + trans * far
    return color, depth


def raymarch(sigma, delta, rgb, t_mid, far, background):
    """Composite dense per-ray samples into color and expected depth."""
    sigma = np.ascontiguousarray(sigma, dtype=np.float64)
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    rgb = np.ascontiguousarray(rgb, dtype=np.float64)
    t_mid = np.ascontiguousarray(t_mid, dtype=np.float64)
    background = np.ascontiguousarray(background, dtype=np.float64)
    if USE_NUMBA:
        return _raymarch_nb(sigma, delta, rgb, t_mid, float(far), background)
    return _raymarch_np(sigma, delta, rgb, t_mid, float(far), background)


# --------------------------------------------------------- analytic density
#
# Smooth-edged primitives: the density factor ramps linearly from 1 inside to
# 0 outside across a band of the given falloff width centered on the surface,
# so a point exactly on the surface sees half the peak density.


@njit(cache=True, parallel=True)
def _scene_density_nb(pts, kinds, centers, sizes, dens, albedo, falloff):  # pragma: no cover
    n = pts.shape[0]
    np_prim = kinds.shape[0]
    sigma = np.zeros(n)
    rgb = np.zeros((n, 3))
    for i in prange(n):
        s_tot = 0.0
        r = 0.0
        g = 0.0
        b = 0.0
        for p in range(np_prim):
            dx = pts[i, 0] - centers[p, 0]
            dy = pts[i, 1] - centers[p, 1]
            dz = pts[i, 2] - centers[p, 2]
            if kinds[p] == 0:  # sphere, size = radius
                sd = np.sqrt(dx * dx + dy * dy + dz * dz) - sizes[p, 0]
            else:  # box, size = half extents
                qx = abs(dx) - sizes[p, 0]
                qy = abs(dy) - sizes[p, 1]
                qz = abs(dz) - sizes[p, 2]
                ox = qx if qx > 0.0 else 0.0
                oy = qy if qy > 0.0 else 0.0
                oz = qz if qz > 0.0 else 0.0
                outside = np.sqrt(ox * ox + oy * oy + oz * oz)
                inner = qx
                if qy > inner:
                    inner = qy
                if qz > inner:
                    inner = qz
                if inner > 0.0:
                    inner = 0.0
                sd = outside + inner
            f = 0.5 - sd / falloff[p]
            if f < 0.0:
                f = 0.0
            elif f > 1.0:
                f = 1.0
            sp = dens[p] * f
            s_tot += sp
            r += sp * albedo[p, 0]
            g += sp * albedo[p, 1]
            b += sp * albedo[p, 2]
        sigma[i] = s_tot
        if s_tot > 0.0:
            rgb[i, 0] = r / s_tot
            rgb[i, 1] = g / s_tot
            rgb[i, 2] = b / s_tot
    return sigma, rgb


def _scene_density_np(pts, kinds, centers, sizes, dens, albedo, falloff):
    n = pts.shape[0]
    sigma = np.zeros(n)
    rgb_acc = np.zeros((n, 3))
    for p in range(kinds.shape[0]):
        d = pts - centers[p]
        if kinds[p] == 0:
            sd = np.linalg.norm(d, axis=-1) - sizes[p, 0]
        else:
            q = np.abs(d) - sizes[p]
            sd = np.linalg.norm(np.maximum(q, 0.0), axis=-1) + np.minimum(
                q.max(axis=-1), 0.0
            )
        f = np.clip(0.5 - sd / falloff[p], 0.0, 1.0)
        sp = dens[p] * f
        sigma += sp
        rgb_acc += sp[:, None] * albedo[p]
    rgb = np.zeros((n, 3))
    hit = sigma > 0.0
    rgb[hit] = rgb_acc[hit] / sigma[hit, None]
    return sigma, rgb


def scene_density_batch(pts, kinds, centers, sizes, dens, albedo, falloff):
    """Density and density-weighted albedo of packed primitives at pts (N,3)."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    if USE_NUMBA:
        return _scene_density_nb(pts, kinds, centers, sizes, dens, albedo, falloff)
    return _scene_density_np(pts, kinds, centers, sizes, dens, albedo, falloff)
