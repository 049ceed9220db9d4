"""Interval sampling along cones, frustum Gaussians, integrated encoding.

All functions are batched over rays: interval tensors have shape (R, M).
Tensors that must carry gradients (shifted intervals, encodings) are
DualArrays; purely stochastic machinery (stratified edges, importance
resampling) stays in plain numpy and is detached by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import (
    DualArray,
    _accum,
    _node,
    _tape_of,
    _val,
    as_dual,
    clamp,
    reshape,
    take_along,
)
from .geometry import ConeBatch


@dataclass
class IntervalSet:
    """Per-ray sampling intervals given by their two edges, shape (R, M).

    Edges may be DualArrays (after a differentiable shift) or plain arrays.
    """

    t0: object
    t1: object

    @classmethod
    def from_edges(cls, edges):
        edges = np.asarray(edges, dtype=np.float64)
        return cls(t0=edges[..., :-1].copy(), t1=edges[..., 1:].copy())

    @property
    def mid(self):
        return (as_dual(self.t0) + as_dual(self.t1)) * 0.5 if self.is_dual else 0.5 * (
            self.t0 + self.t1
        )

    @property
    def width(self):
        return as_dual(self.t1) - as_dual(self.t0) if self.is_dual else self.t1 - self.t0

    @property
    def is_dual(self):
        return isinstance(self.t0, DualArray) or isinstance(self.t1, DualArray)

    @property
    def count(self):
        return _val(self.t0).shape[-1]

    def values(self):
        return _val(self.t0), _val(self.t1)


def stratified_intervals(near, far, m, jitter, rng, n_rays=1) -> IntervalSet:
    """M equal bins over [near, far]; jitter moves each interior edge within its bin."""
    if near >= far:
        raise ValueError(f"need near < far, got ({near}, {far})")
    if m < 1:
        raise ValueError("need at least one interval")
    edges = np.broadcast_to(np.linspace(near, far, m + 1), (n_rays, m + 1)).copy()
    if jitter:
        binw = (far - near) / m
        # each interior edge i sits uniformly inside bin [near+(i-1)w, near+iw]
        u = rng.uniform(0.0, 1.0, size=(n_rays, m - 1)) if m > 1 else None
        if u is not None:
            lo = near + binw * np.arange(m - 1)
            edges[:, 1:-1] = lo + binw * u
    return IntervalSet.from_edges(edges)


def frustum_gaussian(cones: ConeBatch, t0, t1):
    """Gaussian moments of conical frustums, world frame, diagonal covariance.

    Uses the numerically stable reparameterized moments (midpoint/half-width)
    so narrow frustums do not cancel catastrophically. Differentiable in the
    interval edges.
    """
    t0d, t1d = as_dual(t0), as_dual(t1)
    t_mu = (t0d + t1d) * 0.5
    t_half = (t1d - t0d) * 0.5
    hh = t_half * t_half
    mumu = t_mu * t_mu
    denom = mumu * 3.0 + hh
    t_mean = t_mu + (t_mu * hh * 2.0) / denom
    var_t = hh * (1.0 / 3.0) - (hh * hh * (mumu * 12.0 - hh)) * (4.0 / 15.0) / (
        denom * denom
    )
    r2 = (cones.base_radii**2)[:, None]
    var_r = (mumu * 0.25 + hh * (5.0 / 12.0) - (hh * hh) * (4.0 / 15.0) / denom) * r2

    d = cones.directions[:, None, :]  # (R, 1, 3), unit
    dd = d * d
    shape3 = t_mean.shape + (1,)
    mean = reshape(t_mean, shape3) * d + cones.origins[:, None, :]
    var = reshape(var_t, shape3) * dd + reshape(var_r, shape3) * (1.0 - dd)
    return mean, var


def ipe(mean, var, levels):
    """Integrated positional encoding: expected sin/cos under the Gaussian.

    mean/var have shape (..., 3); output is (..., 6*levels) laid out as
    [sin features, cos features], each flattened over (axis, level).
    """
    if levels < 1:
        raise ValueError("need at least one frequency level")
    m, v = _val(mean), _val(var)
    scales = 2.0 ** np.arange(levels, dtype=np.float64)
    lead = m.shape[:-1]
    s, c, damp = kernels.ipe_tables(m.reshape(-1, 3), v.reshape(-1, 3), scales)
    sinf = s * damp
    cosf = c * damp
    out = np.concatenate(
        [sinf.reshape(*lead, 3 * levels), cosf.reshape(*lead, 3 * levels)], axis=-1
    )
    tape = _tape_of(mean, var)

    def bwd(g):
        gs = g[..., : 3 * levels].reshape(-1, 3, levels)
        gc = g[..., 3 * levels :].reshape(-1, 3, levels)
        dmu = (gs * cosf - gc * sinf) * scales
        dvar = -0.5 * scales**2 * (gs * sinf + gc * cosf)
        _accum(mean, dmu.sum(axis=-1).reshape(m.shape))
        _accum(var, dvar.sum(axis=-1).reshape(v.shape))

    return _node(out, tape, bwd)


def encode_direction(directions, levels=4):
    """Plain positional encoding of (unit) directions plus the raw vector."""
    d = np.asarray(directions, dtype=np.float64)
    scales = 2.0 ** np.arange(levels, dtype=np.float64)
    arg = d[..., None] * scales
    flat = d.shape[:-1] + (3 * levels,)
    return np.concatenate(
        [d, np.sin(arg).reshape(flat), np.cos(arg).reshape(flat)], axis=-1
    )


def apply_offsets(iv: IntervalSet, offsets, near, far):
    """Rigidly shift each interval along its ray by its (differentiable) offset.

    The shift is clamped so intervals stay inside [near, far], then intervals
    are re-sorted by midpoint (stable, so zero offsets are a no-op). Returns
    the shifted IntervalSet and the permutation used, so per-interval
    quantities (e.g. predicted offsets) can be re-aligned by the caller.
    """
    t0, t1 = iv.values()
    eff = clamp(offsets, near - t0, far - t1)
    s0 = as_dual(t0) + eff
    s1 = as_dual(t1) + eff
    mid = 0.5 * (s0.value + s1.value)
    perm = np.argsort(mid, axis=-1, kind="stable")
    return IntervalSet(t0=take_along(s0, perm), t1=take_along(s1, perm)), perm


def hierarchical_resample(iv: IntervalSet, weights, m_fine, rng, padding=0.01):
    """Inverse-transform sample M_fine new intervals from padded coarse weights.

    Operates on plain arrays only: resampling never carries gradients.
    Coarse intervals must be contiguous (shared edges).
    """
    w = np.asarray(_val(weights), dtype=np.float64)
    if np.any(w < 0.0):
        raise ValueError("weights must be non-negative")
    t0, t1 = iv.values()
    edges = np.concatenate([t0, t1[..., -1:]], axis=-1)  # (R, M+1)
    w = w + padding
    totals = w.sum(axis=-1, keepdims=True)
    uniform = totals[:, 0] <= 0.0
    if np.any(uniform):  # all-zero weights and no padding: fall back to uniform
        w[uniform] = 1.0
        totals = w.sum(axis=-1, keepdims=True)
    pdf = w / totals
    cdf = np.concatenate([np.zeros_like(pdf[..., :1]), np.cumsum(pdf, axis=-1)], axis=-1)
    cdf[..., -1] = 1.0

    n_rays, m = w.shape
    u = np.sort(rng.uniform(0.0, 1.0, size=(n_rays, m_fine + 1)), axis=-1)
    # row-offset trick: one flat searchsorted over all rays
    row = np.arange(n_rays)[:, None]
    flat_cdf = (cdf + row).ravel()
    idx = np.searchsorted(flat_cdf, (u + row).ravel(), side="right").reshape(
        n_rays, m_fine + 1
    )
    idx = np.clip(idx - row * (m + 1) - 1, 0, m - 1)
    c_lo = np.take_along_axis(cdf, idx, axis=-1)
    c_hi = np.take_along_axis(cdf, idx + 1, axis=-1)
    e_lo = np.take_along_axis(edges, idx, axis=-1)
    e_hi = np.take_along_axis(edges, idx + 1, axis=-1)
    denom = np.where(c_hi - c_lo > 0.0, c_hi - c_lo, 1.0)
    t = e_lo + (u - c_lo) / denom * (e_hi - e_lo)
    t = np.sort(t, axis=-1)
    return IntervalSet.from_edges(t)
