"""Volume-rendering quadrature: per-sample weights, transmittance, compositing,
and the coarse/fine (optionally deformable) render pipeline.

Transmittance is the exponential form T_i = exp(-sum_{j<i} sigma_j delta_j),
so weights are bounded by 1 and sum(w) + T_final = 1 identically. Expected
depth assigns the unaccumulated mass to the far plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .autodiff import as_dual, concat, cumsum_last, exp, reshape
from .field import field_forward
from .geometry import ConeBatch
from .sampling import (
    IntervalSet,
    apply_offsets,
    encode_direction,
    frustum_gaussian,
    hierarchical_resample,
    ipe,
    stratified_intervals,
)


@dataclass
class RenderOutput:
    """Per-ray render results; tensors are DualArrays when taped."""

    color: object  # (R, 3)
    depth: object  # (R,)
    weights: object  # (R, M)
    transmittance: object  # (R, M+1), first column all ones
    accumulation: object  # (R,)
    t_mid: object = None  # (R, M) midpoints used for compositing
    color_samples: object = None  # (R, M, 3) per-sample colors


def weights_from_density(sigma, delta):
    """Compositing weights and transmittance from densities and widths."""
    sigma, delta = as_dual(sigma), as_dual(delta)
    if np.any(sigma.value < 0.0) or np.any(delta.value < 0.0):
        raise ValueError("sigma and delta must be non-negative")
    tau = sigma * delta
    cs = cumsum_last(tau)
    trans_excl = exp(-(cs - tau))  # T_i
    weights = trans_excl * (1.0 - exp(-tau))
    ones = np.ones(sigma.shape[:-1] + (1,))
    transmittance = concat([as_dual(ones), exp(-cs)], axis=-1)
    return weights, transmittance


def composite(weights, color_samples, t_mid, far, transmittance, background=None):
    """Quadrature color, expected depth, and accumulated opacity for each ray."""
    w = as_dual(weights)
    c = as_dual(color_samples)
    w3 = reshape(w, w.shape + (1,))
    t_last = transmittance[:, -1]
    color = ad.asum(w3 * c, axis=-2)
    if background is not None:
        bg = np.asarray(background, dtype=np.float64)
        color = color + reshape(t_last, t_last.shape + (1,)) * bg
    depth = ad.asum(w * as_dual(t_mid), axis=-1) + t_last * float(far)
    accum = ad.asum(w, axis=-1)
    return RenderOutput(
        color=color,
        depth=depth,
        weights=w,
        transmittance=transmittance,
        accumulation=accum,
        t_mid=as_dual(t_mid),
        color_samples=c,
    )


@dataclass
class RenderConfig:
    m_coarse: int = 16
    m_fine: int = 24
    pos_levels: int = 8
    dir_levels: int = 4
    deformable: bool = True  # fine pass only unless deformable_coarse is set
    deformable_coarse: bool = False
    offset_scale: float = 1.0  # multiplier on predicted sample offsets
    white_background: bool = True
    resample_padding: float = 0.01
    jitter: bool = True

    @property
    def in_dim(self):
        return 6 * self.pos_levels

    @property
    def dir_dim(self):
        return 3 + 6 * self.dir_levels

    @property
    def background(self):
        return np.ones(3) if self.white_background else np.zeros(3)


class MLPField:
    """Radiance field backed by the MLP; encodes frustum Gaussians itself."""

    def __init__(self, params_view, cfg: RenderConfig):
        self.params = params_view
        self.cfg = cfg

    def query(self, mean, var, dir_enc_flat, want_offset):
        lead = ad._val(mean).shape[:-1]  # (R, M)
        n = int(np.prod(lead))
        enc = reshape(ipe(mean, var, self.cfg.pos_levels), (n, self.cfg.in_dim))
        out = field_forward(self.params, enc, dir_enc_flat, want_offset=want_offset)
        sigma = reshape(out.sigma, lead)
        color = reshape(out.color, lead + (3,))
        offset = reshape(out.offset, lead) if out.offset is not None else None
        return sigma, color, offset


class AnalyticField:
    """Ground-truth density/albedo injected in place of the MLP (oracle mode)."""

    def __init__(self, scene):
        self.scene = scene

    def query(self, mean, var, dir_enc_flat, want_offset):
        m = ad._val(mean)
        lead = m.shape[:-1]
        sigma, rgb = self.scene.density_at(m.reshape(-1, 3))
        offset = ad.DualArray(np.zeros(lead)) if want_offset else None
        return (
            ad.DualArray(sigma.reshape(lead)),
            ad.DualArray(rgb.reshape(lead + (3,))),
            offset,
        )


def _expand_dir_enc(cones: ConeBatch, cfg: RenderConfig, m):
    enc = encode_direction(cones.directions, cfg.dir_levels)  # (R, dd)
    return np.repeat(enc, m, axis=0)  # (R*M, dd)


def _render_pass(field, cones, iv: IntervalSet, cfg: RenderConfig, deformable):
    """One quadrature pass; optionally predicts offsets, shifts, re-evaluates."""
    dir_enc = _expand_dir_enc(cones, cfg, iv.count)
    mean, var = frustum_gaussian(cones, iv.t0, iv.t1)
    sigma, color, offsets = field.query(mean, var, dir_enc, want_offset=deformable)
    offsets_aligned = None
    if deformable:
        if cfg.offset_scale != 1.0:
            offsets = offsets * cfg.offset_scale
        iv, perm = apply_offsets(iv, offsets, cones.near, cones.far)
        mean, var = frustum_gaussian(cones, iv.t0, iv.t1)
        sigma, color, _ = field.query(mean, var, dir_enc, want_offset=False)
        offsets_aligned = ad.take_along(offsets, perm)
    weights, trans = weights_from_density(sigma, iv.width)
    out = composite(
        weights,
        color,
        iv.mid,
        cones.far,
        trans,
        background=cfg.background,
    )
    return out, offsets_aligned, iv


@dataclass
class RenderResult:
    coarse: RenderOutput
    fine: RenderOutput
    fine_intervals: IntervalSet = None
    coarse_intervals: IntervalSet = None
    fine_offsets: object = None  # aligned with fine weights, or None
    coarse_offsets: object = None


def render_batch(field, cones: ConeBatch, cfg: RenderConfig, rng) -> RenderResult:
    """Coarse pass, importance resampling, fine pass (deformable if enabled)."""
    n = cones.origins.shape[0]
    iv_c = stratified_intervals(cones.near, cones.far, cfg.m_coarse, cfg.jitter, rng, n)
    coarse, off_c, iv_c_used = _render_pass(
        field, cones, iv_c, cfg, cfg.deformable and cfg.deformable_coarse
    )
    iv_f = hierarchical_resample(
        iv_c, ad._val(coarse.weights), cfg.m_fine, rng, cfg.resample_padding
    )
    fine, off_f, iv_f_used = _render_pass(field, cones, iv_f, cfg, cfg.deformable)
    return RenderResult(
        coarse=coarse,
        fine=fine,
        fine_intervals=iv_f_used,
        coarse_intervals=iv_c_used,
        fine_offsets=off_f,
        coarse_offsets=off_c,
    )


def render_image(field, cam, cfg: RenderConfig, rng, chunk=4096):
    """Render a full image (H, W, 3) plus a depth map, chunked over pixels."""
    from .geometry import pixel_cones

    h, w = cam.height, cam.width
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    rows, cols = rows.ravel(), cols.ravel()
    img = np.zeros((h * w, 3))
    depth = np.zeros(h * w)
    for lo in range(0, h * w, chunk):
        hi = min(lo + chunk, h * w)
        cones = pixel_cones(cam, rows[lo:hi], cols[lo:hi])
        res = render_batch(field, cones, cfg, rng)
        img[lo:hi] = ad._val(res.fine.color)
        depth[lo:hi] = ad._val(res.fine.depth)
    return img.reshape(h, w, 3), depth.reshape(h, w)
