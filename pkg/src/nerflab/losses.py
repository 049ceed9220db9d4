"""Training losses: photometric MSE, weight-based mutual information,
distortion, the offset composite, pixel/patch consistency (RGB and depth),
and depth smoothness.

All sums over the ray batch are normalized by the batch size (and by the
number of perturbations where one exists) so the loss weights are independent
of batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DualArray, absolute, amean, as_dual, asum, clamp, log, reshape, sqrt

DEFAULT_LAMBDA = 5e-3
DEFAULT_MU = 0.5
DEFAULT_NU = 0.5
COARSE_COEF = 0.1


@dataclass
class MIConfig:
    epsilon: float = 5e-4
    mask_threshold: float = 1e-4
    estimator: str = "gaussian"
    rho_clip: float = 0.9999
    min_samples: int = 8

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if not 0.0 <= self.mask_threshold < 1.0:
            raise ValueError("mask_threshold must lie in [0, 1)")


def loss_mse(rendered, gt):
    """Mean over rays of the squared L2 color error."""
    r = as_dual(rendered)
    g = np.asarray(ad._val(gt), dtype=np.float64)
    if r.shape != g.shape:
        raise ad.ShapeError(f"rendered {r.shape} vs ground truth {g.shape}")
    d = r - g
    n_rays = int(np.prod(r.shape[:-1]))
    return asum(d * d) * (1.0 / n_rays)


def mi_estimate(u, v, cfg: MIConfig = MIConfig()):
    """Gaussian (correlation-based) mutual information, differentiable.

    Returns -0.5 * ln(1 - rho^2) with the Pearson correlation clamped to
    |rho| <= rho_clip. Zero variance in either input gives exactly 0.
    """
    u, v = as_dual(u), as_dual(v)
    if u.shape != v.shape or u.ndim != 1:
        raise ad.ShapeError(f"need equal 1-D inputs, got {u.shape} and {v.shape}")
    du = u - amean(u)
    dv = v - amean(v)
    var_u = amean(du * du)
    var_v = amean(dv * dv)
    if var_u.value <= 0.0 or var_v.value <= 0.0:
        return DualArray(0.0)
    rho = clamp(amean(du * dv) / sqrt(var_u * var_v), -cfg.rho_clip, cfg.rho_clip)
    return log(1.0 - rho * rho) * -0.5


def mi_histogram(u, v, bins=None):
    """Binned plug-in MI estimate (equal-width bins); the non-differentiable
    test oracle for mi_estimate."""
    u = np.asarray(ad._val(u), dtype=np.float64)
    v = np.asarray(ad._val(v), dtype=np.float64)
    n = u.size
    if bins is None:
        bins = max(8, int(round(n ** (1.0 / 3.0))))
    joint, _, _ = np.histogram2d(u, v, bins=bins)
    p = joint / n
    pu = p.sum(axis=1, keepdims=True)
    pv = p.sum(axis=0, keepdims=True)
    nz = p > 0.0
    return float(np.sum(p[nz] * np.log(p[nz] / (pu @ pv)[nz])))


def loss_mi(weights, offsets, cfg: MIConfig = MIConfig()):
    """Negated per-ray MI between 1/(w+eps) and the offsets, masked by weight.

    Samples with w <= mask_threshold are dropped; rays with fewer than
    cfg.min_samples survivors contribute 0. Returns -(1/R) * sum_r MI_r.
    """
    w, o = as_dual(weights), as_dual(offsets)
    if w.shape != o.shape:
        raise ad.ShapeError(f"weights {w.shape} vs offsets {o.shape}")
    wv = w.value
    mask = (wv > cfg.mask_threshold).astype(np.float64)  # (R, M), constant
    count = mask.sum(axis=-1)
    n = np.maximum(count, 1.0)[:, None]

    u = 1.0 / (w + cfg.epsilon)
    col = lambda x: reshape(x, x.shape + (1,))

    def centered(x):
        mu = col(asum(x * mask, axis=-1)) / n
        return (x - mu) * mask

    du, dv = centered(u), centered(o)
    var_u = asum(du * du, axis=-1) / n[:, 0]
    var_v = asum(dv * dv, axis=-1) / n[:, 0]
    cov = asum(du * dv, axis=-1) / n[:, 0]
    valid = (
        (count >= cfg.min_samples) & (var_u.value > 0.0) & (var_v.value > 0.0)
    ).astype(np.float64)
    denom = ad.where(valid > 0.0, var_u * var_v, np.ones_like(valid))
    rho = clamp(cov / sqrt(denom), -cfg.rho_clip, cfg.rho_clip) * valid
    mi = log(1.0 - rho * rho) * -0.5
    n_rays = wv.shape[0]
    return asum(mi * valid) * (-1.0 / n_rays)


def loss_dist(weights, s_mid, s_width):
    """Distortion of the weight distribution on [0,1]-normalized distances."""
    w = as_dual(weights)
    s = as_dual(s_mid)
    ds = as_dual(s_width)
    col = lambda x: reshape(x, x.shape[:-1] + (x.shape[-1], 1))
    row = lambda x: reshape(x, x.shape[:-1] + (1, x.shape[-1]))
    pair = asum(asum(col(w) * row(w) * absolute(col(s) - row(s)), axis=-1), axis=-1)
    self_term = asum(w * w * ds, axis=-1) * (1.0 / 3.0)
    return amean(pair + self_term)


def loss_offset(mi, dist, lam=DEFAULT_LAMBDA):
    """Composite supervision of the offset head: lambda * MI + distortion."""
    return as_dual(mi) * lam + as_dual(dist)


def loss_ssl(unseen_colors, perturbed_colors_list):
    """Pixel-level consistency between unseen and perturbed renders."""
    u = as_dual(unseen_colors)
    total = None
    for p in perturbed_colors_list:
        d = u - as_dual(p)
        term = asum(d * d)
        total = term if total is None else total + term
    n_rays = int(np.prod(u.shape[:-1]))
    return total * (1.0 / (len(perturbed_colors_list) * n_rays))


def _ppc_one(u_patch, v_patch):
    """Mean over all patch pixels i of ||u(r) - v(i)||^2, summed over r."""
    # u_patch, v_patch: (n_patches, S, C) or (n_patches, S) for depth
    u, v = as_dual(u_patch), as_dual(v_patch)
    if u.ndim == 2:  # depth: add a singleton channel
        u = reshape(u, u.shape + (1,))
        v = reshape(v, v.shape + (1,))
    np_, s, c = u.shape
    ue = reshape(u, (np_, s, 1, c))
    ve = reshape(v, (np_, 1, s, c))
    d = ue - ve
    sq = asum(d * d, axis=-1)  # (np, S, S)
    per_ray = amean(sq, axis=-1)  # mean over patch pixels i
    return amean(per_ray)  # mean over rays r (and patches)


def loss_ppc(unseen_rgb, unseen_depth, perturbed_rgb_list, perturbed_depth_list):
    """Patch-consistency losses for color and depth, averaged over P and rays.

    unseen_rgb: (n_patches, PS*PS, 3); each perturbed entry matches it.
    Depth arrays are (n_patches, PS*PS).
    """
    if len(perturbed_rgb_list) != len(perturbed_depth_list):
        raise ValueError("need matching RGB/depth perturbation lists")
    u_shape = ad._val(unseen_rgb).shape
    for p in perturbed_rgb_list:
        if ad._val(p).shape != u_shape:
            raise ad.ShapeError(
                f"perturbed patch shape {ad._val(p).shape} != unseen {u_shape}"
            )
    p_count = len(perturbed_rgb_list)
    rgb = None
    dep = None
    for pr, pd in zip(perturbed_rgb_list, perturbed_depth_list):
        tr = _ppc_one(unseen_rgb, pr)
        td = _ppc_one(unseen_depth, pd)
        rgb = tr if rgb is None else rgb + tr
        dep = td if dep is None else dep + td
    return rgb * (1.0 / p_count), dep * (1.0 / p_count)


def loss_smooth(depth_patches):
    """Squared forward differences of depth over PS x PS patches."""
    d = as_dual(depth_patches)
    if d.ndim != 3:
        raise ad.ShapeError(f"expected (n_patches, PS, PS), got {d.shape}")
    ps = d.shape[-1]
    if ps < 2:
        return DualArray(0.0)
    dh = d[:, :, 1:] - d[:, :, :-1]
    dv = d[:, 1:, :] - d[:, :-1, :]
    per_patch = asum(asum(dh * dh, axis=-1), axis=-1) + asum(
        asum(dv * dv, axis=-1), axis=-1
    )
    return amean(per_patch)


ZERO = lambda: DualArray(0.0)


@dataclass
class LossTerms:
    """Scalar loss terms for one pass (dual values)."""

    mse: object = None
    mi: object = None
    dist: object = None
    offset: object = None
    ppc_rgb: object = None
    ppc_d: object = None
    smooth: object = None

    def __post_init__(self):
        for name in ("mse", "mi", "dist", "offset", "ppc_rgb", "ppc_d", "smooth"):
            if getattr(self, name) is None:
                setattr(self, name, ZERO())

    def combined(self, mu=DEFAULT_MU, nu=DEFAULT_NU, smooth_weight=1.0):
        return (
            self.mse
            + self.offset * mu
            + (self.ppc_rgb + self.ppc_d) * nu
            + self.smooth * smooth_weight
        )


@dataclass
class LossBreakdown:
    """Numeric values of every term, per pass, plus the combined total."""

    coarse: dict
    fine: dict
    total: float

    FIELDS = ("mse", "mi", "dist", "offset", "ppc_rgb", "ppc_d", "smooth")

    @classmethod
    def from_terms(cls, coarse: LossTerms, fine: LossTerms, total):
        pack = lambda t: {f: float(ad._val(getattr(t, f))) for f in cls.FIELDS}
        return cls(coarse=pack(coarse), fine=pack(fine), total=float(ad._val(total)))


def loss_total(
    coarse: LossTerms,
    fine: LossTerms,
    mu=DEFAULT_MU,
    nu=DEFAULT_NU,
    coarse_coef=COARSE_COEF,
    smooth_weight=1.0,
):
    """Combine both passes: total = L_fine + coarse_coef * L_coarse."""
    total = (
        fine.combined(mu, nu, smooth_weight)
        + coarse.combined(mu, nu, smooth_weight) * coarse_coef
    )
    return total, LossBreakdown.from_terms(coarse, fine, total)
