"""Per-ray profiling of the render: sample positions, weights, transmittance,
and per-sample color error, plus the weight-spread statistic that quantifies
how concentrated the predicted surface is along each ray.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import pixel_cones
from .rendering import MLPField, RenderConfig, render_batch
from .field import ConstParams

PROFILE_HEADER = "ray_id,pass,sample,t,weight,transmittance,rgbmse"


@dataclass
class RayProfile:
    pixel: tuple
    pass_id: str  # "coarse" | "fine"
    t: np.ndarray
    weights: np.ndarray
    transmittance: np.ndarray  # leading M entries of T
    rgbmse: np.ndarray
    spread: float  # nan when the ray accumulated (almost) nothing


def weight_spread(t_mid, weights, min_accum=1e-6):
    """Std of the weight distribution over ray distance, per ray.

    Rays whose accumulated weight falls below min_accum get nan (flagged
    undefined rather than zero, so empty rays do not fake confidence).
    """
    t = np.asarray(t_mid, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    accum = w.sum(axis=-1)
    safe = np.maximum(accum, min_accum)
    mean = (w * t).sum(axis=-1) / safe
    var = (w * (t - mean[..., None]) ** 2).sum(axis=-1) / safe
    out = np.sqrt(np.maximum(var, 0.0))
    out[accum < min_accum] = np.nan
    return out


def diagnose_rays(params, dataset, n_rays, cfg: RenderConfig, rng):
    """Profile random test-view pixels; returns (profiles, csv_lines)."""
    views = [v for v in dataset if v.split == "test"] or list(dataset)
    field = MLPField(ConstParams(params), cfg)
    profiles = []
    lines = [PROFILE_HEADER]
    for ray_id in range(n_rays):
        view = views[rng.integers(len(views))]
        row = int(rng.integers(view.camera.height))
        col = int(rng.integers(view.camera.width))
        cones = pixel_cones(view.camera, np.array([row]), np.array([col]))
        res = render_batch(field, cones, cfg, rng)
        gt = view.image[row, col, :3]
        for pass_id, out in (("coarse", res.coarse), ("fine", res.fine)):
            t = ad._val(out.t_mid)[0]
            w = ad._val(out.weights)[0]
            trans = ad._val(out.transmittance)[0][:-1]
            samples = ad._val(out.color_samples)[0]  # (M, 3)
            rgbmse = ((samples - gt) ** 2).sum(axis=-1)
            spread = float(weight_spread(t[None, :], w[None, :])[0])
            profiles.append(
                RayProfile(
                    pixel=(row, col),
                    pass_id=pass_id,
                    t=t,
                    weights=w,
                    transmittance=trans,
                    rgbmse=rgbmse,
                    spread=spread,
                )
            )
            for i in range(t.size):
                lines.append(
                    f"{ray_id},{pass_id},{i},{t[i]:.8g},{w[i]:.8g},"
                    f"{trans[i]:.8g},{rgbmse[i]:.8g}"
                )
    return profiles, lines
