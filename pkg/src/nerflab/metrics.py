"""Image quality metrics: PSNR and windowed SSIM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def psnr(a, b):
    """-10 log10(MSE) over all pixels and channels, capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * np.log10(mse))


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def _to_gray(img):
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=2) if img.ndim == 3 else img


def ssim(a, b):
    """Windowed SSIM (11x11 Gaussian, sigma 1.5) on channel-mean grayscale."""
    ga, gb = _to_gray(a), _to_gray(b)
    if ga.shape != gb.shape:
        raise ValueError(f"shape mismatch: {ga.shape} vs {gb.shape}")
    if min(ga.shape) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = _gaussian_window()
    conv = lambda x: convolve2d(x, w, mode="valid")
    mu_a, mu_b = conv(ga), conv(gb)
    var_a = conv(ga * ga) - mu_a**2
    var_b = conv(gb * gb) - mu_b**2
    cov = conv(ga * gb) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    view_ids: list
    psnrs: list
    ssims: list

    @property
    def psnr_mean(self):
        return float(np.mean(self.psnrs))

    @property
    def psnr_std(self):
        return float(np.std(self.psnrs))

    @property
    def ssim_mean(self):
        return float(np.mean(self.ssims))

    @property
    def ssim_std(self):
        return float(np.std(self.ssims))

    def text(self):
        lines = [
            f"{vid} {p:.4f} {s:.6f}"
            for vid, p, s in zip(self.view_ids, self.psnrs, self.ssims)
        ]
        lines.append(
            f"mean {self.psnr_mean:.4f}±{self.psnr_std:.4f} "
            f"{self.ssim_mean:.6f}±{self.ssim_std:.6f}"
        )
        return "\n".join(lines)

    def csv(self):
        rows = ["view_id,psnr,ssim"]
        rows += [
            f"{vid},{p:.6f},{s:.6f}"
            for vid, p, s in zip(self.view_ids, self.psnrs, self.ssims)
        ]
        return "\n".join(rows)


def evaluate_views(renders, views) -> MetricReport:
    ids, ps, ss = [], [], []
    for i, (img, view) in enumerate(zip(renders, views)):
        ids.append(i)
        ps.append(psnr(img, view.image))
        ss.append(ssim(img, view.image))
    return MetricReport(view_ids=ids, psnrs=ps, ssims=ss)
