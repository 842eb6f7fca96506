"""Image-quality and error metrics: PSNR, SSIM, l2 / relative error."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

SSIM_WIN = 11
SSIM_SIGMA = 1.5
REL_EPS = 1e-30


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    l2: float
    rel: float

    def to_dict(self):
        return asdict(self)


def _pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def psnr(x, y, data_range) -> float:
    """``10 log10(R^2 / mse)``; returns ``inf`` when the inputs are identical."""
    x, y = _pair(x, y)
    if not data_range > 0:
        raise MetricError(f"data_range must be positive, got {data_range}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def _gaussian_kernel(win, sigma):
    r = win // 2
    g = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    return g / g.sum()


def _filter_valid(img, g):
    # separable correlation, keeping only fully covered windows
    win = g.size
    rows = sum(g[k] * img[k : img.shape[0] - win + 1 + k, :] for k in range(win))
    return sum(g[k] * rows[:, k : rows.shape[1] - win + 1 + k] for k in range(win))


def ssim(x, y, data_range, win_size=SSIM_WIN, sigma=SSIM_SIGMA) -> float:
    """Mean single-scale SSIM of two 2-D images with a Gaussian window."""
    x, y = _pair(x, y)
    if x.ndim != 2:
        raise MetricError(f"ssim expects 2-D images, got shape {x.shape}")
    if win_size % 2 == 0 or win_size < 1:
        raise MetricError("win_size must be odd and positive")
    if min(x.shape) < win_size:
        raise MetricError(f"image {x.shape} smaller than the {win_size}x{win_size} window")
    if not data_range > 0:
        raise MetricError(f"data_range must be positive, got {data_range}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    g = _gaussian_kernel(win_size, sigma)
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    vx = _filter_valid(x * x, g) - mx * mx
    vy = _filter_valid(y * y, g) - my * my
    cxy = _filter_valid(x * y, g) - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
    return float(np.mean(s))


def l2_rel(x, y) -> dict:
    x, y = _pair(x, y)
    l2 = float(np.linalg.norm(x - y))
    return {"l2": l2, "rel": l2 / max(float(np.linalg.norm(x)), REL_EPS)}


def latent_metrics(reference, estimate) -> MetricReport:
    """Metrics on a ``(channels, h, w)`` latent treated as grayscale planes.

    ``data_range`` is ``max - min`` of the reference.  SSIM is averaged
    over channels; latents smaller than the 11x11 window use the largest
    odd window that fits.
    """
    ref, est = _pair(reference, estimate)
    if ref.ndim == 2:
        ref, est = ref[None], est[None]
    if ref.ndim != 3:
        raise MetricError(f"latent must be (channels, h, w), got {ref.shape}")
    data_range = float(ref.max() - ref.min())
    if data_range == 0.0:
        data_range = 1.0
    win = min(SSIM_WIN, min(ref.shape[1:]))
    win -= 1 - win % 2
    ssims = [ssim(r, e, data_range, win_size=win) for r, e in zip(ref, est)]
    err = l2_rel(ref, est)
    return MetricReport(psnr(ref, est, data_range), float(np.mean(ssims)), err["l2"], err["rel"])
