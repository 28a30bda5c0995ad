"""PSNR and SSIM, plus masked and HDR (log-domain / tone-mapped) variants."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .hdrops import ReinhardConfig, reinhard_stats, reinhard_tonemap

INF = math.inf


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 > 0):
            raise ValueError("k1 and k2 must be positive")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd size")

    def kernel(self) -> np.ndarray:
        r = self.window // 2
        x = np.arange(-r, r + 1, dtype=np.float64)
        k = np.exp(-(x * x) / (2 * self.sigma**2))
        return k / k.sum()


def _pair(a, b):
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    return a, b


def psnr(a, b, peak: float) -> float:
    """10 log10(peak^2 / MSE); identical inputs give ``math.inf``."""
    if not peak > 0:
        raise MetricError("peak must be positive")
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    return INF if mse == 0 else 10.0 * math.log10(peak * peak / mse)


def _valid_filter(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    r = len(k) // 2
    out = correlate1d(img, k, axis=0, mode="constant")
    out = correlate1d(out, k, axis=1, mode="constant")
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim_map(a, b, cfg: SsimConfig | None = None) -> np.ndarray:
    """Per-window SSIM over valid window positions, (H-10, W-10, C) for 11x11."""
    cfg = cfg or SsimConfig()
    a, b = _pair(a, b)
    if a.shape[0] < cfg.window or a.shape[1] < cfg.window:
        raise MetricError(f"image {a.shape[1]}x{a.shape[0]} smaller than the {cfg.window}x{cfg.window} window")
    k = cfg.kernel()
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    mu_a = _valid_filter(a, k)
    mu_b = _valid_filter(b, k)
    var_a = _valid_filter(a * a, k) - mu_a * mu_a
    var_b = _valid_filter(b * b, k) - mu_b * mu_b
    cov = _valid_filter(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def _mean(values: np.ndarray) -> float:
    return math.fsum(values.ravel().tolist()) / values.size


def ssim(a, b, cfg: SsimConfig | None = None) -> float:
    return _mean(ssim_map(a, b, cfg))


def masked_metrics(a, b, mask, peak: float, cfg: SsimConfig | None = None) -> dict:
    """PSNR over masked pixels; SSIM over windows lying entirely inside the mask.

    ``ssim`` is None when no window fits inside the mask.
    """
    cfg = cfg or SsimConfig(dynamic_range=peak)
    a, b = _pair(a, b)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 3:
        mask = mask.all(axis=2)
    if mask.shape != a.shape[:2]:
        raise MetricError(f"mask shape {mask.shape} does not match image {a.shape[:2]}")
    if not mask.any():
        raise MetricError("empty mask")
    mse = float(np.mean((a[mask] - b[mask]) ** 2))
    p = INF if mse == 0 else 10.0 * math.log10(peak * peak / mse)
    box = np.ones(cfg.window)
    inside = _valid_filter(mask.astype(np.float64), box) >= cfg.window**2 - 0.5
    smap = ssim_map(a, b, cfg)
    s = _mean(smap[inside]) if inside.any() else None
    return {"psnr": p, "ssim": s}


# --- HDR comparisons --------------------------------------------------------


def log_domain(test, ref, floor_stops: float | None = None):
    """Both maps normalized by the reference max, in log2, floored at the reference span.

    Returns (log_test, log_ref, span).
    """
    test, ref = _pair(test, ref)
    ref_max = float(ref.max())
    if not ref_max > 0:
        raise MetricError("reference map is all zero")
    pos = ref[ref > 0]
    span = floor_stops if floor_stops is not None else math.log2(ref_max / float(pos.min()))
    span = max(span, 1e-12)
    lo = 2.0 ** -span
    lt = np.log2(np.clip(test / ref_max, lo, None))
    lr = np.log2(np.clip(ref / ref_max, lo, None))
    return lt, lr, span


def hdr_psnr(test, ref, mask=None) -> float:
    """PSNR of log2 radiance with peak equal to the reference's dynamic-range span."""
    lt, lr, span = log_domain(test, ref)
    if mask is None:
        return psnr(lt, lr, span)
    return masked_metrics(lt, lr, mask, span)["psnr"]


def hdr_ssim(test, ref, mask=None, tm_cfg: ReinhardConfig | None = None) -> float:
    """SSIM after Reinhard tone mapping both maps with the reference's statistics."""
    tm_cfg = tm_cfg or ReinhardConfig()
    test, ref = _pair(test, ref)
    stats = reinhard_stats(ref, tm_cfg)
    tt = reinhard_tonemap(test, tm_cfg, stats)
    tr = reinhard_tonemap(ref, tm_cfg, stats)
    if mask is None:
        return ssim(tt, tr, SsimConfig(dynamic_range=1.0))
    return masked_metrics(tt, tr, mask, 1.0)["ssim"]
