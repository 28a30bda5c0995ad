"""Exposure fusion, photographic tone mapping and reference-HDR construction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve, convolve1d

from .crf import Crf
from .fusion import FLAG_OK, FusionConfig, fuse_ideb
from .imgcore import CaptureStack, RadianceMap

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
LAPLACE3 = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
REC709 = np.array([0.2126, 0.7152, 0.0722])
DISPLAY_GAMMA = 2.2
# irradiance floor for the log-domain merge, relative to white_level / t_max
LOG_FLOOR = 2.0 ** -40


@dataclass(frozen=True)
class MertensConfig:
    w_contrast: float = 1.0
    w_saturation: float = 1.0
    w_wellexposed: float = 1.0
    pyramid_levels: int | None = None  # None -> floor(log2(min dim)) - 1
    wellexposed_sigma: float = 0.2

    def __post_init__(self):
        exps = (self.w_contrast, self.w_saturation, self.w_wellexposed)
        if min(exps) < 0 or max(exps) <= 0:
            raise ValueError("weight exponents must be >= 0 with at least one > 0")
        if self.pyramid_levels is not None and self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")

    def levels_for(self, shape) -> int:
        if self.pyramid_levels is not None:
            return self.pyramid_levels
        return max(1, int(math.floor(math.log2(min(shape[:2])))) - 1)


@dataclass(frozen=True)
class ReinhardConfig:
    key_a: float = 0.18
    white_point: float | None = None  # None -> max scaled luminance
    delta: float = 1e-6

    def __post_init__(self):
        if not self.key_a > 0 or not self.delta > 0:
            raise ValueError("key_a and delta must be positive")


# --- pyramids ---------------------------------------------------------------


def _blur(img: np.ndarray) -> np.ndarray:
    out = convolve1d(img, BINOMIAL5, axis=0, mode="nearest")
    return convolve1d(out, BINOMIAL5, axis=1, mode="nearest")


def pyr_down(img: np.ndarray) -> np.ndarray:
    return _blur(img)[::2, ::2]


def pyr_up(img: np.ndarray, shape) -> np.ndarray:
    up = np.zeros(tuple(shape[:2]) + img.shape[2:], dtype=np.float64)
    up[::2, ::2] = img
    return 4.0 * _blur(up)


def gaussian_pyramid(img: np.ndarray, levels: int) -> list:
    pyr = [np.asarray(img, dtype=np.float64)]
    for _ in range(levels - 1):
        pyr.append(pyr_down(pyr[-1]))
    return pyr


def laplacian_pyramid(img: np.ndarray, levels: int) -> list:
    gauss = gaussian_pyramid(img, levels)
    pyr = [g - pyr_up(gn, g.shape) for g, gn in zip(gauss[:-1], gauss[1:])]
    pyr.append(gauss[-1])
    return pyr


def collapse_pyramid(pyr: list) -> np.ndarray:
    out = pyr[-1]
    for lap in reversed(pyr[:-1]):
        out = lap + pyr_up(out, lap.shape)
    return out


# --- exposure fusion --------------------------------------------------------


def _as_float_stack(images) -> list:
    out = []
    for im in images:
        data = getattr(im, "data", im)
        data = np.asarray(data)
        if np.issubdtype(data.dtype, np.integer):
            depth = getattr(im, "bit_depth", 8 if data.dtype == np.uint8 else 16)
            data = data / float((1 << depth) - 1)
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        out.append(data)
    if not out:
        raise ValueError("exposure fusion needs at least one image")
    if any(d.shape != out[0].shape for d in out):
        raise ValueError("all images must share dimensions")
    return out


def mertens_weights(images, cfg: MertensConfig | None = None) -> np.ndarray:
    """Normalized (N, H, W) weight maps; uniform where every raw weight vanishes.

    Saturation is the per-pixel channel standard deviation, which is identically
    zero for single-channel inputs; the term is dropped for those.
    """
    cfg = cfg or MertensConfig()
    return normalize_weights(_raw_weights(_as_float_stack(images), cfg))


def normalize_weights(raw: np.ndarray) -> np.ndarray:
    total = raw.sum(axis=0)
    flat = total < 1e-12
    out = raw / np.where(flat, 1.0, total)
    out[:, flat] = 1.0 / raw.shape[0]
    return out


def pyramid_blend(values: list, weights: np.ndarray, levels: int) -> np.ndarray:
    """Blend Laplacian pyramids of ``values`` with Gaussian pyramids of ``weights``."""
    blended = None
    for val, w in zip(values, weights):
        lap = laplacian_pyramid(val, levels)
        gw = gaussian_pyramid(w, levels)
        terms = [l * g[:, :, None] for l, g in zip(lap, gw)]
        blended = terms if blended is None else [b + t for b, t in zip(blended, terms)]
    return collapse_pyramid(blended)


def mertens_fuse(images, cfg: MertensConfig | None = None) -> np.ndarray:
    """Fuse a bracket into one display-referred (H, W, C) image in [0, 1]."""
    cfg = cfg or MertensConfig()
    stack = _as_float_stack(images)
    weights = mertens_weights(stack, cfg)
    out = pyramid_blend(stack, weights, cfg.levels_for(stack[0].shape))
    return np.clip(out, 0.0, 1.0)


# --- tone mapping -----------------------------------------------------------


def luminance(data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        return data
    if data.shape[2] == 1:
        return data[:, :, 0]
    return data @ REC709


def reinhard_stats(radiance, cfg: ReinhardConfig | None = None) -> tuple[float, float]:
    """(log-average luminance, white point in scaled units) for ``radiance``."""
    cfg = cfg or ReinhardConfig()
    lum = luminance(getattr(radiance, "data", radiance))
    # fsum over a fixed C-order ravel keeps the reduction independent of threading
    log_avg = math.exp(math.fsum(np.log(cfg.delta + lum).ravel().tolist()) / lum.size)
    white = cfg.white_point if cfg.white_point is not None else cfg.key_a * float(lum.max()) / log_avg
    return log_avg, white


def reinhard_curve(ls, white: float):
    """Global photographic operator on scaled luminance; ``white=inf`` gives L/(1+L)."""
    ls = np.asarray(ls, dtype=np.float64)
    if math.isinf(white):
        return ls / (1.0 + ls)
    if white <= 0:
        return np.where(ls > 0, 1.0, 0.0)
    return ls * (1.0 + ls / (white * white)) / (1.0 + ls)


def reinhard_tonemap(radiance, cfg: ReinhardConfig | None = None, stats=None) -> np.ndarray:
    """Tone map to [0, 1]; ``stats`` overrides the image's own (log_avg, white)."""
    cfg = cfg or ReinhardConfig()
    data = np.asarray(getattr(radiance, "data", radiance), dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    log_avg, white = stats if stats is not None else reinhard_stats(data, cfg)
    lum = luminance(data)
    ld = reinhard_curve(cfg.key_a * lum / log_avg, white)
    ratio = np.divide(ld, lum, out=np.zeros_like(lum), where=lum > 0)
    return data * ratio[:, :, None]


# --- reference HDR ----------------------------------------------------------


def to_display(irradiance: np.ndarray, t: float, white_level: float, clip: bool = True) -> np.ndarray:
    x = np.maximum(irradiance * t / white_level, 0.0)
    if clip:
        x = np.minimum(x, 1.0)
    return x ** (1.0 / DISPLAY_GAMMA)


@dataclass(frozen=True)
class MergedHdr:
    radiance: RadianceMap
    ok: np.ndarray


def merge_irradiance(maps, flags, exposures, white_level: float,
                     cfg: MertensConfig | None = None) -> MergedHdr:
    """Merge per-exposure irradiance maps into one radiance map.

    Mertens weights are computed on each map's own display image (the map
    re-exposed at its capture time through the display gamma), with
    all-saturated pixels zeroed. The pyramid blend itself runs on log2
    irradiance: every input then measures the same quantity, and blending
    errors stay bounded in stops instead of bleeding from highlights into
    shadows.
    """
    cfg = cfg or MertensConfig()
    maps = [np.asarray(getattr(m, "data", m), dtype=np.float64) for m in maps]
    maps = [m[:, :, None] if m.ndim == 2 else m for m in maps]
    flags = [np.asarray(f) for f in flags]
    exposures = [float(t) for t in exposures]
    if not maps:
        raise ValueError("cannot merge an empty stack")
    if not len(maps) == len(flags) == len(exposures):
        raise ValueError("maps, flags and exposures must have equal lengths")

    own = [to_display(m, t, white_level) for m, t in zip(maps, exposures)]
    ok = [(f == FLAG_OK).all(axis=2) if f.ndim == 3 else f == FLAG_OK for f in flags]
    # a zero estimate carries no information in the log domain
    usable = np.stack([o & (m > 0).all(axis=2) for o, m in zip(ok, maps)]).astype(np.float64)
    raw = _raw_weights(own, cfg) * usable
    # flat regions have zero contrast everywhere: fall back to well-exposedness,
    # then to any usable map, and only then to every map
    exposed = _raw_weights(own, MertensConfig(w_contrast=0, w_saturation=0,
                                              wellexposed_sigma=cfg.wellexposed_sigma)) * usable
    for fallback in (exposed, usable):
        empty = raw.sum(axis=0) < 1e-12
        raw[:, empty] = fallback[:, empty]
    weights = normalize_weights(raw)
    floor = white_level / max(exposures) * LOG_FLOOR
    logs = [np.log2(np.maximum(m, floor)) for m in maps]
    blended = 2.0 ** pyramid_blend(logs, weights, cfg.levels_for(maps[0].shape))
    radiance = np.where(blended <= floor, 0.0, blended)
    return MergedHdr(RadianceMap(radiance), np.logical_or.reduce(ok))


def _raw_weights(images, cfg: MertensConfig) -> np.ndarray:
    raw = []
    for img in images:
        gray = img.mean(axis=2)
        w = np.ones(gray.shape)
        if cfg.w_contrast:
            w *= np.abs(convolve(gray, LAPLACE3, mode="nearest")) ** cfg.w_contrast
        if cfg.w_saturation and img.shape[2] > 1:
            w *= img.std(axis=2) ** cfg.w_saturation
        if cfg.w_wellexposed:
            s2 = 2.0 * cfg.wellexposed_sigma ** 2
            w *= np.prod(np.exp(-((img - 0.5) ** 2) / s2), axis=2) ** cfg.w_wellexposed
        raw.append(w)
    return np.stack(raw)


def build_reference_hdr(stack: CaptureStack, crf: Crf | None = None,
                        fusion_cfg: FusionConfig | None = None,
                        mertens_cfg: MertensConfig | None = None, threads: int = 1) -> MergedHdr:
    crf = crf if crf is not None else stack.crf
    if len(stack) == 0:
        raise ValueError("cannot build a reference HDR from an empty stack")
    fused = [fuse_ideb(q, crf, fusion_cfg, threads) for q in stack.quads]
    return merge_irradiance([f.ideb.data for f in fused], [f.flags for f in fused],
                            stack.exposures, crf.white_level, mertens_cfg)
