"""Gaussian-weighted fusion of the four polarizer images into one irradiance map.

The orthogonal pairs (0, 90) and (45, 135) each integrate to the full
unfiltered exposure, so the sum of their linearized values is an estimate of
``I0 * t0``. The two pair estimates are averaged with a Gaussian weight on how
well exposed each pair is, then divided by ``t0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import run_rows
from .crf import Crf, invert_crf
from .imgcore import PolarQuad, RadianceMap

FLAG_OK = 0
FLAG_ALL_SATURATED = 1
FLAG_DEGENERATE = 2


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    sigma: float = 0.2
    saturation_level: int | None = None  # None -> max_level - 1
    epsilon_denominator: float = 1e-12

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.epsilon_denominator > 0:
            raise ValueError("epsilon_denominator must be positive")

    def sat_level(self, max_level: int) -> int:
        return max_level - 1 if self.saturation_level is None else self.saturation_level


@dataclass(frozen=True)
class FusedHdr:
    ideb: RadianceMap
    weight_total: np.ndarray
    flags: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.flags == FLAG_OK


def gaussian_weight(x, sigma: float = 0.2):
    """Weight of a pair whose mean level, normalized to [0, 1], is ``x``."""
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-((x - 0.5) ** 2) / (2.0 * sigma * sigma))


def fuse_levels(levels, t0: float, crf: Crf, cfg: FusionConfig | None = None, threads: int = 1) -> FusedHdr:
    """Fuse four level arrays ordered 0, 45, 90, 135 degrees.

    Levels may be fractional (the unquantized float path); ``g`` interpolates.
    """
    cfg = cfg or FusionConfig()
    l0, l45, l90, l135 = (np.asarray(v, dtype=np.float64) for v in levels)
    shape = l0.shape
    if any(v.shape != shape for v in (l45, l90, l135)):
        raise FusionError("the four level arrays must share a shape")
    if not t0 > 0:
        raise FusionError("t0 must be positive")
    m = crf.max_level
    sat = cfg.sat_level(m)
    g_max = float(invert_crf(crf, m))

    ideb = np.empty(shape)
    wsum = np.empty(shape)
    flags = np.empty(shape, dtype=np.uint8)

    def work(r0, r1):
        a, b, c, d = (v[r0:r1] for v in (l0, l45, l90, l135))
        w1 = gaussian_weight((a + c) / (2.0 * m), cfg.sigma)
        w2 = gaussian_weight((b + d) / (2.0 * m), cfg.sigma)
        e1 = invert_crf(crf, a) + invert_crf(crf, c)
        e2 = invert_crf(crf, b) + invert_crf(crf, d)
        total = w1 + w2
        all_sat = (a >= sat) & (b >= sat) & (c >= sat) & (d >= sat)
        degenerate = (total < cfg.epsilon_denominator) & ~all_sat
        safe = np.where(degenerate, 1.0, total)
        value = (w1 * e1 + w2 * e2) / (safe * t0)
        value = np.where(degenerate, 0.5 * (e1 + e2) / t0, value)
        value = np.where(all_sat, 2.0 * g_max / t0, value)
        ideb[r0:r1] = value
        wsum[r0:r1] = total
        flags[r0:r1] = np.where(all_sat, FLAG_ALL_SATURATED, np.where(degenerate, FLAG_DEGENERATE, FLAG_OK))

    run_rows(work, shape[0], threads)
    return FusedHdr(RadianceMap(np.maximum(ideb, 0.0)), wsum, flags)


def fuse_ideb(quad: PolarQuad, crf: Crf | None = None, cfg: FusionConfig | None = None,
              threads: int = 1) -> FusedHdr:
    crf = crf if crf is not None else quad.crf
    if crf is None:
        raise FusionError("no CRF given and the quad carries none")
    if crf.bit_depth != quad.bit_depth:
        raise FusionError(f"CRF bit depth {crf.bit_depth} does not match quad bit depth {quad.bit_depth}")
    return fuse_levels(quad.levels(), quad.t0, crf, cfg, threads)


def saturation_mask(quad: PolarQuad, cfg: FusionConfig | None = None) -> np.ndarray:
    """True where at least one orientation is below the saturation level."""
    cfg = cfg or FusionConfig()
    sat = cfg.sat_level((1 << quad.bit_depth) - 1)
    below = [lv < sat for lv in quad.levels()]
    return np.logical_or.reduce(below)
