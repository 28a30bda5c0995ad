"""Synthetic polarized scenes and a capture simulator used as ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from ._parallel import run_rows
from .crf import Crf, apply_crf, round_half_away
from .imgcore import ANGLES, CaptureStack, LdrImage, PolarQuad, RadianceMap
from .polar import PolState, forward_quad, wrap_angle

BRACKET_EXPOSURES_MS = (
    0.03, 0.045, 0.068, 0.101, 0.152, 0.228, 0.342, 0.513, 0.769,
    1.153, 1.73, 2.595, 3.592, 5.839, 8.758, 13.137, 19.705,
)

PATTERNS = ("hdr-checker", "radial-spots", "gradient-ramp")

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & _M64
    x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _M64
    x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _M64
    return x ^ (x >> np.uint64(31))


def keyed_uniform(seed: int, stream: int, index) -> np.ndarray:
    """Uniform (0, 1) samples that depend only on (seed, stream, index).

    Counter-based: any subset of indices can be generated in any order or in
    parallel and yields the same values.
    """
    index = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _splitmix64(np.uint64(stream & 0xFFFFFFFFFFFFFFFF)))
        bits = _splitmix64(key ^ _splitmix64(index))
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def keyed_normal(seed: int, stream: int, index) -> np.ndarray:
    """Standard normal via Box-Muller on two keyed uniform streams."""
    u1 = keyed_uniform(seed, 2 * stream, index)
    u2 = keyed_uniform(seed, 2 * stream + 1, index)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass(frozen=True)
class SceneSpec:
    width: int = 512
    height: int = 512
    dynamic_range_stops: float = 14.0
    rho_range: tuple = (0.0, 1.0)
    theta_field: str = "random-smooth"  # "constant:<deg>" | "smooth-gradient" | "random-smooth"
    radiance_pattern: str = "hdr-checker"
    seed: int = 0
    correlation_length: float = 32.0
    peak_radiance: float = 25.0
    texture: float = 0.3
    channels: int = 1

    def __post_init__(self):
        if not self.dynamic_range_stops > 0:
            raise ValueError("dynamic_range_stops must be positive")
        lo, hi = self.rho_range
        if not 0 <= lo <= hi <= 1:
            raise ValueError(f"rho_range must satisfy 0 <= lo <= hi <= 1, got {self.rho_range}")
        if self.radiance_pattern not in PATTERNS:
            raise ValueError(f"unknown radiance pattern {self.radiance_pattern!r}")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if not 0 <= self.texture < 1:
            raise ValueError("texture must lie in [0, 1)")
        _theta_kind(self.theta_field)


@dataclass(frozen=True)
class GroundTruth:
    radiance: RadianceMap
    rho: np.ndarray
    theta: np.ndarray

    @property
    def pol(self) -> PolState:
        return PolState(self.rho, self.theta)

    @property
    def shape(self):
        return self.rho.shape


def _theta_kind(field: str):
    if field.startswith("constant"):
        _, _, val = field.partition(":")
        return "constant", float(val or 0.0)
    if field in ("smooth-gradient", "random-smooth"):
        return field, None
    raise ValueError(f"unknown theta field {field!r}")


def _smooth_noise(spec: SceneSpec, stream: int) -> np.ndarray:
    """Seeded smooth field rescaled to [0, 1]."""
    h, w = spec.height, spec.width
    white = keyed_uniform(spec.seed, stream, np.arange(h * w)).reshape(h, w)
    field = gaussian_filter(white, spec.correlation_length, mode="wrap")
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo) if hi > lo else np.zeros_like(field)


def _tile_texture(h: int, w: int, tile: int, amount: float) -> np.ndarray:
    """Multiplicative texture with identical statistics in every tile."""
    if amount == 0:
        return np.ones((h, w))
    yy = (np.arange(h) % tile) / tile
    xx = (np.arange(w) % tile) / tile
    wave = np.sin(2 * np.pi * 3 * yy)[:, None] * np.cos(2 * np.pi * 2 * xx)[None, :]
    return 1.0 + amount * wave


def _radiance_pattern(spec: SceneSpec) -> np.ndarray:
    h, w = spec.height, spec.width
    stops = spec.dynamic_range_stops
    peak = spec.peak_radiance
    if spec.radiance_pattern == "hdr-checker":
        k_max = math.ceil(stops)
        n = k_max + 1
        grid = math.ceil(math.sqrt(n))
        tile = max(1, min(h, w) // grid)
        ty = np.minimum(np.arange(h) // tile, grid - 1)
        tx = np.minimum(np.arange(w) // tile, grid - 1)
        index = (ty[:, None] * grid + tx[None, :]) % n
        step = stops / k_max
        base = 2.0 ** (step * (index - k_max))
        rad = base * _tile_texture(h, w, tile, spec.texture)
    elif spec.radiance_pattern == "gradient-ramp":
        x = np.arange(w) / max(w - 1, 1)
        rad = np.broadcast_to(2.0 ** (stops * (x - 1.0)), (h, w)).copy()
    else:
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        u = keyed_uniform(spec.seed, 101, np.arange(8))
        v = keyed_uniform(spec.seed, 102, np.arange(8))
        log_rad = np.zeros((h, w))
        radius = 0.08 * min(h, w)
        for cy, cx in zip(u * h, v * w):
            d2 = (yy - cy) ** 2 + (xx - cx) ** 2
            log_rad = np.maximum(log_rad, stops * np.exp(-d2 / (2 * radius**2)))
        # pin the exact extremes so the span is constructive
        log_rad[int(u[0] * h) % h, int(v[0] * w) % w] = stops
        rad = 2.0 ** (log_rad - stops)
    rad = rad / rad.max() * peak
    return rad


def generate_scene(spec: SceneSpec) -> GroundTruth:
    rad = _radiance_pattern(spec)
    if spec.channels == 3:
        tint = np.array([1.0, 0.8, 0.6])
        rad = rad[:, :, None] * tint
    lo, hi = spec.rho_range
    rho = lo + (hi - lo) * _smooth_noise(spec, 1) if hi > lo else np.full((spec.height, spec.width), float(lo))
    kind, value = _theta_kind(spec.theta_field)
    if kind == "constant":
        theta = np.full((spec.height, spec.width), float(wrap_angle(value)))
    elif kind == "smooth-gradient":
        theta = np.broadcast_to(180.0 * np.arange(spec.width) / spec.width, (spec.height, spec.width)).copy()
    else:
        theta = wrap_angle(180.0 * _smooth_noise(spec, 2) * 2.0)
    return GroundTruth(RadianceMap(rad), rho, theta)


def quad_irradiance(gt: GroundTruth):
    """Filtered irradiance at each polarizer angle, (H, W, C) arrays."""
    i0 = gt.radiance.data.astype(np.float64)
    rho = gt.rho[:, :, None]
    theta = gt.theta[:, :, None]
    return forward_quad(i0, PolState(rho, theta))


def simulate_capture(gt: GroundTruth, t0: float, crf: Crf, noise_sigma: float = 0.0,
                     seed: int = 0, threads: int = 1) -> PolarQuad:
    """Render one snapshot: L_i = f(I_i * t0) (+ Gaussian read noise in levels)."""
    if not t0 > 0:
        raise ValueError("t0 must be positive")
    h, w, c = gt.radiance.data.shape
    irr = quad_irradiance(gt)
    out = {a: np.empty((h, w, c), dtype=np.float64) for a in ANGLES}
    # noise stream keyed by exposure and angle so every quad draws independently
    t_key = int(round(t0 * 1e6))

    def work(r0, r1):
        idx = np.arange(r0 * w * c, r1 * w * c, dtype=np.uint64).reshape(r1 - r0, w, c)
        for k, a in enumerate(ANGLES):
            level = apply_crf(crf, irr[k][r0:r1] * t0, quantize=False)
            if noise_sigma > 0:
                level = level + noise_sigma * keyed_normal(seed, t_key * 4 + k, idx)
            out[a][r0:r1] = np.clip(round_half_away(level), 0, crf.max_level)

    run_rows(work, h, threads)
    images = {a: LdrImage(out[a], crf.bit_depth) for a in ANGLES}
    return PolarQuad(images, float(t0), crf)


def simulate_stack(gt: GroundTruth, exposures=BRACKET_EXPOSURES_MS, crf: Crf | None = None,
                   noise_sigma: float = 0.0, seed: int = 0, threads: int = 1) -> CaptureStack:
    crf = crf if crf is not None else Crf()
    exposures = [float(t) for t in exposures]
    if any(b <= a for a, b in zip(exposures, exposures[1:])):
        raise ValueError("exposures must be strictly increasing")
    quads = [simulate_capture(gt, t, crf, noise_sigma, seed, threads) for t in exposures]
    return CaptureStack(quads, crf)
