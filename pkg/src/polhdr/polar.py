"""Linear-polarization formation model, its Stokes inverse, and mosaic handling.

Angles are in degrees at every public boundary. Functions broadcast over
numpy arrays, so the same code serves single pixels and whole planes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgcore import ANGLES, LdrImage, PolarQuad

DEFAULT_PATTERN = ((90, 45), (135, 0))
RHO_EPS = 1e-9


class DegeneratePixelError(ValueError):
    pass


@dataclass(frozen=True)
class PolState:
    """Degree (rho, in [0, 1]) and angle (theta, degrees in [0, 180)) of polarization.

    Fields may be scalars or equally shaped arrays.
    """

    rho: object
    theta: object

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.float64)
        theta = np.asarray(self.theta, dtype=np.float64)
        if np.any(rho < 0) or np.any(rho > 1) or not np.all(np.isfinite(rho)):
            raise ValueError("rho must lie in [0, 1]")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        if np.any(theta < 0) or np.any(theta >= 180):
            raise ValueError("theta must lie in [0, 180)")


@dataclass(frozen=True)
class StokesMap:
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray


@dataclass(frozen=True)
class ExposureQuad:
    t1: object
    t2: object
    t3: object
    t4: object

    def as_tuple(self):
        return self.t1, self.t2, self.t3, self.t4


def wrap_angle(theta):
    """Map degrees into [0, 180)."""
    t = np.mod(np.asarray(theta, dtype=np.float64), 180.0)
    # fmod can land exactly on 180 for tiny negative inputs
    t = np.where(t >= 180.0, 0.0, t)
    return t[()] if t.ndim == 0 else t


def filtered_irradiance(i0, state: PolState, alpha):
    """Irradiance behind a linear polarizer at ``alpha`` degrees."""
    two = 2.0 * np.deg2rad(np.asarray(state.theta, dtype=np.float64) - alpha)
    return 0.5 * np.asarray(i0, dtype=np.float64) * (1.0 + state.rho * np.cos(two))


def forward_quad(i0, state: PolState):
    """(I1, I2, I3, I4) at 0, 45, 90, 135 degrees.

    Written in the +/- pair form so that I1 + I3 and I2 + I4 equal ``i0`` up to
    a couple of rounding steps.
    """
    i0 = np.asarray(i0, dtype=np.float64)
    two = 2.0 * np.deg2rad(np.asarray(state.theta, dtype=np.float64))
    c = state.rho * np.cos(two)
    s = state.rho * np.sin(two)
    half = 0.5 * i0
    return half * (1.0 + c), half * (1.0 + s), half * (1.0 - c), half * (1.0 - s)


def stokes_from_quad(i1, i2, i3, i4):
    i1, i2, i3, i4 = (np.asarray(v, dtype=np.float64) for v in (i1, i2, i3, i4))
    return (i1 + i2 + i3 + i4) / 2.0, i1 - i3, i2 - i4


def pol_state_from_stokes(s0, s1, s2, return_stats: bool = False):
    """Recover (rho, theta) from linear Stokes components.

    rho is clamped to 1 when noise pushes it above. theta is undefined where
    rho == 0 and is reported as 0 there. With ``return_stats`` the function
    also returns ``{"clamped": count, "undefined_theta": bool mask}``.
    Raises DegeneratePixelError if any s0 <= 0.
    """
    s0, s1, s2 = (np.asarray(v, dtype=np.float64) for v in (s0, s1, s2))
    if np.any(s0 <= 0):
        raise DegeneratePixelError(f"{int(np.count_nonzero(s0 <= 0))} pixel(s) with s0 <= 0")
    raw = np.hypot(s1, s2) / s0
    clamped = raw > 1.0
    rho = np.minimum(raw, 1.0)
    undefined = (s1 == 0) & (s2 == 0)
    theta = wrap_angle(np.rad2deg(0.5 * np.arctan2(s2, s1)))
    theta = np.where(undefined, 0.0, theta)
    state = PolState(rho[()] if rho.ndim == 0 else rho, theta[()] if np.ndim(theta) == 0 else theta)
    if return_stats:
        return state, {"clamped": int(np.count_nonzero(clamped)), "undefined_theta": undefined}
    return state


def stokes_map(i1, i2, i3, i4) -> StokesMap:
    return StokesMap(*stokes_from_quad(i1, i2, i3, i4))


def effective_exposures(t0, state: PolState) -> ExposureQuad:
    if not np.all(np.asarray(t0) > 0):
        raise ValueError("t0 must be positive")
    return ExposureQuad(*forward_quad(t0, state))


# --- micro-polarizer mosaics ------------------------------------------------


def parse_pattern(text: str):
    """'90,45,135,0' -> ((90, 45), (135, 0)) (row-major 2x2)."""
    try:
        vals = [int(v) for v in text.replace(" ", "").split(",")]
    except ValueError:
        raise ValueError(f"bad mosaic pattern {text!r}") from None
    pattern = ((vals[0], vals[1]), (vals[2], vals[3])) if len(vals) == 4 else None
    check_pattern(pattern)
    return pattern


def check_pattern(pattern):
    if pattern is None or sorted(a for row in pattern for a in row) != list(ANGLES):
        raise ValueError(f"mosaic pattern must be a 2x2 permutation of {ANGLES}, got {pattern}")


def _bilinear_plane(sub: np.ndarray, dy: int, dx: int, shape) -> np.ndarray:
    """Upsample a sub-grid sampled at rows dy::2, cols dx::2 to the full grid.

    Full-resolution pixel (y, x) sits at sub-grid coordinate ((y - dy) / 2,
    (x - dx) / 2); outside the sampled hull the nearest edge sample is used.
    """
    h, w = shape
    sh, sw = sub.shape[:2]
    ys = np.clip((np.arange(h) - dy) / 2.0, 0, sh - 1)
    xs = np.clip((np.arange(w) - dx) / 2.0, 0, sw - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    if sub.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    top = sub[y0][:, x0] * (1 - fx) + sub[y0][:, x1] * fx
    bot = sub[y1][:, x0] * (1 - fx) + sub[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def demosaic_quad(mosaic: LdrImage, pattern=DEFAULT_PATTERN, mode: str = "split",
                  t0: float = 1.0, crf=None) -> PolarQuad:
    """Separate a micro-polarizer mosaic into its four orientation planes.

    ``split`` keeps each quarter-resolution sub-image; ``bilinear`` upsamples
    every sub-grid back to full resolution (levels rounded half-up).
    """
    check_pattern(pattern)
    data = mosaic.data
    h, w = data.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"mosaic dimensions must be even, got {w}x{h}")
    if mode not in ("split", "bilinear"):
        raise ValueError(f"unknown demosaic mode {mode!r}")
    images = {}
    for dy in range(2):
        for dx in range(2):
            sub = data[dy::2, dx::2]
            if mode == "bilinear":
                up = _bilinear_plane(sub.astype(np.float64), dy, dx, (h, w))
                sub = np.clip(np.floor(up + 0.5), 0, mosaic.max_level)
            images[pattern[dy][dx]] = LdrImage(sub, mosaic.bit_depth)
    return PolarQuad(images, t0, crf)


def mosaic_quad(quad: PolarQuad, pattern=DEFAULT_PATTERN) -> LdrImage:
    """Interleave a quad's planes into a mosaic (inverse of split demosaic)."""
    check_pattern(pattern)
    h, w, c = quad.shape
    out = np.empty((2 * h, 2 * w, c), dtype=quad[0].data.dtype)
    for dy in range(2):
        for dx in range(2):
            out[dy::2, dx::2] = quad[pattern[dy][dx]].data
    return LdrImage(out, quad.bit_depth)
