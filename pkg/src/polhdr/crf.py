"""Camera response curves: forward map f (exposure -> level) and inverse g.

Two kinds are supported. ``gamma`` is the parametric curve
``level = round(max_level * clip(x / white_level, 0, 1) ** (1 / gamma))``;
``lut`` stores the inverse directly as one exposure value per digital level,
which is what :func:`solve_crf` recovers from a bracketed stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import isotonic_regression
from scipy.sparse.linalg import spsolve


class CrfError(ValueError):
    """Raised when a response curve cannot be built or recovered."""


def round_half_away(x):
    """Half-away-from-zero rounding (``np.round`` rounds half to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class Crf:
    kind: str = "gamma"
    gamma: float = 2.2
    white_level: float = 1.0
    bit_depth: int = 8
    lut: np.ndarray | None = None

    def __post_init__(self):
        if self.bit_depth not in (8, 16):
            raise CrfError(f"bit_depth must be 8 or 16, got {self.bit_depth}")
        if self.kind == "gamma":
            if not self.gamma > 0:
                raise CrfError("gamma must be positive")
            if not self.white_level > 0:
                raise CrfError("white_level must be positive")
        elif self.kind == "lut":
            lut = np.asarray(self.lut, dtype=np.float64)
            if lut.shape != (self.max_level + 1,):
                raise CrfError(f"lut needs {self.max_level + 1} entries, got {lut.shape}")
            if not np.all(np.isfinite(lut)) or lut[0] < 0:
                raise CrfError("lut entries must be finite and non-negative")
            if np.any(np.diff(lut) <= 0):
                raise CrfError("lut entries must be strictly increasing")
            lut.setflags(write=False)
            object.__setattr__(self, "lut", lut)
            object.__setattr__(self, "white_level", float(lut[-1]))
        else:
            raise CrfError(f"unknown CRF kind {self.kind!r}")

    @property
    def max_level(self) -> int:
        return (1 << self.bit_depth) - 1

    @property
    def quantization_step(self) -> float:
        """One digital level expressed in exposure units (linear scale)."""
        return self.white_level / self.max_level

    def inverse_table(self) -> np.ndarray:
        """g evaluated at every digital level."""
        return invert_crf(self, np.arange(self.max_level + 1))

    @classmethod
    def from_dict(cls, d: dict) -> "Crf":
        kind = d.get("kind", "gamma")
        bit_depth = int(d.get("bit_depth", 8))
        if kind == "gamma":
            return cls("gamma", float(d["gamma"]), float(d.get("white_level", 1.0)), bit_depth)
        if kind == "lut":
            return cls("lut", bit_depth=bit_depth, lut=np.asarray(d["values"], dtype=np.float64))
        raise CrfError(f"unknown CRF kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "gamma":
            return {"kind": "gamma", "gamma": self.gamma, "white_level": self.white_level,
                    "bit_depth": self.bit_depth}
        return {"kind": "lut", "values": [float(v) for v in self.lut], "bit_depth": self.bit_depth}


def apply_crf(crf: Crf, exposure, quantize: bool = True):
    """Map exposure (irradiance x time) to digital levels.

    With ``quantize=False`` the continuous level is returned unrounded (but
    still clipped to ``[0, max_level]``); this is the exact float path used to
    test fusion without quantization error.
    """
    x = np.asarray(exposure, dtype=np.float64)
    m = crf.max_level
    if crf.kind == "gamma":
        level = m * np.clip(x / crf.white_level, 0.0, 1.0) ** (1.0 / crf.gamma)
        if quantize:
            level = round_half_away(level)
    else:
        lut = crf.lut
        if not quantize:
            level = np.interp(x, lut, np.arange(m + 1, dtype=np.float64))
        else:
            hi = np.clip(np.searchsorted(lut, x, side="left"), 1, m)
            lo = hi - 1
            level = np.where(x - lut[lo] < lut[hi] - x, lo, hi).astype(np.float64)
            level = np.where(x <= lut[0], 0.0, np.where(x >= lut[-1], float(m), level))
    if quantize:
        level = level.astype(np.int64)
    return level[()] if level.ndim == 0 else level


def invert_crf(crf: Crf, level):
    """Inverse response g: digital level -> exposure. Fractional levels interpolate."""
    z = np.clip(np.asarray(level, dtype=np.float64), 0, crf.max_level)
    if crf.kind == "gamma":
        out = crf.white_level * (z / crf.max_level) ** crf.gamma
    else:
        out = np.interp(z, np.arange(crf.max_level + 1, dtype=np.float64), crf.lut)
    return out[()] if out.ndim == 0 else out


def hat_weights(max_level: int) -> np.ndarray:
    z = np.arange(max_level + 1, dtype=np.float64)
    return np.minimum(z, max_level - z)


def _strictly_increasing(values: np.ndarray) -> np.ndarray:
    out = values.copy()
    for k in range(1, len(out)):
        if out[k] <= out[k - 1]:
            out[k] = np.nextafter(out[k - 1], np.inf)
    return out


def _levels(img) -> np.ndarray:
    return np.asarray(getattr(img, "data", img))


def solve_crf(stack, lam: float = 50.0, samples: int = 500, seed: int = 0,
              bit_depth: int | None = None) -> Crf:
    """Recover a lut-kind CRF from a static bracketed stack.

    Parameters
    ----------
    stack : sequence of (image, exposure_time)
        Images are LdrImages or integer arrays of identical shape.
    lam : float
        Weight of the second-difference smoothness term.
    samples : int
        Number of pixel locations drawn (without replacement, seeded).

    Returns
    -------
    Crf
        ``lut`` kind; ``lut[z] = exp(g(z))`` with ``g(mid) = 0``, ``lut[0] = 0``.
    """
    stack = list(stack)
    if len(stack) < 2:
        raise CrfError("CRF recovery needs at least 2 exposures")
    images = [_levels(img) for img, _ in stack]
    times = np.array([float(t) for _, t in stack])
    if np.any(times <= 0):
        raise CrfError("exposure times must be positive")
    if any(im.shape != images[0].shape for im in images):
        raise CrfError("all images in the stack must share dimensions")
    if bit_depth is None:
        bit_depth = getattr(stack[0][0], "bit_depth", 8 if images[0].dtype == np.uint8 else 16)
    n = 1 << bit_depth
    zmax = n - 1

    flat = np.stack([im.reshape(-1) for im in images], axis=1).astype(np.int64)
    rng = np.random.default_rng(seed)
    count = min(samples, flat.shape[0])
    pick = np.sort(rng.choice(flat.shape[0], size=count, replace=False))
    Z = flat[pick]
    if Z.min() < 0 or Z.max() > zmax:
        raise CrfError(f"levels outside [0, {zmax}]")
    w = hat_weights(zmax)
    wz = w[Z]
    if not np.any(wz > 0):
        raise CrfError("singular system: every sampled observation is black or saturated")

    nsamp, nexp = Z.shape
    logt = np.log(times)
    rows_data = np.arange(nsamp * nexp)
    wflat = wz.reshape(-1)
    zflat = Z.reshape(-1)
    sidx = np.repeat(np.arange(nsamp), nexp)
    b_data = wflat * np.tile(logt, nsamp)

    mid = n // 2
    k = np.arange(1, n - 1)
    srow = nsamp * nexp + 1 + (k - 1)
    rows = np.concatenate([rows_data, rows_data, [nsamp * nexp], srow, srow, srow])
    cols = np.concatenate([zflat, n + sidx, [mid], k - 1, k, k + 1])
    vals = np.concatenate([wflat, -wflat, [1.0], lam * w[k], -2 * lam * w[k], lam * w[k]])
    shape = (nsamp * nexp + 1 + len(k), n + nsamp)
    A = sp.csr_matrix((vals, (rows, cols)), shape=shape)
    b = np.zeros(shape[0])
    b[: nsamp * nexp] = b_data

    # Samples never observed with positive weight leave their log-irradiance free.
    observed = np.zeros(nsamp, dtype=bool)
    np.logical_or.at(observed, sidx, wflat > 0)
    keep = np.concatenate([np.ones(n, dtype=bool), observed])
    A = A[:, keep]
    AtA = (A.T @ A).tocsc()
    try:
        x = spsolve(AtA, A.T @ b)
    except RuntimeError as exc:
        raise CrfError(f"singular system: {exc}") from None
    g = x[:n]
    if not np.all(np.isfinite(g)):
        raise CrfError("singular system: non-finite solution")

    g = isotonic_regression(g).x
    lut = np.exp(g - g[mid])
    lut[0] = 0.0
    return Crf("lut", bit_depth=bit_depth, lut=_strictly_increasing(lut))
