"""Image containers, PFM/PNG I/O and capture-stack manifests."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .crf import Crf

ANGLES = (0, 45, 90, 135)
ANGLE_KEYS = {"a0": 0, "a45": 45, "a90": 90, "a135": 135}


class ImageIOError(ValueError):
    """Raised when an image or manifest file cannot be decoded."""


def _as_hwc(data) -> np.ndarray:
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3 or data.shape[2] not in (1, 3):
        raise ValueError(f"expected HxW or HxWx{{1,3}} array, got shape {data.shape}")
    return data


@dataclass(frozen=True)
class RadianceMap:
    """Linear scene radiance, stored as an (H, W, C) float array with C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self):
        data = _as_hwc(self.data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise ValueError("radiance samples must be finite")
        if np.any(data < 0):
            raise ValueError("radiance samples must be non-negative")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def plane(self) -> np.ndarray:
        """(H, W) view for single-channel maps, (H, W, C) otherwise."""
        return self.data[:, :, 0] if self.channels == 1 else self.data


@dataclass(frozen=True)
class LdrImage:
    """Integer digital levels, (H, W, C) with C in {1, 3} and 8 or 16 bits."""

    data: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        if self.bit_depth not in (8, 16):
            raise ValueError(f"bit_depth must be 8 or 16, got {self.bit_depth}")
        data = _as_hwc(self.data)
        dtype = np.uint8 if self.bit_depth == 8 else np.uint16
        if data.dtype != dtype:
            if np.issubdtype(data.dtype, np.floating) and not np.all(data == np.round(data)):
                raise ValueError("digital levels must be integers")
            if data.size and (data.min() < 0 or data.max() > self.max_level):
                raise ValueError(f"levels outside [0, {self.max_level}]")
            data = data.astype(dtype)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def max_level(self) -> int:
        return (1 << self.bit_depth) - 1

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class PolarQuad:
    """Four co-registered captures behind 0/45/90/135 degree polarizers."""

    images: dict
    t0: float
    crf: Crf | None = None

    def __post_init__(self):
        if sorted(self.images) != list(ANGLES):
            raise ValueError(f"quad needs exactly the angles {ANGLES}, got {sorted(self.images)}")
        if not self.t0 > 0:
            raise ValueError(f"t0 must be positive, got {self.t0}")
        ref = self.images[0]
        for a in ANGLES[1:]:
            im = self.images[a]
            if (im.data.shape, im.bit_depth) != (ref.data.shape, ref.bit_depth):
                raise ValueError(f"image at {a} deg does not match the 0 deg image shape/bit depth")

    def __getitem__(self, angle: int) -> LdrImage:
        return self.images[angle]

    @property
    def shape(self):
        return self.images[0].data.shape

    @property
    def bit_depth(self) -> int:
        return self.images[0].bit_depth

    def levels(self) -> list[np.ndarray]:
        """Digital levels as float arrays, ordered 0, 45, 90, 135."""
        return [self.images[a].data.astype(np.float64) for a in ANGLES]


@dataclass(frozen=True)
class CaptureStack:
    quads: list
    crf: Crf | None = None
    exposures: list = field(init=False)

    def __post_init__(self):
        quads = list(self.quads)
        exposures = [q.t0 for q in quads]
        if any(b <= a for a, b in zip(exposures, exposures[1:])):
            raise ValueError("exposures must be strictly increasing")
        if quads and any(q.shape != quads[0].shape for q in quads):
            raise ValueError("all quads in a stack must share dimensions")
        object.__setattr__(self, "quads", quads)
        object.__setattr__(self, "exposures", exposures)

    def __len__(self):
        return len(self.quads)

    def __getitem__(self, i) -> PolarQuad:
        return self.quads[i]


# --- PFM -------------------------------------------------------------------


def _read_token(buf: bytes, pos: int) -> tuple[str, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise ImageIOError(f"malformed PFM header: missing newline after byte offset {pos}")
    return buf[pos:end].decode("ascii", errors="replace").strip(), end + 1


def read_pfm_array(path) -> np.ndarray:
    """Decode a PFM into an (H, W, C) float32 array, top row first; signed samples allowed."""
    buf = Path(path).read_bytes()
    tag, pos = _read_token(buf, 0)
    if tag == "PF":
        channels = 3
    elif tag == "Pf":
        channels = 1
    else:
        raise ImageIOError(f"malformed PFM header at byte offset 0: bad magic {tag!r}")
    dims_at = pos
    dims, pos = _read_token(buf, pos)
    try:
        width, height = (int(v) for v in dims.split())
    except ValueError:
        raise ImageIOError(f"malformed PFM header at byte offset {dims_at}: bad dimensions {dims!r}") from None
    if width <= 0 or height <= 0:
        raise ImageIOError(f"malformed PFM header at byte offset {dims_at}: non-positive dimensions")
    scale_at = pos
    scale_tok, pos = _read_token(buf, pos)
    try:
        scale = float(scale_tok)
    except ValueError:
        raise ImageIOError(f"malformed PFM header at byte offset {scale_at}: bad scale {scale_tok!r}") from None
    if scale == 0 or not np.isfinite(scale):
        raise ImageIOError(f"malformed PFM header at byte offset {scale_at}: scale must be non-zero")

    count = width * height * channels
    need = pos + 4 * count
    if len(buf) < need:
        raise ImageIOError(f"truncated PFM payload: expected {need} bytes, file ends at byte offset {len(buf)}")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    flat = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).astype(np.float32)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise ImageIOError(f"non-finite PFM sample at byte offset {pos + 4 * int(bad[0])}")
    data = flat.reshape(height, width, channels)[::-1]
    return np.ascontiguousarray(data)


def read_pfm(path) -> RadianceMap:
    data = read_pfm_array(path)
    neg = np.argwhere(data < 0)
    if neg.size:
        raise ImageIOError(f"{path}: negative radiance sample at (row, col, ch) {tuple(int(v) for v in neg[0])}")
    return RadianceMap(data)


def write_pfm_array(data, path) -> None:
    """Write little-endian PFM (scale -1.0), rows bottom-to-top."""
    data = _as_hwc(data).astype("<f4")
    height, width, channels = data.shape
    tag = b"Pf" if channels == 1 else b"PF"
    with open(path, "wb") as fh:
        fh.write(tag + b"\n%d %d\n-1.0\n" % (width, height))
        fh.write(np.ascontiguousarray(data[::-1]).tobytes())


def write_pfm(radiance: RadianceMap, path) -> None:
    write_pfm_array(radiance.data, path)


# --- PNG -------------------------------------------------------------------

_PNG_SIG = b"\x89PNG\r\n\x1a\n"
_COLOR_TYPES = {0: 1, 2: 3}


def _png_header(path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        head = fh.read(33)
    if len(head) < 33 or head[:8] != _PNG_SIG or head[12:16] != b"IHDR":
        raise ImageIOError(f"{path}: not a PNG file")
    bit_depth, color_type = struct.unpack(">BB", head[24:26])
    return bit_depth, color_type


def read_png(path) -> LdrImage:
    bit_depth, color_type = _png_header(path)
    if color_type not in _COLOR_TYPES:
        raise ImageIOError(f"{path}: unsupported color type {color_type}")
    if bit_depth not in (8, 16):
        raise ImageIOError(f"{path}: unsupported bit depth {bit_depth}")
    data = cv2.imread(os.fspath(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise ImageIOError(f"{path}: could not decode PNG")
    if data.ndim == 3:
        data = data[:, :, ::-1]
    return LdrImage(np.ascontiguousarray(data), bit_depth)


def write_png(image: LdrImage, path) -> None:
    data = image.data
    data = data[:, :, 0] if image.channels == 1 else np.ascontiguousarray(data[:, :, ::-1])
    if not cv2.imwrite(os.fspath(path), data):
        raise ImageIOError(f"{path}: could not write PNG")


# --- manifests -------------------------------------------------------------


def load_stack(manifest_path) -> CaptureStack:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise ImageIOError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise ImageIOError(f"{manifest_path}: invalid JSON ({exc})") from None
    root = manifest_path.parent
    crf = Crf.from_dict(manifest["crf"]) if "crf" in manifest else None

    entries = manifest.get("quads")
    if not isinstance(entries, list):
        raise ImageIOError(f"{manifest_path}: 'quads' must be a list")
    seen = set()
    quads = []
    for entry in entries:
        t0 = float(entry["t0_ms"])
        if t0 in seen:
            raise ImageIOError(f"{manifest_path}: duplicate exposure t0_ms={t0}")
        seen.add(t0)
        images = {}
        for key, rel in entry["images"].items():
            if key not in ANGLE_KEYS:
                raise ImageIOError(f"{manifest_path}: unknown angle key {key!r}")
            p = root / rel
            if not p.exists():
                raise ImageIOError(f"missing image file: {p}")
            images[ANGLE_KEYS[key]] = read_png(p)
        try:
            quads.append(PolarQuad(images, t0, crf))
        except ValueError as exc:
            raise ImageIOError(f"{manifest_path}: quad at t0_ms={t0}: {exc}") from None
    quads.sort(key=lambda q: q.t0)
    try:
        return CaptureStack(quads, crf)
    except ValueError as exc:
        raise ImageIOError(f"{manifest_path}: {exc}") from None


def save_stack(stack: CaptureStack, out_dir, prefix: str = "q") -> Path:
    """Write every quad as PNGs plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, quad in enumerate(stack.quads):
        names = {}
        for key, angle in ANGLE_KEYS.items():
            name = f"{prefix}{k:02d}_{key}.png"
            write_png(quad[angle], out_dir / name)
            names[key] = name
        entries.append({"t0_ms": quad.t0, "images": names})
    manifest = {"quads": entries}
    if stack.crf is not None:
        manifest = {"crf": stack.crf.to_dict(), **manifest}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path
