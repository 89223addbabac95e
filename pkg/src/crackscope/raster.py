"""8-bit rasters, binary PGM/PPM I/O, grayscale conversion, tiling and resizing.

Quantisation everywhere in this module (and in the rest of the package) is
round-half-up: ``floor(v + 0.5)``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class ImageFormatError(ValueError):
    """Malformed PGM/PPM payload; ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def quantize(values: np.ndarray) -> np.ndarray:
    """Round half up and clamp to uint8."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class Raster:
    """Immutable 8-bit image stored as a ``(height, width, channels)`` uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"raster must have 1 or 3 channels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("raster must be at least 1x1")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("samples must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_samples(cls, width: int, height: int, channels: int, samples) -> "Raster":
        data = np.asarray(samples)
        if data.size != width * height * channels:
            raise ValueError(
                f"expected {width * height * channels} samples, got {data.size}"
            )
        return cls(data.reshape(height, width, channels))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def samples(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def crop(self, x: int, y: int, w: int, h: int) -> "Raster":
        if x < 0 or y < 0 or x + w > self.width or y + h > self.height:
            raise ValueError("crop rectangle outside raster")
        return Raster(self.pixels[y : y + h, x : x + w])

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels
        )

    def __repr__(self):
        return f"Raster({self.width}x{self.height}x{self.channels})"


# -- PGM / PPM ---------------------------------------------------------------

_WS = b" \t\n\r\v\f"


def _header_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(data):
        ch = data[pos : pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch in _WS and ch:
            pos += 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos : pos + 1] not in _WS and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("unexpected end of header", pos)
    return data[start:pos], pos


def decode_netpbm(data: bytes) -> Raster:
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ImageFormatError(f"unsupported magic {magic!r}; expected P5 or P6", 0)
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _header_token(data, pos)
        if not tok.isdigit():
            raise ImageFormatError(f"invalid {name} {tok!r}", pos - len(tok))
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError("image dimensions must be positive", pos)
    if maxval != 255:
        raise ImageFormatError(f"maxval {maxval} unsupported; only 255", pos)
    if pos >= len(data) or data[pos : pos + 1] not in _WS:
        raise ImageFormatError("missing whitespace after maxval", pos)
    pos += 1
    need = width * height * channels
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise ImageFormatError(
            f"truncated payload: expected {need} bytes, found {len(payload)}", pos + len(payload)
        )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Raster(arr.copy())


def encode_netpbm(raster: Raster) -> bytes:
    if raster.channels not in (1, 3):
        raise ValueError("only 1- or 3-channel rasters can be written")
    magic = b"P5" if raster.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (raster.width, raster.height)
    return header + raster.pixels.tobytes()


def image_read(path: str | os.PathLike) -> Raster:
    with open(path, "rb") as fh:
        return decode_netpbm(fh.read())


def image_write(raster: Raster, path: str | os.PathLike) -> None:
    if not isinstance(raster, Raster):
        raise TypeError("image_write expects a Raster")
    data = encode_netpbm(raster)
    with open(path, "wb") as fh:
        fh.write(data)


# -- pixel operations ----------------------------------------------------------


def to_grayscale(raster: Raster) -> Raster:
    """BT.601 luma, computed in integer arithmetic so rounding is exact."""
    if raster.channels == 1:
        return raster
    px = raster.pixels.astype(np.int64)
    y = (299 * px[:, :, 0] + 587 * px[:, :, 1] + 114 * px[:, :, 2] + 500) // 1000
    return Raster(np.clip(y, 0, 255).astype(np.uint8))


def replicate3(raster: Raster) -> Raster:
    if raster.channels == 3:
        return raster
    return Raster(np.repeat(raster.pixels, 3, axis=2))


@dataclass(frozen=True)
class TileGrid:
    """Non-overlapping window lattice; tile (r, c) starts at (origin_x + c*w, origin_y + r*w)."""

    window: int
    rows: int
    cols: int
    origin_x: int = 0
    origin_y: int = 0

    def origin(self, r: int, c: int) -> tuple[int, int]:
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise IndexError(f"tile ({r}, {c}) outside {self.rows}x{self.cols} grid")
        return self.origin_x + c * self.window, self.origin_y + r * self.window

    def tile_at(self, raster: Raster, r: int, c: int) -> Raster:
        x, y = self.origin(r, c)
        return raster.crop(x, y, self.window, self.window)

    def cells(self):
        for r in range(self.rows):
            for c in range(self.cols):
                yield r, c

    @property
    def extent(self) -> tuple[int, int]:
        """(width, height) in pixels of the covered region."""
        return self.cols * self.window, self.rows * self.window


def tile(raster: Raster, window: int = 227) -> TileGrid:
    if window < 1:
        raise ValueError("window must be positive")
    if raster.width < window or raster.height < window:
        raise ValueError(
            f"image {raster.width}x{raster.height} is smaller than window {window}"
        )
    return TileGrid(window, raster.height // window, raster.width // window)


def _axis_coords(dst: int, src: int) -> np.ndarray:
    if dst == 1 or src == 1:
        return np.zeros(dst)
    return np.arange(dst) * ((src - 1) / (dst - 1))


def bilinear_resize_float(values: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Corner-aligned bilinear resampling of an (h, w[, c]) float array."""
    arr = np.asarray(values, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w = arr.shape[:2]
    ys = _axis_coords(new_h, h)
    xs = _axis_coords(new_w, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bot = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return out[:, :, 0] if squeeze else out


def bilinear_resize(raster: Raster, new_w: int, new_h: int) -> Raster:
    if new_w < 1 or new_h < 1:
        raise ValueError("target dimensions must be >= 1")
    if (new_w, new_h) == (raster.width, raster.height):
        return raster
    return Raster(quantize(bilinear_resize_float(raster.pixels, new_w, new_h)))


def contrast_stretch(raster: Raster, p_low: float = 1.0, p_high: float = 99.0) -> Raster:
    """Affine map sending the p_low percentile to 0 and p_high to 255, clamped."""
    if not (0 <= p_low < p_high <= 100):
        raise ValueError("need 0 <= p_low < p_high <= 100")
    gray = to_grayscale(raster)
    vals = gray.pixels.astype(np.float64)
    lo, hi = np.percentile(vals, [p_low, p_high])
    if hi <= lo:
        return gray
    return Raster(quantize((vals - lo) * (255.0 / (hi - lo))))
