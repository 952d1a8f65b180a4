"""Image codecs: 8-bit PNG for LDR rasters, 32-bit float PFM for HDR rasters.

PFM layout: "PF\\n<width> <height>\\n-1.0\\n" followed by float32 scanlines
bottom-up, little-endian (negative scale marks little-endian).
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image


class ImageIoError(ValueError):
    pass


def _check_ldr(raster: np.ndarray) -> np.ndarray:
    raster = np.asarray(raster, dtype=np.float64)
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise ImageIoError(f"LDR raster must be (H, W, 3), got {raster.shape}")
    if raster.min() < -1e-9 or raster.max() > 1.0 + 1e-9:
        raise ImageIoError(
            f"LDR raster out of [0, 1]: min {raster.min():g} max {raster.max():g}"
        )
    return np.clip(raster, 0.0, 1.0)


def quantize_u8(raster: np.ndarray) -> np.ndarray:
    """[0,1] floats to u8 with round-half-even (0.5 -> 128)."""
    return np.rint(_check_ldr(raster) * 255.0).astype(np.uint8)


def encode_png(raster: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(quantize_u8(raster), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_png(raster: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_png(raster))


def read_png(path) -> np.ndarray:
    try:
        img = Image.open(path)
        img.load()
    except Exception as e:
        raise ImageIoError(f"cannot read PNG {path}: {e}") from e
    if img.mode != "RGB":
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def write_pfm(raster: np.ndarray, path) -> None:
    raster = np.asarray(raster)
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise ImageIoError(f"PFM raster must be (H, W, 3), got {raster.shape}")
    if not np.all(np.isfinite(raster)):
        raise ImageIoError("PFM raster contains non-finite values")
    h, w, _ = raster.shape
    header = f"PF\n{w} {h}\n-1.0\n".encode("ascii")
    data = np.ascontiguousarray(np.flipud(raster).astype("<f4")).tobytes()
    Path(path).write_bytes(header + data)


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    try:
        nl1 = raw.index(b"\n")
        nl2 = raw.index(b"\n", nl1 + 1)
        nl3 = raw.index(b"\n", nl2 + 1)
    except ValueError as e:
        raise ImageIoError(f"truncated PFM header in {path}") from e
    kind = raw[:nl1].strip()
    if kind != b"PF":
        raise ImageIoError(f"unsupported PFM kind {kind!r} in {path} (only color 'PF')")
    try:
        w, h = (int(t) for t in raw[nl1 + 1 : nl2].split())
        scale = float(raw[nl2 + 1 : nl3])
    except ValueError as e:
        raise ImageIoError(f"malformed PFM header in {path}: {e}") from e
    if scale >= 0:
        raise ImageIoError(f"big-endian PFM not supported ({path})")
    body = raw[nl3 + 1 :]
    expected = w * h * 3 * 4
    if len(body) != expected:
        raise ImageIoError(f"PFM payload of {path} is {len(body)} bytes, expected {expected}")
    arr = np.frombuffer(body, dtype="<f4").reshape(h, w, 3)
    return np.flipud(arr).copy()


def write_image(raster: np.ndarray, path, format: str | None = None) -> None:
    fmt = (format or Path(path).suffix.lstrip(".")).lower()
    if fmt == "png":
        write_png(raster, path)
    elif fmt == "pfm":
        write_pfm(raster, path)
    else:
        raise ImageIoError(f"unsupported image format {fmt!r}")


def read_image(path, format: str | None = None) -> np.ndarray:
    fmt = (format or Path(path).suffix.lstrip(".")).lower()
    if fmt == "png":
        return read_png(path)
    if fmt == "pfm":
        return read_pfm(path)
    raise ImageIoError(f"unsupported image format {fmt!r}")
