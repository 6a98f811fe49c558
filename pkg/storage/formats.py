# storage/formats.py
"""
File interchange: 8/16-bit PNG and binary/ASCII PGM/PPM images, Middlebury
.flo flow files and the Middlebury colour-wheel flow visualisation.
"""
import logging
from pathlib import Path
from typing import Optional, Tuple

import cv2
import numpy as np

from core.errors import FormatError
from core.imaging import FlowField, as_image

logger = logging.getLogger(__name__)

FLO_MAGIC = 202021.25   # "PIEH" in little-endian float32
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_PNM_CHANNELS = {b"P2": 1, b"P5": 1, b"P3": 3, b"P6": 3}


# ==========================================
# IMAGES
# ==========================================

def _pnm_header(data: bytes) -> Tuple[bytes, int, int, int, int]:
    """Parse a PNM header; returns (magic, width, height, maxval, payload offset)."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PNM header")
        tokens.append(data[start:pos])
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"malformed PNM header: {tokens!r}") from exc
    # exactly one whitespace byte separates the header from binary data
    return magic, width, height, maxval, pos + 1


def _validate_pnm(path: Path, data: bytes) -> None:
    magic, width, height, maxval, offset = _pnm_header(data)
    if magic not in _PNM_CHANNELS:
        raise FormatError(f"{path}: unsupported PNM type {magic!r}")
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: bad PNM size {width}x{height}")
    if maxval not in (255, 65535):
        raise FormatError(f"{path}: unsupported PNM maxval {maxval} (expected 255 or 65535)")
    if magic in (b"P5", b"P6"):
        need = width * height * _PNM_CHANNELS[magic] * (1 if maxval == 255 else 2)
        if len(data) - offset < need:
            raise FormatError(f"{path}: truncated PNM payload ({len(data) - offset} of {need} bytes)")


def _validate_png(path: Path, data: bytes) -> None:
    if not data.startswith(_PNG_SIGNATURE):
        raise FormatError(f"{path}: not a PNG file")
    if b"IEND" not in data[-16:]:
        raise FormatError(f"{path}: truncated PNG (no IEND chunk)")


def read_image(path) -> np.ndarray:
    """Decode an image into an (H, W, C) float array in [0, 1]."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if data.startswith(_PNG_SIGNATURE) or path.suffix.lower() == ".png":
        _validate_png(path, data)
    elif data[:2] in _PNM_CHANNELS:
        _validate_pnm(path, data)
    else:
        raise FormatError(f"{path}: unsupported image format")

    raw = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError(f"{path}: corrupt image data")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise FormatError(f"{path}: unsupported bit depth {raw.dtype}")

    if raw.ndim == 3:
        if raw.shape[2] != 3:
            raise FormatError(f"{path}: unsupported colour layout with {raw.shape[2]} channels")
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    logger.debug("[IO] read %s (%s, %s)", path, raw.shape, raw.dtype)
    return as_image(raw.astype(np.float64) / scale, str(path))


def write_image(img, path, bit_depth: int = 16) -> None:
    """Encode by extension (.png, .pgm, .ppm); values are clamped to [0, 1] and rounded to the code lattice."""
    path = Path(path)
    img = as_image(img)
    if bit_depth not in (8, 16):
        raise FormatError(f"unsupported bit depth {bit_depth}")
    suffix = path.suffix.lower()
    channels = img.shape[2]
    if suffix == ".pgm" and channels != 1:
        raise FormatError(f"{path}: PGM holds one channel, image has {channels}")
    if suffix == ".ppm" and channels != 3:
        raise FormatError(f"{path}: PPM holds three channels, image has {channels}")
    if suffix not in (".png", ".pgm", ".ppm"):
        raise FormatError(f"{path}: unsupported image extension {suffix!r}")

    top = 255.0 if bit_depth == 8 else 65535.0
    codes = np.round(np.clip(img, 0.0, 1.0) * top).astype(np.uint8 if bit_depth == 8 else np.uint16)
    codes = codes[:, :, 0] if channels == 1 else cv2.cvtColor(codes, cv2.COLOR_RGB2BGR)
    ok, buf = cv2.imencode(suffix, codes)
    if not ok:
        raise FormatError(f"{path}: encoder failed")
    path.write_bytes(buf.tobytes())
    logger.debug("[IO] wrote %s (%d-bit)", path, bit_depth)


# ==========================================
# MIDDLEBURY .flo
# ==========================================

def write_flo(flow: FlowField, path) -> None:
    header = np.array([FLO_MAGIC], dtype="<f4").tobytes() + np.array([flow.width, flow.height], dtype="<i4").tobytes()
    payload = flow.to_array().astype("<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_flo(path) -> FlowField:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if len(data) < 12:
        raise FormatError(f"{path}: too short for a .flo header")
    magic = np.frombuffer(data[:4], dtype="<f4")[0]
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{path}: bad .flo magic {magic!r}")
    width, height = (int(x) for x in np.frombuffer(data[4:12], dtype="<i4"))
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: bad .flo size {width}x{height}")
    expected = 8 * width * height
    if len(data) - 12 != expected:
        raise FormatError(f"{path}: payload has {len(data) - 12} bytes, {width}x{height} needs {expected}")
    arr = np.frombuffer(data[12:], dtype="<f4").reshape(height, width, 2)
    return FlowField.from_array(arr.astype(np.float64))


# ==========================================
# VISUALISATION
# ==========================================

def make_colorwheel() -> np.ndarray:
    """Middlebury colour wheel, 55 x 3, RGB in [0, 255]."""
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((ry + yg + gc + cb + bm + mr, 3))
    col = 0
    wheel[col:col + ry, 0] = 255
    wheel[col:col + ry, 1] = np.floor(255 * np.arange(ry) / ry)
    col += ry
    wheel[col:col + yg, 0] = 255 - np.floor(255 * np.arange(yg) / yg)
    wheel[col:col + yg, 1] = 255
    col += yg
    wheel[col:col + gc, 1] = 255
    wheel[col:col + gc, 2] = np.floor(255 * np.arange(gc) / gc)
    col += gc
    wheel[col:col + cb, 1] = 255 - np.floor(255 * np.arange(cb) / cb)
    wheel[col:col + cb, 2] = 255
    col += cb
    wheel[col:col + bm, 2] = 255
    wheel[col:col + bm, 0] = np.floor(255 * np.arange(bm) / bm)
    col += bm
    wheel[col:col + mr, 2] = 255 - np.floor(255 * np.arange(mr) / mr)
    wheel[col:col + mr, 0] = 255
    return wheel


def flow_to_color(flow: FlowField, max_mag: Optional[float] = None) -> np.ndarray:
    """Hue from direction, saturation from magnitude / max_mag (99th percentile when omitted)."""
    mag = flow.magnitude()
    if max_mag is None:
        max_mag = float(np.percentile(mag, 99))
    if max_mag <= 0:
        max_mag = 1.0
    u = flow.u / max_mag
    v = flow.v / max_mag
    rad = np.hypot(u, v)

    wheel = make_colorwheel()
    ncols = wheel.shape[0]
    angle = np.arctan2(-v, -u) / np.pi
    fk = (angle + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = k0 + 1
    k1[k1 == ncols] = 0
    f = fk - k0

    out = np.empty(flow.shape + (3,))
    for ch in range(3):
        col = ((1.0 - f) * wheel[k0, ch] + f * wheel[k1, ch]) / 255.0
        inside = rad <= 1.0
        col = np.where(inside, 1.0 - rad * (1.0 - col), col * 0.75)
        out[:, :, ch] = col
    return np.clip(out, 0.0, 1.0)
