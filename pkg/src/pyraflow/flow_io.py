"""Flow file formats (.flo, 16-bit flow PNG), image ingestion, and
flow-to-color rendering.

.flo layout: float32 magic 202021.25, int32 width, int32 height, then
row-major interleaved (u, v) float32 pairs; everything little-endian.

Flow PNG layout: 16-bit 3-channel PNG storing round(64 * value + 2^15)
in channels (u, v) with channel 3 as a 0/1 validity mask; decoding
inverts the mapping, so 1/64-multiples round-trip exactly and arbitrary
in-range values round-trip within 1/128 px.
"""

from __future__ import annotations

import struct

import cv2
import numpy as np

from .flow_ops import FlowField
from .tensor import ShapeError

FLO_MAGIC = np.float32(202021.25)
PNG_OFFSET = 2 ** 15
PNG_SCALE = 64.0
PNG_MAX_ABS = (2 ** 16 - 1 - PNG_OFFSET) / PNG_SCALE  # 511.98 px


class FlowFileError(ValueError):
    """Raised for malformed flow files."""


def write_flo(flow: FlowField) -> bytes:
    f = flow.flow
    if not np.isfinite(f).all():
        raise ValueError("flow contains non-finite values")
    h, w = flow.shape
    body = np.empty((h, w, 2), dtype="<f4")
    body[:, :, 0] = f[0]
    body[:, :, 1] = f[1]
    return struct.pack("<fii", float(FLO_MAGIC), w, h) + body.tobytes()


def read_flo(data: bytes) -> FlowField:
    if len(data) < 12:
        raise FlowFileError("truncated stream: missing header")
    magic, w, h = struct.unpack("<fii", data[:12])
    if np.float32(magic) != FLO_MAGIC:
        raise FlowFileError(f"bad magic {magic!r}: not a .flo stream")
    if w < 1 or h < 1:
        raise FlowFileError(f"invalid dimensions {w}x{h}")
    expected = 12 + 8 * w * h
    if len(data) < expected:
        raise FlowFileError(
            f"truncated payload: need {expected} bytes, have {len(data)}"
        )
    if len(data) > expected:
        raise FlowFileError(f"{len(data) - expected} trailing bytes")
    body = np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w, 2)
    return FlowField(np.stack([body[:, :, 0], body[:, :, 1]]))


def write_kitti_png(flow: FlowField) -> bytes:
    f = flow.flow
    if float(np.abs(f).max(initial=0.0)) > PNG_MAX_ABS:
        raise ValueError(
            f"flow values exceed the encodable range of +-{PNG_MAX_ABS:.2f} px"
        )
    h, w = flow.shape
    stored = np.rint(f.astype(np.float64) * PNG_SCALE + PNG_OFFSET)
    if stored.min() < 0 or stored.max() > 0xFFFF:
        raise ValueError("flow values exceed the encodable range")
    valid = np.ones((h, w), dtype=np.uint16) if flow.valid is None else flow.valid.astype(np.uint16)
    img = np.zeros((h, w, 3), dtype=np.uint16)
    img[:, :, 0] = stored[0]
    img[:, :, 1] = stored[1]
    img[:, :, 2] = valid
    # OpenCV writes BGR; reverse so the file stores (u, v, valid) in RGB.
    ok, buf = cv2.imencode(".png", img[:, :, ::-1])
    if not ok:
        raise FlowFileError("png encoding failed")
    return buf.tobytes()


def read_kitti_png(data: bytes) -> FlowField:
    img = cv2.imdecode(np.frombuffer(data, np.uint8), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FlowFileError("not a decodable png stream")
    if img.dtype != np.uint16:
        raise FlowFileError(f"wrong bit depth {img.dtype}, expected uint16")
    if img.ndim != 3 or img.shape[2] != 3:
        raise FlowFileError("expected a 3-channel flow png")
    img = img[:, :, ::-1]  # BGR -> RGB
    u = (img[:, :, 0].astype(np.float64) - PNG_OFFSET) / PNG_SCALE
    v = (img[:, :, 1].astype(np.float64) - PNG_OFFSET) / PNG_SCALE
    valid = img[:, :, 2] > 0
    flow = np.stack([u, v]).astype(np.float32)
    flow[:, ~valid] = 0.0
    return FlowField(flow, valid)


def read_image(path: str) -> np.ndarray:
    """8-bit PNG/PPM image as float32 (3,H,W) in [0, 1]; no mean subtraction."""
    img = cv2.imread(path, cv2.IMREAD_COLOR)
    if img is None:
        raise FlowFileError(f"cannot read image {path!r}")
    rgb = img[:, :, ::-1].astype(np.float32) / 255.0
    return np.ascontiguousarray(rgb.transpose(2, 0, 1))


def write_image(path: str, img: np.ndarray) -> None:
    """Save a (3,H,W) float image in [0, 1] as 8-bit PNG."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"image must be (3,H,W), got {img.shape}")
    arr = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    if not cv2.imwrite(path, arr[:, :, ::-1]):
        raise FlowFileError(f"cannot write image {path!r}")


def make_colorwheel() -> np.ndarray:
    """55-bin color wheel over six hue segments (RY/YG/GC/CB/BM/MR),
    values in [0, 255]."""
    # (bins, channel held at 255, channel that ramps, ramp direction)
    segments = (
        (15, 0, 1, +1),  # red -> yellow: G ramps up
        (6, 1, 0, -1),   # yellow -> green: R ramps down
        (4, 1, 2, +1),   # green -> cyan: B ramps up
        (11, 2, 1, -1),  # cyan -> blue: G ramps down
        (13, 2, 0, +1),  # blue -> magenta: R ramps up
        (6, 0, 2, -1),   # magenta -> red: B ramps down
    )
    rows = []
    for count, hold, ramp_ch, direction in segments:
        ramp = np.floor(255.0 * np.arange(count) / count)
        seg = np.zeros((count, 3))
        seg[:, hold] = 255.0
        seg[:, ramp_ch] = ramp if direction > 0 else 255.0 - ramp
        rows.append(seg)
    return np.concatenate(rows)


_COLORWHEEL = make_colorwheel()


def flow_to_color(flow: FlowField, max_rad: float | None = None) -> np.ndarray:
    """Color-wheel rendering as a (3,H,W) float image in [0, 1].

    Hue encodes direction, saturation encodes magnitude normalized by
    ``max_rad`` (the field's own maximum when absent); zero flow is white.
    """
    u = flow.u.astype(np.float64)
    v = flow.v.astype(np.float64)
    rad = np.sqrt(u ** 2 + v ** 2)
    if max_rad is None:
        max_rad = float(rad.max())
    if max_rad <= 0.0:
        max_rad = 1.0
    r = rad / max_rad

    ncols = _COLORWHEEL.shape[0]
    angle = np.arctan2(-v, -u) / np.pi  # [-1, 1]
    fk = (angle + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(np.int64)
    k1 = (k0 + 1) % ncols
    f = fk - k0

    img = np.empty((3, *flow.shape), dtype=np.float64)
    for c in range(3):
        col0 = _COLORWHEEL[k0, c] / 255.0
        col1 = _COLORWHEEL[k1, c] / 255.0
        col = (1.0 - f) * col0 + f * col1
        inside = r <= 1.0
        col = np.where(inside, 1.0 - r * (1.0 - col), col * 0.75)
        img[c] = col
    return np.clip(img, 0.0, 1.0).astype(np.float32)
