"""Flow-specific primitives: backward warping, cost volumes, flow resampling.

A flow field stores per-pixel (u, v) displacements in pixels of its own
resolution: channel 0 moves along x (width), channel 1 along y (height).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, _lerp, bilinear_resize, check_chw


@dataclass
class FlowField:
    """2-channel displacement field with an optional validity mask."""

    flow: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        f = np.asarray(self.flow, dtype=np.float32)
        if f.ndim != 3 or f.shape[0] != 2:
            raise ShapeError(f"flow must have shape (2,H,W), got {f.shape}")
        self.flow = np.ascontiguousarray(f)
        if self.valid is not None:
            v = np.asarray(self.valid).astype(bool)
            if v.shape != f.shape[1:]:
                raise ShapeError(
                    f"valid mask shape {v.shape} does not match flow {f.shape[1:]}"
                )
            self.valid = v

    @property
    def shape(self) -> tuple[int, int]:
        return self.flow.shape[1], self.flow.shape[2]

    @property
    def u(self) -> np.ndarray:
        return self.flow[0]

    @property
    def v(self) -> np.ndarray:
        return self.flow[1]


def warp(features: np.ndarray, flow: FlowField) -> np.ndarray:
    """Backward bilinear warp: out[c,y,x] = features[c, y+v[y,x], x+u[y,x]].

    Sample taps that fall outside the image contribute zero.  A zero flow
    reproduces the input bit-for-bit.
    """
    features = check_chw(features, "features")
    c, h, w = features.shape
    if flow.shape != (h, w):
        raise ShapeError(f"flow {flow.shape} does not match features {(h, w)}")

    gx = np.arange(w, dtype=np.float64)[None, :] + flow.u.astype(np.float64)
    gy = np.arange(h, dtype=np.float64)[:, None] + flow.v.astype(np.float64)

    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx = (gx - x0).astype(np.float32)
    fy = (gy - y0).astype(np.float32)
    x1, y1 = x0 + 1, y0 + 1

    def tap(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        yc = np.clip(yy, 0, h - 1)
        xc = np.clip(xx, 0, w - 1)
        vals = features[:, yc, xc]
        return np.where(inside[None], vals, np.float32(0.0))

    top = _lerp(tap(y0, x0), tap(y0, x1), fx[None])
    bot = _lerp(tap(y1, x0), tap(y1, x1), fx[None])
    return _lerp(top, bot, fy[None]).astype(np.float32, copy=False)


def correlation(f1: np.ndarray, f2: np.ndarray, max_displacement: int) -> np.ndarray:
    """Local cost volume over a (2d+1)^2 displacement window.

    Channel k holds displacement (dy, dx) = (k // (2d+1) - d, k % (2d+1) - d)
    with value mean_c f1[c,y,x] * f2[c, y+dy, x+dx]; out-of-bounds samples of
    f2 count as zero.
    """
    f1 = check_chw(f1, "f1")
    f2 = check_chw(f2, "f2")
    if f1.shape != f2.shape:
        raise ShapeError(f"feature shapes differ: {f1.shape} vs {f2.shape}")
    if max_displacement < 0:
        raise ValueError("max_displacement must be >= 0")
    c, h, w = f1.shape
    d = max_displacement
    side = 2 * d + 1
    f2p = np.zeros((c, h + 2 * d, w + 2 * d), dtype=np.float32)
    f2p[:, d:d + h, d:d + w] = f2
    out = np.empty((side * side, h, w), dtype=np.float32)
    inv_c = np.float32(1.0 / c)
    for k in range(side * side):
        dy, dx = k // side - d, k % side - d
        shifted = f2p[:, d + dy:d + dy + h, d + dx:d + dx + w]
        out[k] = np.einsum("chw,chw->hw", f1, shifted, optimize=True) * inv_c
    return out


def cost_volume_channels(max_displacement: int) -> int:
    return (2 * max_displacement + 1) ** 2


def upsample_flow2x(flow: FlowField) -> FlowField:
    """Double the resolution and the displacement values of a flow field."""
    h, w = flow.shape
    up = bilinear_resize(flow.flow, 2 * h, 2 * w) * np.float32(2.0)
    return FlowField(up)


def scale_flow(flow: FlowField, s: float) -> FlowField:
    """Multiply both displacement channels by ``s``; the mask is unchanged."""
    return FlowField(flow.flow * np.float32(s), flow.valid)


def resize_flow(flow: FlowField, out_h: int, out_w: int) -> FlowField:
    """Resize to an arbitrary shape, rescaling displacements to the new grid."""
    h, w = flow.shape
    up = bilinear_resize(flow.flow, out_h, out_w)
    up[0] *= np.float32(out_w / w)
    up[1] *= np.float32(out_h / h)
    return FlowField(up)
