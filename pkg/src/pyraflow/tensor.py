"""Dense tensor kernels for (channels, height, width) float32 maps.

Every network block in this package is built from the handful of
operations defined here.  Conventions that tests and golden files rely on:

* layout is channel-major / row-major, batch dimension omitted (batch 1),
* compute dtype is float32 everywhere,
* padding is zero-fill,
* resizing uses the align-corners=False convention
  (source coordinate = (i + 0.5) * scale - 0.5, edge-clamped) and is
  implemented in lerp form ``a + f * (b - a)`` so that same-size resizes
  and constant inputs reproduce bit-identical values.

All functions are pure: they never mutate their inputs and identical
inputs yield bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Largest im2col scratch buffer (bytes) before conv2d falls back to
# processing output rows in chunks.  Chunking does not change results.
_IM2COL_CHUNK_BYTES = 128 * 1024 * 1024


class ShapeError(ValueError):
    """Raised when tensor shapes violate an operation's contract."""


def check_chw(x: np.ndarray, name: str = "input") -> np.ndarray:
    if x.ndim != 3:
        raise ShapeError(f"{name} must be rank-3 (C,H,W), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} dimensions must all be >= 1, got {x.shape}")
    return np.ascontiguousarray(x, dtype=np.float32)


@dataclass(frozen=True)
class ConvParams:
    """Parameters of a 2-D convolution: kernel (out_ch, in_ch, kh, kw)."""

    kernel: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float32)
        if k.ndim != 4:
            raise ShapeError(f"kernel must be rank-4, got shape {k.shape}")
        if k.shape[2] % 2 == 0 or k.shape[3] % 2 == 0:
            raise ShapeError(f"kernel spatial dims must be odd, got {k.shape[2:]}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")
        object.__setattr__(self, "kernel", k)
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float32)
            if b.shape != (k.shape[0],):
                raise ShapeError(
                    f"bias shape {b.shape} does not match out_ch {k.shape[0]}"
                )
            object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]


def conv_output_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int, dilation: int):
    """Strided sliding windows of a padded (C,H,W) array.

    Returns a view of shape (C, Ho, Wo, kh, kw); no data is copied.
    """
    c, h, w = x.shape
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"convolution output would be {ho}x{wo} for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, pad {padding}, dilation {dilation}"
        )
    if padding:
        xp = np.zeros((c, h + 2 * padding, w + 2 * padding), dtype=np.float32)
        xp[:, padding:-padding, padding:-padding] = x
    else:
        xp = x
    span_h = dilation * (kh - 1) + 1
    span_w = dilation * (kw - 1) + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (span_h, span_w), axis=(1, 2))
    win = win[:, ::stride, ::stride, ::dilation, ::dilation]
    return win[:, :ho, :wo], ho, wo


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Standard 2-D convolution (cross-correlation) with zero padding."""
    x = check_chw(x)
    out_ch, in_ch, kh, kw = p.kernel.shape
    if in_ch != x.shape[0]:
        raise ShapeError(
            f"kernel expects {in_ch} input channels, tensor has {x.shape[0]}"
        )
    win, ho, wo = _windows(x, kh, kw, p.stride, p.padding, p.dilation)
    kmat = p.kernel.reshape(out_ch, in_ch * kh * kw)

    # win is a view; materializing it costs in_ch*kh*kw*ho*wo floats.  For
    # large maps process output rows in chunks to bound scratch memory.
    bytes_full = in_ch * kh * kw * ho * wo * 4
    if bytes_full <= _IM2COL_CHUNK_BYTES:
        cols = win.transpose(0, 3, 4, 1, 2).reshape(in_ch * kh * kw, ho * wo)
        out = (kmat @ cols).reshape(out_ch, ho, wo)
    else:
        rows = max(1, _IM2COL_CHUNK_BYTES // max(1, in_ch * kh * kw * wo * 4))
        out = np.empty((out_ch, ho, wo), dtype=np.float32)
        for r0 in range(0, ho, rows):
            r1 = min(ho, r0 + rows)
            cols = win[:, r0:r1].transpose(0, 3, 4, 1, 2)
            cols = cols.reshape(in_ch * kh * kw, (r1 - r0) * wo)
            out[:, r0:r1] = (kmat @ cols).reshape(out_ch, r1 - r0, wo)
    if p.bias is not None:
        out = out + p.bias[:, None, None]
    return out


def depthwise_conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> np.ndarray:
    """Per-channel convolution; kernel shape (channels, 1, kh, kw)."""
    x = check_chw(x)
    k = np.asarray(kernel, dtype=np.float32)
    if k.ndim != 4 or k.shape[1] != 1:
        raise ShapeError(f"depthwise kernel must be (C,1,kh,kw), got {k.shape}")
    if k.shape[0] != x.shape[0]:
        raise ShapeError(
            f"depthwise kernel has {k.shape[0]} channels, tensor has {x.shape[0]}"
        )
    kh, kw = k.shape[2], k.shape[3]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel spatial dims must be odd, got {(kh, kw)}")
    win, ho, wo = _windows(x, kh, kw, stride, padding, dilation)
    out = np.einsum("chwij,cij->chw", win, k[:, 0], optimize=True)
    out = np.ascontiguousarray(out, dtype=np.float32)
    if bias is not None:
        b = np.asarray(bias, dtype=np.float32)
        if b.shape != (x.shape[0],):
            raise ShapeError(f"bias shape {b.shape} does not match {x.shape[0]} channels")
        out = out + b[:, None, None]
    return out


ACTIVATIONS = ("linear", "relu", "relu6", "leaky_relu", "hard_sigmoid", "hard_swish")


def apply_activation(x: np.ndarray, kind: str, alpha: float = 0.1) -> np.ndarray:
    """Elementwise activation.  ``leaky_relu`` uses slope ``alpha`` (default 0.1)."""
    x = np.asarray(x, dtype=np.float32)
    if kind == "linear":
        return x
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "relu6":
        return np.clip(x, 0.0, 6.0)
    if kind == "leaky_relu":
        return np.where(x >= 0.0, x, np.float32(alpha) * x)
    if kind == "hard_sigmoid":
        return np.clip((x + np.float32(3.0)) / np.float32(6.0), 0.0, 1.0)
    if kind == "hard_swish":
        return x * np.clip((x + np.float32(3.0)) / np.float32(6.0), 0.0, 1.0)
    raise ValueError(f"unknown activation {kind!r}")


def _lerp(a: np.ndarray, b: np.ndarray, f: np.ndarray) -> np.ndarray:
    # a + f*(b-a): exact when f == 0 or a == b, which makes same-size
    # resizes the identity and keeps constant fields constant.
    return a + f * (b - a)


def _resize_axis_coords(out_size: int, in_size: int):
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = (src - lo).astype(np.float32)
    return lo, hi, frac


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize, align-corners=False, edge-clamped."""
    x = check_chw(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be >= 1, got {(out_h, out_w)}")
    c, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return x.copy()
    y0, y1, fy = _resize_axis_coords(out_h, h)
    x0, x1, fx = _resize_axis_coords(out_w, w)
    rows0 = x[:, y0, :]
    rows1 = x[:, y1, :]
    top = _lerp(rows0[:, :, x0], rows0[:, :, x1], fx[None, None, :])
    bot = _lerp(rows1[:, :, x0], rows1[:, :, x1], fx[None, None, :])
    return _lerp(top, bot, fy[None, :, None]).astype(np.float32, copy=False)


def pad2d(x: np.ndarray, pads: tuple[int, int, int, int]) -> np.ndarray:
    """Zero padding; ``pads`` is (top, bottom, left, right)."""
    x = check_chw(x)
    top, bottom, left, right = pads
    if min(pads) < 0:
        raise ValueError(f"pads must be >= 0, got {pads}")
    if not any(pads):
        return x.copy()
    c, h, w = x.shape
    out = np.zeros((c, h + top + bottom, w + left + right), dtype=np.float32)
    out[:, top:top + h, left:left + w] = x
    return out


def crop2d(x: np.ndarray, pads: tuple[int, int, int, int]) -> np.ndarray:
    """Inverse of :func:`pad2d` for the same ``pads``."""
    x = check_chw(x)
    top, bottom, left, right = pads
    c, h, w = x.shape
    return x[:, top:h - bottom, left:w - right].copy()


def fold_batchnorm(
    p: ConvParams,
    gamma: np.ndarray,
    beta: np.ndarray,
    mean: np.ndarray,
    var: np.ndarray,
    eps: float = 1e-5,
) -> ConvParams:
    """Fold batch-norm statistics into convolution weights.

    forward(folded)(x) == batchnorm(forward(p)(x)) for every input.
    """
    out_ch = p.out_channels
    gamma, beta, mean, var = (
        np.asarray(v, dtype=np.float64).reshape(-1) for v in (gamma, beta, mean, var)
    )
    for name, v in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if v.shape != (out_ch,):
            raise ShapeError(f"{name} must have length {out_ch}, got {v.shape}")
    if np.any(var + eps <= 0.0):
        raise ValueError("var + eps must be positive for every channel")
    scale = gamma / np.sqrt(var + eps)
    kernel = (p.kernel.astype(np.float64) * scale[:, None, None, None]).astype(np.float32)
    bias0 = p.bias.astype(np.float64) if p.bias is not None else np.zeros(out_ch)
    bias = ((bias0 - mean) * scale + beta).astype(np.float32)
    return ConvParams(kernel, bias, p.stride, p.padding, p.dilation)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Global average pool to shape (C, 1, 1)."""
    x = check_chw(x)
    return x.mean(axis=(1, 2), dtype=np.float64).astype(np.float32)[:, None, None]


def avg_pool(x: np.ndarray, factor: int) -> np.ndarray:
    """Non-overlapping average pooling by an exact integer factor."""
    x = check_chw(x)
    c, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"spatial dims {(h, w)} not divisible by pool factor {factor}")
    v = x.reshape(c, h // factor, factor, w // factor, factor)
    return v.mean(axis=(2, 4), dtype=np.float64).astype(np.float32)
