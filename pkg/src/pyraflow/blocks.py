"""Composite layers: plain conv blocks, depthwise-separable blocks, and
inverted-residual blocks with optional squeeze-excitation gating.

Each block declares the exact set of named tensors it consumes, so the
same description drives initialization, parameter counting, MAC counting
and the forward pass.  Batch-norm never appears here: stores are expected
to carry folded weights (see :func:`pyraflow.tensor.fold_batchnorm`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ConvParams,
    ShapeError,
    apply_activation,
    conv2d,
    conv_output_size,
    depthwise_conv2d,
    global_avg_pool,
)

SE_REDUCTION = 4
LEAKY_SLOPE = 0.1

BLOCK_KINDS = ("conv", "ds_conv", "inverted_residual")


class MissingWeightError(KeyError):
    """Raised when a forward pass cannot find a named tensor."""

    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"missing weight tensor {self.name!r}"


def make_divisible(v: float, divisor: int = 8) -> int:
    """Round channel counts the way the mobile backbone family does."""
    new_v = max(divisor, int(v + divisor / 2) // divisor * divisor)
    if new_v < 0.9 * v:
        new_v += divisor
    return new_v


@dataclass(frozen=True)
class BlockSpec:
    name: str
    kind: str
    in_ch: int
    out_ch: int
    kernel: int = 3
    stride: int = 1
    dilation: int = 1
    activation: str = "leaky_relu"
    expand_ratio: float = 1.0
    use_se: bool = False

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.kernel}")
        if self.kind == "inverted_residual" and self.expand_ratio < 1:
            raise ValueError("expand_ratio must be >= 1 for inverted_residual")

    @property
    def padding(self) -> int:
        return self.dilation * (self.kernel - 1) // 2

    @property
    def hidden_ch(self) -> int:
        return int(round(self.in_ch * self.expand_ratio))

    @property
    def se_ch(self) -> int:
        return make_divisible(self.hidden_ch // SE_REDUCTION)

    @property
    def has_skip(self) -> bool:
        return (
            self.kind == "inverted_residual"
            and self.stride == 1
            and self.in_ch == self.out_ch
        )


def param_entries(spec: BlockSpec) -> list[tuple[str, tuple[int, ...], int]]:
    """Named tensors of a block as (name, shape, fan_in) triples."""
    n, k = spec.name, spec.kernel
    if spec.kind == "conv":
        fan = spec.in_ch * k * k
        return [
            (f"{n}.weight", (spec.out_ch, spec.in_ch, k, k), fan),
            (f"{n}.bias", (spec.out_ch,), fan),
        ]
    if spec.kind == "ds_conv":
        return [
            (f"{n}.dw.weight", (spec.in_ch, 1, k, k), k * k),
            (f"{n}.dw.bias", (spec.in_ch,), k * k),
            (f"{n}.pw.weight", (spec.out_ch, spec.in_ch, 1, 1), spec.in_ch),
            (f"{n}.pw.bias", (spec.out_ch,), spec.in_ch),
        ]
    hidden, se = spec.hidden_ch, spec.se_ch
    entries = []
    if hidden != spec.in_ch:
        entries += [
            (f"{n}.expand.weight", (hidden, spec.in_ch, 1, 1), spec.in_ch),
            (f"{n}.expand.bias", (hidden,), spec.in_ch),
        ]
    entries += [
        (f"{n}.dw.weight", (hidden, 1, k, k), k * k),
        (f"{n}.dw.bias", (hidden,), k * k),
    ]
    if spec.use_se:
        entries += [
            (f"{n}.se.reduce.weight", (se, hidden, 1, 1), hidden),
            (f"{n}.se.reduce.bias", (se,), hidden),
            (f"{n}.se.expand.weight", (hidden, se, 1, 1), se),
            (f"{n}.se.expand.bias", (hidden,), se),
        ]
    entries += [
        (f"{n}.project.weight", (spec.out_ch, hidden, 1, 1), hidden),
        (f"{n}.project.bias", (spec.out_ch,), hidden),
    ]
    return entries


def param_count(spec: BlockSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in param_entries(spec))


def output_hw(spec: BlockSpec, h: int, w: int) -> tuple[int, int]:
    k, s, d, p = spec.kernel, spec.stride, spec.dilation, spec.padding
    return conv_output_size(h, k, s, p, d), conv_output_size(w, k, s, p, d)


def block_macs(spec: BlockSpec, h: int, w: int) -> int:
    """Multiply-accumulates of one forward through the block.

    Convention: conv/pointwise/depthwise MACs only; biases, activations and
    pooling are excluded; the squeeze-excitation gate counts one multiply
    per element.
    """
    ho, wo = output_hw(spec, h, w)
    k = spec.kernel
    if spec.kind == "conv":
        return k * k * spec.in_ch * spec.out_ch * ho * wo
    if spec.kind == "ds_conv":
        return (k * k * spec.in_ch + spec.in_ch * spec.out_ch) * ho * wo
    hidden = spec.hidden_ch
    macs = 0
    if hidden != spec.in_ch:
        macs += spec.in_ch * hidden * h * w
    macs += k * k * hidden * ho * wo
    if spec.use_se:
        macs += 2 * hidden * spec.se_ch  # two 1x1 convs on the pooled vector
        macs += hidden * ho * wo  # channel gate
    macs += hidden * spec.out_ch * ho * wo
    return macs


def _fetch(weights, name: str) -> np.ndarray:
    if name not in weights:
        raise MissingWeightError(name)
    return weights.get(name)


def _conv(x, weights, name, k, stride, dilation, out_ch=None):
    kernel = _fetch(weights, f"{name}.weight")
    bias = _fetch(weights, f"{name}.bias")
    pad = dilation * (k - 1) // 2
    return conv2d(x, ConvParams(kernel, bias, stride, pad, dilation))


def conv_forward(x: np.ndarray, spec: BlockSpec, weights) -> np.ndarray:
    out = _conv(x, weights, spec.name, spec.kernel, spec.stride, spec.dilation)
    return apply_activation(out, spec.activation, LEAKY_SLOPE)


def ds_conv_forward(x: np.ndarray, spec: BlockSpec, weights) -> np.ndarray:
    """Depthwise k×k then pointwise 1×1, activation after each stage."""
    if spec.kind != "ds_conv":
        raise ValueError(f"block {spec.name!r} is not a ds_conv")
    dw_k = _fetch(weights, f"{spec.name}.dw.weight")
    dw_b = _fetch(weights, f"{spec.name}.dw.bias")
    out = depthwise_conv2d(x, dw_k, dw_b, spec.stride, spec.padding, spec.dilation)
    out = apply_activation(out, spec.activation, LEAKY_SLOPE)
    pw_k = _fetch(weights, f"{spec.name}.pw.weight")
    pw_b = _fetch(weights, f"{spec.name}.pw.bias")
    out = conv2d(out, ConvParams(pw_k, pw_b, 1, 0, 1))
    return apply_activation(out, spec.activation, LEAKY_SLOPE)


def squeeze_excitation(x: np.ndarray, name: str, weights) -> np.ndarray:
    """Global pool -> 1×1 reduce + relu -> 1×1 expand + hard_sigmoid -> rescale."""
    pooled = global_avg_pool(x)
    r = conv2d(pooled, ConvParams(_fetch(weights, f"{name}.reduce.weight"),
                                  _fetch(weights, f"{name}.reduce.bias")))
    r = apply_activation(r, "relu")
    e = conv2d(r, ConvParams(_fetch(weights, f"{name}.expand.weight"),
                             _fetch(weights, f"{name}.expand.bias")))
    gate = apply_activation(e, "hard_sigmoid")
    return x * gate


def inverted_residual_forward(x: np.ndarray, spec: BlockSpec, weights) -> np.ndarray:
    """1×1 expand -> depthwise k×k -> optional SE -> linear 1×1 project,
    with an identity skip iff stride == 1 and in_ch == out_ch."""
    if spec.kind != "inverted_residual":
        raise ValueError(f"block {spec.name!r} is not an inverted_residual")
    if x.shape[0] != spec.in_ch:
        raise ShapeError(
            f"block {spec.name!r} expects {spec.in_ch} channels, got {x.shape[0]}"
        )
    out = x
    if spec.hidden_ch != spec.in_ch:
        out = _conv(out, weights, f"{spec.name}.expand", 1, 1, 1)
        out = apply_activation(out, spec.activation, LEAKY_SLOPE)
    dw_k = _fetch(weights, f"{spec.name}.dw.weight")
    dw_b = _fetch(weights, f"{spec.name}.dw.bias")
    out = depthwise_conv2d(out, dw_k, dw_b, spec.stride, spec.padding, spec.dilation)
    out = apply_activation(out, spec.activation, LEAKY_SLOPE)
    if spec.use_se:
        out = squeeze_excitation(out, f"{spec.name}.se", weights)
    out = _conv(out, weights, f"{spec.name}.project", 1, 1, 1)
    if spec.has_skip:
        out = out + x
    return out


def block_forward(x: np.ndarray, spec: BlockSpec, weights) -> np.ndarray:
    if spec.kind == "conv":
        return conv_forward(x, spec, weights)
    if spec.kind == "ds_conv":
        return ds_conv_forward(x, spec, weights)
    return inverted_residual_forward(x, spec, weights)
