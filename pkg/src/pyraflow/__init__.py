"""Inference engine and benchmark toolkit for pyramidal optical flow networks."""

from .flow_ops import FlowField, correlation, scale_flow, upsample_flow2x, warp
from .model import (
    ModelSpec,
    build_model,
    count_flops,
    count_params,
    extract_pyramid,
    forward,
    init_weights,
    parameter_manifest,
)
from .tensor import ConvParams, apply_activation, bilinear_resize, conv2d, depthwise_conv2d, fold_batchnorm, pad2d
from .weights import WeightStore, fingerprint, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "ConvParams",
    "FlowField",
    "ModelSpec",
    "WeightStore",
    "apply_activation",
    "bilinear_resize",
    "build_model",
    "conv2d",
    "correlation",
    "count_flops",
    "count_params",
    "depthwise_conv2d",
    "extract_pyramid",
    "fingerprint",
    "fold_batchnorm",
    "forward",
    "init_weights",
    "load_weights",
    "pad2d",
    "parameter_manifest",
    "save_weights",
    "scale_flow",
    "upsample_flow2x",
    "warp",
]
