"""Model assembly, the coarse-to-fine forward pass, and parameter/MAC
accounting for the three pyramid flow variants.

Variants
--------
``pwcnet_plus``      conv pyramid (16/32/64/96/128/196, three convs per
                     level), densely connected standard-conv estimator
                     (128/128/96/64/32), seven-layer dilated refiner.
``pwcnet_small``     same, but the estimator passes features sequentially
                     (no dense concatenation) and the refiner reads the
                     estimator's final 32-channel feature.
``compactflownet``   MobileNetV3-Large pyramid adapter, sequential
                     depthwise-separable estimator, four-layer
                     depthwise-separable refiner (128/64/32/2).

Unit conventions: per-level flows are expressed in pixels of their own
grid divided by ``div_flow``; warping multiplies by ``warp_scale``
(default ``div_flow``) to recover true pixel displacements, and the final
full-resolution field is the level-2 flow scaled by ``div_flow``,
bilinearly upsampled x4 with values scaled x4.

MAC/FLOP accounting: ``count_flops`` reports both fused multiply-accumulate
counts (``macs``) and ``flops = 2 * macs`` per block and per stage.  The
feature-extractor stage is counted for a single frame (a forward pass runs
it twice); biases and activations are excluded; correlation, warping and
resampling are included under the estimator stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mobilenet
from .blocks import (
    BlockSpec,
    block_forward,
    block_macs,
    output_hw,
    param_count,
    param_entries,
)
from .flow_ops import (
    FlowField,
    correlation,
    cost_volume_channels,
    scale_flow,
    upsample_flow2x,
    warp,
)
from .tensor import ShapeError, apply_activation, bilinear_resize
from .weights import WeightStore, init_deterministic

VARIANTS = ("pwcnet_plus", "pwcnet_small", "compactflownet")

PYRAMID_CHANNELS = (16, 32, 64, 96, 128, 196)
ESTIMATOR_CHANNELS = (128, 128, 96, 64, 32)
REFINER_CHANNELS = {"seven": (128, 128, 128, 96, 64, 32, 2), "four": (128, 64, 32, 2)}
REFINER_DILATIONS = {"seven": (1, 2, 4, 8, 16, 1, 1), "four": (1, 2, 4, 1)}

ESTIMATOR_LEVELS = (6, 5, 4, 3, 2)
STRIDE_ALIGN = 64

_STAGES = ("feature_extractor", "flow_estimator", "flow_refiner")


class UnknownVariantError(ValueError):
    pass


class UnknownOverrideError(ValueError):
    pass


@dataclass(frozen=True)
class PyramidSpec:
    kind: str  # "conv" | "mobilenet"
    channels: tuple[int, ...]
    blocks: tuple[BlockSpec, ...]
    taps: dict[int, int] | None = None  # level -> block index (mobilenet)
    projections: tuple[BlockSpec, ...] = ()


@dataclass(frozen=True)
class EstimatorSpec:
    level: int
    connectivity: str  # "dense" | "sequential"
    conv_kind: str  # "standard" | "depthwise_separable"
    layer_channels: tuple[int, ...]
    in_static: int  # cost volume + pyramid features
    in_cond: int  # upsampled flow + upsampled estimator feature
    blocks: tuple[BlockSpec, ...] = ()
    pred: BlockSpec | None = None
    upfeat: BlockSpec | None = None

    @property
    def in_channels(self) -> int:
        return self.in_static + self.in_cond

    @property
    def tail_channels(self) -> int:
        """Channels of the estimator's final feature map."""
        if self.connectivity == "dense":
            return self.in_channels + sum(self.layer_channels)
        return self.layer_channels[-1]


@dataclass(frozen=True)
class RefinerSpec:
    depth: str  # "seven" | "four"
    conv_kind: str
    channels: tuple[int, ...]
    dilations: tuple[int, ...]
    in_channels: int
    blocks: tuple[BlockSpec, ...] = ()


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    corr_radius: int
    div_flow: float
    warp_scale: float
    pyramid: PyramidSpec
    estimators: dict[int, EstimatorSpec]
    refiner: RefinerSpec

    def all_blocks(self) -> list[BlockSpec]:
        out = list(self.pyramid.blocks) + list(self.pyramid.projections)
        for level in ESTIMATOR_LEVELS:
            est = self.estimators[level]
            out += list(est.blocks)
            out.append(est.pred)
            if est.upfeat is not None:
                out.append(est.upfeat)
        out += list(self.refiner.blocks)
        return out


def _block_kind(conv_kind: str) -> str:
    return "conv" if conv_kind == "standard" else "ds_conv"


def _conv_pyramid() -> PyramidSpec:
    blocks = []
    in_ch = 3
    for level, ch in enumerate(PYRAMID_CHANNELS, start=1):
        blocks.append(BlockSpec(f"pyr.l{level}.c0", "conv", in_ch, ch, stride=2))
        blocks.append(BlockSpec(f"pyr.l{level}.c1", "conv", ch, ch))
        blocks.append(BlockSpec(f"pyr.l{level}.c2", "conv", ch, ch))
        in_ch = ch
    return PyramidSpec("conv", PYRAMID_CHANNELS, tuple(blocks))


def _mobilenet_pyramid() -> PyramidSpec:
    blocks, taps = mobilenet.backbone_blocks()
    tap_ch = mobilenet.tap_channels()
    projections = tuple(
        BlockSpec(f"pyr.proj.l{level}", "conv", tap_ch[level],
                  PYRAMID_CHANNELS[level - 1], kernel=1)
        for level in range(1, 7)
    )
    return PyramidSpec("mobilenet", PYRAMID_CHANNELS, tuple(blocks), taps, projections)


def _build_estimator(level, connectivity, conv_kind, layer_channels, corr_radius):
    corr_ch = cost_volume_channels(corr_radius)
    in_static = corr_ch + (PYRAMID_CHANNELS[level - 1] if level < 6 else 0)
    in_cond = 4 if level < 6 else 0
    kind = _block_kind(conv_kind)
    blocks = []
    running = in_static + in_cond
    for i, ch in enumerate(layer_channels):
        if connectivity == "dense":
            in_ch = in_static + in_cond + sum(layer_channels[:i])
        else:
            in_ch = running if i == 0 else layer_channels[i - 1]
        blocks.append(BlockSpec(f"est.l{level}.c{i}", kind, in_ch, ch))
    tail = (in_static + in_cond + sum(layer_channels)
            if connectivity == "dense" else layer_channels[-1])
    pred = BlockSpec(f"est.l{level}.pred", "conv", tail, 2, activation="linear")
    upfeat = None
    if level > 2:
        upfeat = BlockSpec(f"est.l{level}.upfeat", "conv", tail, 2, kernel=1,
                           activation="linear")
    return EstimatorSpec(level, connectivity, conv_kind, tuple(layer_channels),
                         in_static, in_cond, tuple(blocks), pred, upfeat)


def _build_refiner(depth, conv_kind, channels, dilations, in_channels):
    if len(channels) != len(dilations):
        raise ValueError("refiner channels and dilations must have equal length")
    if depth == "four" and tuple(channels) != REFINER_CHANNELS["four"]:
        raise ValueError("four-layer refiner channels must be (128, 64, 32, 2)")
    kind = _block_kind(conv_kind)
    blocks = []
    in_ch = in_channels
    for i, (ch, dil) in enumerate(zip(channels, dilations)):
        act = "linear" if i == len(channels) - 1 else "leaky_relu"
        blocks.append(BlockSpec(f"ref.c{i}", kind, in_ch, ch, dilation=dil,
                                activation=act))
        in_ch = ch
    return RefinerSpec(depth, conv_kind, tuple(channels), tuple(dilations),
                       in_channels, tuple(blocks))


_VARIANT_DEFAULTS = {
    "pwcnet_plus": dict(backbone="conv", estimator_connectivity="dense",
                        estimator_conv_kind="standard", refiner_depth="seven",
                        refiner_conv_kind="standard"),
    "pwcnet_small": dict(backbone="conv", estimator_connectivity="sequential",
                         estimator_conv_kind="standard", refiner_depth="seven",
                         refiner_conv_kind="standard"),
    "compactflownet": dict(backbone="mobilenet", estimator_connectivity="sequential",
                           estimator_conv_kind="depthwise_separable",
                           refiner_depth="four",
                           refiner_conv_kind="depthwise_separable"),
}

_KNOWN_OVERRIDES = frozenset(
    ("backbone", "estimator_connectivity", "estimator_conv_kind",
     "estimator_channels", "refiner_depth", "refiner_conv_kind",
     "refiner_channels", "refiner_dilations", "corr_radius", "div_flow",
     "warp_scale")
)


def build_model(variant: str, **overrides) -> ModelSpec:
    """Assemble a ModelSpec for a named variant, with optional overrides.

    Unknown override keys raise :class:`UnknownOverrideError`.
    """
    if variant not in VARIANTS:
        raise UnknownVariantError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    unknown = set(overrides) - _KNOWN_OVERRIDES
    if unknown:
        raise UnknownOverrideError(f"unknown overrides: {sorted(unknown)}")
    cfg = dict(_VARIANT_DEFAULTS[variant])
    cfg.update({k: v for k, v in overrides.items() if k in cfg})

    corr_radius = int(overrides.get("corr_radius", 4))
    div_flow = float(overrides.get("div_flow", 20.0))
    warp_scale = float(overrides.get("warp_scale", div_flow))
    est_channels = tuple(overrides.get("estimator_channels", ESTIMATOR_CHANNELS))
    refiner_depth = cfg["refiner_depth"]
    ref_channels = tuple(overrides.get("refiner_channels",
                                       REFINER_CHANNELS[refiner_depth]))
    ref_dilations = tuple(overrides.get("refiner_dilations",
                                        REFINER_DILATIONS[refiner_depth]))

    pyramid = _conv_pyramid() if cfg["backbone"] == "conv" else _mobilenet_pyramid()
    estimators = {
        level: _build_estimator(level, cfg["estimator_connectivity"],
                                cfg["estimator_conv_kind"], est_channels, corr_radius)
        for level in ESTIMATOR_LEVELS
    }
    refiner = _build_refiner(refiner_depth, cfg["refiner_conv_kind"], ref_channels,
                             ref_dilations, estimators[2].tail_channels)
    spec = ModelSpec(variant, corr_radius, div_flow, warp_scale, pyramid,
                     estimators, refiner)
    names = [b.name for b in spec.all_blocks()]
    if len(names) != len(set(names)):
        raise ValueError("internal error: duplicate block names")
    return spec


def parameter_manifest(model: ModelSpec) -> list[tuple[str, tuple[int, ...], int]]:
    """Ordered (name, shape, fan_in) triples for every tensor of the model."""
    manifest = []
    for block in model.all_blocks():
        manifest.extend(param_entries(block))
    return manifest


def init_weights(model: ModelSpec, seed: int) -> WeightStore:
    """Deterministic fan-in uniform weights for the model (test fixtures)."""
    return init_deterministic(parameter_manifest(model), seed, model.variant)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


@dataclass
class FlowResult:
    flows: dict[int, FlowField]  # levels 6..2, own-grid units / div_flow
    final: FlowField  # input resolution, true pixels


def _check_image(img: np.ndarray, name: str) -> np.ndarray:
    img = np.ascontiguousarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"{name} must have shape (3,H,W), got {img.shape}")
    h, w = img.shape[1:]
    if h % STRIDE_ALIGN or w % STRIDE_ALIGN:
        raise ShapeError(
            f"{name} dimensions {h}x{w} must be divisible by {STRIDE_ALIGN}"
        )
    if float(img.min()) < 0.0 or float(img.max()) > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return img


def extract_pyramid(model: ModelSpec, image: np.ndarray, weights) -> dict[int, np.ndarray]:
    """Feature maps for levels 1..6; level l has spatial stride 2**l."""
    image = _check_image(image, "image")
    pyr = model.pyramid
    feats: dict[int, np.ndarray] = {}
    if pyr.kind == "conv":
        x = image
        for level in range(1, 7):
            for i in range(3):
                x = block_forward(x, pyr.blocks[(level - 1) * 3 + i], weights)
            feats[level] = x
        return feats
    x = image
    taps: dict[int, np.ndarray] = {}
    inv_taps = {idx: level for level, idx in pyr.taps.items()}
    for idx, block in enumerate(pyr.blocks):
        x = block_forward(x, block, weights)
        if idx in inv_taps:
            taps[inv_taps[idx]] = x
    for level in range(1, 7):
        feats[level] = block_forward(taps[level], pyr.projections[level - 1], weights)
    return feats


def _estimator_forward(est: EstimatorSpec, parts: list[np.ndarray], weights):
    """Run one level's estimator; returns (flow 2ch, final feature, upfeat or None)."""
    x0 = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)
    if est.connectivity == "dense":
        state = x0
        for block in est.blocks:
            y = block_forward(state, block, weights)
            state = np.concatenate([state, y], axis=0)
        feat = state
    else:
        y = x0
        for block in est.blocks:
            y = block_forward(y, block, weights)
        feat = y
    flow = block_forward(feat, est.pred, weights)
    upfeat = None
    if est.upfeat is not None:
        upfeat = block_forward(feat, est.upfeat, weights)
    return flow, feat, upfeat


def _refiner_forward(ref: RefinerSpec, feat: np.ndarray, weights) -> np.ndarray:
    y = feat
    for block in ref.blocks:
        y = block_forward(y, block, weights)
    return y


def forward(model: ModelSpec, img1: np.ndarray, img2: np.ndarray, weights) -> FlowResult:
    """Coarse-to-fine forward pass over an image pair in [0, 1]."""
    img1 = _check_image(img1, "img1")
    img2 = _check_image(img2, "img2")
    if img1.shape != img2.shape:
        raise ShapeError(f"image shapes differ: {img1.shape} vs {img2.shape}")
    h, w = img1.shape[1:]

    feats1 = extract_pyramid(model, img1, weights)
    feats2 = extract_pyramid(model, img2, weights)

    flows: dict[int, FlowField] = {}
    flow_prev: FlowField | None = None
    upfeat_prev: np.ndarray | None = None
    for level in ESTIMATOR_LEVELS:
        f1, f2 = feats1[level], feats2[level]
        est = model.estimators[level]
        if level == 6:
            cv = correlation(f1, f2, model.corr_radius)
            parts = [apply_activation(cv, "leaky_relu", 0.1)]
        else:
            upflow = upsample_flow2x(flow_prev)
            lh, lw = f1.shape[1:]
            upfeat = bilinear_resize(upfeat_prev, lh, lw)
            warped = warp(f2, scale_flow(upflow, model.warp_scale))
            cv = correlation(f1, warped, model.corr_radius)
            parts = [apply_activation(cv, "leaky_relu", 0.1), f1, upflow.flow, upfeat]
        flow_t, feat, upfeat_out = _estimator_forward(est, parts, weights)
        if level == 2:
            flow_t = flow_t + _refiner_forward(model.refiner, feat, weights)
        flows[level] = FlowField(flow_t)
        flow_prev, upfeat_prev = flows[level], upfeat_out

    final = scale_flow(flows[2], model.div_flow)
    final = FlowField(bilinear_resize(final.flow, h, w))
    final = scale_flow(final, 4.0)
    return FlowResult(flows, final)


# ---------------------------------------------------------------------------
# accounting
# ---------------------------------------------------------------------------


def stage_of(block_name: str) -> str:
    if block_name.startswith(("pyr.", "bb.")):
        return "feature_extractor"
    if block_name.startswith(("est.", "final.")):
        return "flow_estimator"
    if block_name.startswith("ref."):
        return "flow_refiner"
    raise ValueError(f"cannot attribute block {block_name!r} to a stage")


@dataclass
class CountReport:
    per_block: dict[str, int]
    per_stage: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.per_stage:
            self.per_stage = {s: 0 for s in _STAGES}
            for name, n in self.per_block.items():
                self.per_stage[stage_of(name)] += n

    @property
    def total(self) -> int:
        return sum(self.per_stage.values())


def count_params(model: ModelSpec) -> CountReport:
    """Exact per-block scalar counts with per-stage rollups."""
    return CountReport({b.name: param_count(b) for b in model.all_blocks()})


FLOP_CONVENTION = (
    "flops = 2 * macs; feature extractor counted per frame (a forward "
    "pass extracts two pyramids); biases/activations excluded; "
    "correlation, warping and resampling counted under the estimator"
)


@dataclass
class FlopReport:
    macs: CountReport
    convention: str = FLOP_CONVENTION

    @property
    def per_block_flops(self) -> dict[str, int]:
        return {k: 2 * v for k, v in self.macs.per_block.items()}

    @property
    def per_stage_flops(self) -> dict[str, int]:
        return {k: 2 * v for k, v in self.macs.per_stage.items()}

    @property
    def total_macs(self) -> int:
        return self.macs.total

    @property
    def total_flops(self) -> int:
        return 2 * self.macs.total

    @property
    def forward_macs(self) -> int:
        """MACs of one full forward pass (feature extractor runs twice)."""
        return self.macs.total + self.macs.per_stage["feature_extractor"]

    @property
    def forward_flops(self) -> int:
        return 2 * self.forward_macs


def _pyramid_mac_items(model: ModelSpec, h: int, w: int):
    pyr = model.pyramid
    items = []
    if pyr.kind == "conv":
        dims = (h, w)
        for block in pyr.blocks:
            items.append((block.name, block_macs(block, *dims)))
            dims = output_hw(block, *dims)
        return items
    dims = (h, w)
    tap_dims = {}
    inv_taps = {idx: level for level, idx in pyr.taps.items()}
    for idx, block in enumerate(pyr.blocks):
        items.append((block.name, block_macs(block, *dims)))
        dims = output_hw(block, *dims)
        if idx in inv_taps:
            tap_dims[inv_taps[idx]] = dims
    for level, proj in enumerate(pyr.projections, start=1):
        items.append((proj.name, block_macs(proj, *tap_dims[level])))
    return items


def count_flops(model: ModelSpec, h: int, w: int) -> FlopReport:
    """Analytic MAC/FLOP counts for a forward pass at resolution h x w."""
    if h % STRIDE_ALIGN or w % STRIDE_ALIGN:
        raise ShapeError(f"resolution {h}x{w} must be divisible by {STRIDE_ALIGN}")
    items: list[tuple[str, int]] = _pyramid_mac_items(model, h, w)
    corr_ch = cost_volume_channels(model.corr_radius)
    for level in ESTIMATOR_LEVELS:
        lh, lw = h >> level, w >> level
        feat_ch = PYRAMID_CHANNELS[level - 1]
        px = lh * lw
        items.append((f"est.l{level}.corr", feat_ch * corr_ch * px))
        if level < 6:
            items.append((f"est.l{level}.warp", 4 * feat_ch * px))
            items.append((f"est.l{level}.upflow", 4 * 2 * px))
            items.append((f"est.l{level}.upfeat_resize", 4 * 2 * px))
        est = model.estimators[level]
        for block in est.blocks:
            items.append((block.name, block_macs(block, lh, lw)))
        items.append((est.pred.name, block_macs(est.pred, lh, lw)))
        if est.upfeat is not None:
            items.append((est.upfeat.name, block_macs(est.upfeat, lh, lw)))
    h2, w2 = h >> 2, w >> 2
    for block in model.refiner.blocks:
        items.append((block.name, block_macs(block, h2, w2)))
    items.append(("final.upsample", 4 * 2 * h * w))
    return FlopReport(CountReport(dict(items)))
