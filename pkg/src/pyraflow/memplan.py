"""Analytic peak-activation-memory planning.

The planner walks an op graph in its listed (topological) order.  A tensor
is live from the step that produces it until its last consumer has
executed; graph outputs stay live to the end.  While an op executes, its
inputs and its output are live simultaneously.  The peak is the high-water
mark of live bytes over the walk.

``trace_graph`` lowers a ModelSpec at a given resolution to such a graph,
mirroring the allocations of the real forward pass (including the
intermediate concatenations of dense estimators).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .blocks import output_hw
from .flow_ops import cost_volume_channels
from .model import ESTIMATOR_LEVELS, PYRAMID_CHANNELS, ModelSpec, count_params
from .tensor import ShapeError


@dataclass(frozen=True)
class Op:
    name: str
    out: str
    out_bytes: int
    inputs: tuple[str, ...]


@dataclass
class Graph:
    ops: list[Op] = field(default_factory=list)
    inputs: dict[str, int] = field(default_factory=dict)  # tensor id -> bytes
    outputs: list[str] = field(default_factory=list)

    def add(self, name: str, out: str, out_bytes: int, *inputs: str) -> str:
        self.ops.append(Op(name, out, int(out_bytes), tuple(inputs)))
        return out


def plan_graph(graph: Graph) -> int:
    """Peak live activation bytes over the graph's execution order."""
    n = len(graph.ops)
    last_use: dict[str, int] = {t: -1 for t in graph.inputs}
    for i, op in enumerate(graph.ops):
        for t in op.inputs:
            last_use[t] = i
        last_use.setdefault(op.out, -1)
    for t in graph.outputs:
        last_use[t] = n
    live = dict(graph.inputs)
    peak = sum(live.values())
    for i, op in enumerate(graph.ops):
        live[op.out] = op.out_bytes
        total = sum(live.values())
        if total > peak:
            peak = total
        for t in [t for t in live if last_use.get(t, -1) <= i]:
            del live[t]
    return peak


@dataclass
class PlanResult:
    activation_peak_bytes: int
    weight_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.activation_peak_bytes + self.weight_bytes


def trace_graph(model: ModelSpec, h: int, w: int, bytes_per_element: int = 4) -> Graph:
    """Op graph of one forward pass at resolution h x w."""
    if h % 64 or w % 64:
        raise ShapeError(f"resolution {h}x{w} must be divisible by 64")
    bpe = bytes_per_element
    g = Graph(inputs={"img1": 3 * h * w * bpe, "img2": 3 * h * w * bpe})

    def tbytes(ch: int, th: int, tw: int) -> int:
        return ch * th * tw * bpe

    def pyramid(frame: str) -> dict[int, str]:
        pyr = model.pyramid
        feats: dict[int, str] = {}
        if pyr.kind == "conv":
            x, dims = frame, (h, w)
            for level in range(1, 7):
                for i in range(3):
                    block = pyr.blocks[(level - 1) * 3 + i]
                    dims = output_hw(block, *dims)
                    x = g.add(f"{frame}.{block.name}", f"{frame}.{block.name}.out",
                              tbytes(block.out_ch, *dims), x)
                feats[level] = x
            return feats
        x, dims = frame, (h, w)
        inv_taps = {idx: lvl for lvl, idx in pyr.taps.items()}
        tap_ids: dict[int, tuple[str, tuple[int, int]]] = {}
        for idx, block in enumerate(pyr.blocks):
            dims = output_hw(block, *dims)
            x = g.add(f"{frame}.{block.name}", f"{frame}.{block.name}.out",
                      tbytes(block.out_ch, *dims), x)
            if idx in inv_taps:
                tap_ids[inv_taps[idx]] = (x, dims)
        for level, proj in enumerate(pyr.projections, start=1):
            tid, tdims = tap_ids[level]
            feats[level] = g.add(f"{frame}.{proj.name}", f"{frame}.{proj.name}.out",
                                 tbytes(proj.out_ch, *tdims), tid)
        return feats

    feats1 = pyramid("img1")
    feats2 = pyramid("img2")

    corr_ch = cost_volume_channels(model.corr_radius)
    flow_prev = upfeat_prev = None
    flow_ids: dict[int, str] = {}
    for level in ESTIMATOR_LEVELS:
        lh, lw = h >> level, w >> level
        est = model.estimators[level]
        feat_ch = PYRAMID_CHANNELS[level - 1]
        pre = f"est.l{level}"
        if level == 6:
            cv = g.add(f"{pre}.corr", f"{pre}.cv", tbytes(corr_ch, lh, lw),
                       feats1[level], feats2[level])
            x = cv
        else:
            upflow = g.add(f"{pre}.upflow", f"{pre}.upflow.out", tbytes(2, lh, lw),
                           flow_prev)
            upfeat = g.add(f"{pre}.upfeat_resize", f"{pre}.upfeat.out",
                           tbytes(2, lh, lw), upfeat_prev)
            warped = g.add(f"{pre}.warp", f"{pre}.warped", tbytes(feat_ch, lh, lw),
                           feats2[level], upflow)
            cv = g.add(f"{pre}.corr", f"{pre}.cv", tbytes(corr_ch, lh, lw),
                       feats1[level], warped)
            x = g.add(f"{pre}.cat_in", f"{pre}.in",
                      tbytes(est.in_channels, lh, lw),
                      cv, feats1[level], upflow, upfeat)
        ch = est.in_channels
        if est.connectivity == "dense":
            state = x
            for block in est.blocks:
                y = g.add(block.name, f"{block.name}.out",
                          tbytes(block.out_ch, lh, lw), state)
                ch += block.out_ch
                state = g.add(f"{block.name}.cat", f"{block.name}.state",
                              tbytes(ch, lh, lw), state, y)
            feat = state
        else:
            y = x
            for block in est.blocks:
                y = g.add(block.name, f"{block.name}.out",
                          tbytes(block.out_ch, lh, lw), y)
            feat = y
        flow = g.add(est.pred.name, f"{pre}.flow", tbytes(2, lh, lw), feat)
        if level == 2:
            y = feat
            for block in model.refiner.blocks:
                y = g.add(block.name, f"{block.name}.out",
                          tbytes(block.out_ch, lh, lw), y)
            flow = g.add("ref.add", f"{pre}.flow_refined", tbytes(2, lh, lw), flow, y)
        flow_ids[level] = flow
        if est.upfeat is not None:
            upfeat_prev = g.add(est.upfeat.name, f"{pre}.upfeat_proj",
                                tbytes(2, lh, lw), feat)
        flow_prev = flow

    scaled = g.add("final.scale", "final.scaled", tbytes(2, h >> 2, w >> 2),
                   flow_ids[2])
    final = g.add("final.upsample", "final.flow", tbytes(2, h, w), scaled)
    g.outputs = [flow_ids[level] for level in ESTIMATOR_LEVELS] + [final]
    return g


def plan_peak_activation_memory(
    model: ModelSpec, h: int, w: int, bytes_per_element: int = 4
) -> PlanResult:
    """Planned peak activation bytes plus weight bytes for one forward."""
    peak = plan_graph(trace_graph(model, h, w, bytes_per_element))
    weights = count_params(model).total * bytes_per_element
    return PlanResult(peak, weights)
