"""Accuracy metrics (end-point error, outlier rate) and forward-only
training losses (multi-scale supervision, distillation, weighted total).

Defaults: the per-pixel error norm is the un-squared Euclidean norm, and
per-level losses sum over pixels; both are switchable via ``squared`` and
``reduction`` since conventions differ between training recipes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow_ops import FlowField
from .tensor import ShapeError, avg_pool

# Outlier-rate thresholds: error above 3 px and above 5% of the
# ground-truth magnitude (the usual automotive-benchmark definition).
FL_ABS_PX = 3.0
FL_REL = 0.05

# Per-level supervision weights, levels 6 down to 2.
LEVEL_WEIGHTS = (0.32, 0.08, 0.02, 0.01, 0.005)

DEFAULT_GAMMA = 0.1
DEFAULT_DIV_FLOW = 20.0


def _valid_mask(gt: FlowField, mask: np.ndarray | None) -> np.ndarray:
    valid = np.ones(gt.shape, dtype=bool) if gt.valid is None else gt.valid.copy()
    if mask is not None:
        mask = np.asarray(mask).astype(bool)
        if mask.shape != gt.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match {gt.shape}")
        valid &= mask
    if not valid.any():
        raise ValueError("no valid pixels")
    return valid


def _check_pair(pred: FlowField, gt: FlowField) -> None:
    if pred.shape != gt.shape:
        raise ShapeError(f"flow shapes differ: {pred.shape} vs {gt.shape}")


def endpoint_error_map(pred: FlowField, gt: FlowField) -> np.ndarray:
    _check_pair(pred, gt)
    d = pred.flow.astype(np.float64) - gt.flow.astype(np.float64)
    return np.sqrt(d[0] ** 2 + d[1] ** 2)


def epe(pred: FlowField, gt: FlowField, mask: np.ndarray | None = None) -> float:
    """Mean end-point error over valid pixels."""
    err = endpoint_error_map(pred, gt)
    valid = _valid_mask(gt, mask)
    return float(err[valid].mean())


def fl_all(pred: FlowField, gt: FlowField, mask: np.ndarray | None = None) -> float:
    """Outlier fraction: EPE > 3 px and EPE > 5% of the gt magnitude."""
    err = endpoint_error_map(pred, gt)
    valid = _valid_mask(gt, mask)
    g = gt.flow.astype(np.float64)
    mag = np.sqrt(g[0] ** 2 + g[1] ** 2)
    outlier = (err > FL_ABS_PX) & (err > FL_REL * mag)
    return float(outlier[valid].mean())


def _field_loss(pred: np.ndarray, target: np.ndarray, squared: bool,
                reduction: str) -> float:
    d = pred.astype(np.float64) - target.astype(np.float64)
    n2 = d[0] ** 2 + d[1] ** 2
    per_px = n2 if squared else np.sqrt(n2)
    if reduction == "sum":
        return float(per_px.sum())
    if reduction == "mean":
        return float(per_px.mean())
    raise ValueError(f"unknown reduction {reduction!r}")


def downscale_gt(gt: FlowField, level: int, div_flow: float) -> FlowField:
    """Average-pool full-resolution gt to a pyramid level and convert the
    values to that level's internal units (x 2^-level / div_flow)."""
    pooled = avg_pool(gt.flow, 2 ** level)
    return FlowField(pooled * np.float32(2.0 ** -level / div_flow))


def multiscale_supervision_loss(
    preds: dict[int, FlowField],
    gt: FlowField,
    level_weights=LEVEL_WEIGHTS,
    div_flow: float = DEFAULT_DIV_FLOW,
    squared: bool = False,
    reduction: str = "sum",
) -> tuple[float, list[float]]:
    """Supervision loss over levels 6..2 against downscaled ground truth."""
    levels = sorted(preds, reverse=True)
    if levels != [6, 5, 4, 3, 2]:
        raise ShapeError(f"predictions must cover levels 6..2, got {levels}")
    if len(level_weights) != len(levels):
        raise ValueError("need one weight per level")
    per_level = []
    for weight, level in zip(level_weights, levels):
        target = downscale_gt(gt, level, div_flow)
        if preds[level].shape != target.shape:
            raise ShapeError(
                f"level {level} prediction {preds[level].shape} does not match "
                f"downscaled gt {target.shape}"
            )
        per_level.append(weight * _field_loss(preds[level].flow, target.flow,
                                              squared, reduction))
    return float(sum(per_level)), per_level


def distillation_loss(
    student: dict[int, FlowField],
    teacher: dict[int, FlowField],
    level_weights=LEVEL_WEIGHTS,
    squared: bool = False,
    reduction: str = "sum",
) -> float:
    """Same functional form as supervision, with teacher flows as targets."""
    if sorted(student) != sorted(teacher):
        raise ShapeError(
            f"level sets differ: {sorted(student)} vs {sorted(teacher)}"
        )
    levels = sorted(student, reverse=True)
    if len(level_weights) != len(levels):
        raise ValueError("need one weight per level")
    total = 0.0
    for weight, level in zip(level_weights, levels):
        if student[level].shape != teacher[level].shape:
            raise ShapeError(f"level {level} shapes differ")
        total += weight * _field_loss(student[level].flow, teacher[level].flow,
                                      squared, reduction)
    return float(total)


@dataclass
class LossBreakdown:
    sup: float
    dist: float
    gamma: float
    total: float
    per_level: list[float] = field(default_factory=list)


def total_loss(sup: float, dist: float, gamma: float = DEFAULT_GAMMA,
               per_level: list[float] | None = None) -> LossBreakdown:
    """Weighted training loss: total = sup + gamma * dist."""
    return LossBreakdown(sup, dist, gamma, sup + gamma * dist,
                         list(per_level or []))
