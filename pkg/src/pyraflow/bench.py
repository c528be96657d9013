"""Latency profiling harness and benchmark report documents.

The measurement protocol runs ``warmup`` forwards whose timings are
discarded, then ``runs`` timed forwards (monotonic clock); the reported
mean/std/percentiles are computed over exactly the measured samples.
Defaults are 100 warm-up runs and 100 measured runs.
"""

from __future__ import annotations

import os
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .memplan import plan_peak_activation_memory
from .model import (
    FLOP_CONVENTION,
    ModelSpec,
    build_model,
    count_flops,
    count_params,
    forward,
    init_weights,
)
from .tensor import _IM2COL_CHUNK_BYTES

DEFAULT_WARMUP = 100
DEFAULT_RUNS = 100
DEFAULT_RESOLUTIONS = ((512, 512), (436, 1024), (1080, 1920))

REPORT_SCHEMA = "pyraflow-report/1"


class ResourceLimitError(RuntimeError):
    """Raised when a profile run would exceed the memory budget."""


def pad_to_multiple(size: int, multiple: int = 64) -> int:
    return ((size + multiple - 1) // multiple) * multiple


@dataclass
class LatencyStats:
    mean_ms: float
    std_ms: float
    p50_ms: float
    p95_ms: float
    runs: int
    warmup: int


def latency_stats(samples_ms, warmup: int) -> LatencyStats:
    samples = np.asarray(samples_ms, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("no measured samples")
    std = float(samples.std(ddof=1)) if samples.size > 1 else 0.0
    return LatencyStats(
        mean_ms=float(samples.mean()),
        std_ms=std,
        p50_ms=float(np.percentile(samples, 50)),
        p95_ms=float(np.percentile(samples, 95)),
        runs=int(samples.size),
        warmup=int(warmup),
    )


def measure_latency(fn, warmup: int, runs: int, clock=time.perf_counter) -> LatencyStats:
    """Time ``fn`` after discarding ``warmup`` calls; returns millisecond stats."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    durations = []
    t_prev = clock()
    for _ in range(warmup + runs):
        fn()
        t = clock()
        durations.append((t - t_prev) * 1000.0)
        t_prev = t
    return latency_stats(durations[warmup:], warmup)


def host_descriptor() -> dict:
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
    }


def _system_memory_bytes() -> int:
    try:
        return os.sysconf("SC_PHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError):  # pragma: no cover
        return 8 << 30


def estimate_forward_bytes(model: ModelSpec, h: int, w: int) -> int:
    """Planned activation + weight bytes plus the bounded conv scratch buffer."""
    plan = plan_peak_activation_memory(model, h, w)
    return plan.total_bytes + _IM2COL_CHUNK_BYTES


@dataclass
class BenchReport:
    model: str
    resolution: tuple[int, int]
    padded_resolution: tuple[int, int]
    latency: LatencyStats
    params: dict[str, int]
    macs: dict[str, int]
    flops: dict[str, int]
    planned_peak_memory_bytes: int
    seed: int
    environment: dict = field(default_factory=host_descriptor)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        d["padded_resolution"] = list(self.padded_resolution)
        d["flop_convention"] = FLOP_CONVENTION
        return d


def _accounting(model: ModelSpec, h: int, w: int):
    p = count_params(model)
    f = count_flops(model, h, w)
    params = dict(p.per_stage, total=p.total)
    macs = dict(f.macs.per_stage, total=f.total_macs, forward_total=f.forward_macs)
    flops = dict(f.per_stage_flops, total=f.total_flops, forward_total=f.forward_flops)
    plan = plan_peak_activation_memory(model, h, w)
    return params, macs, flops, plan


def profile_model(
    variant: str,
    resolution: tuple[int, int],
    warmup: int = DEFAULT_WARMUP,
    runs: int = DEFAULT_RUNS,
    seed: int = 0,
    clock=time.perf_counter,
    mem_limit_bytes: int | None = None,
    **overrides,
) -> BenchReport:
    """Build a variant, run the warm-up/measure protocol, emit a report."""
    model = build_model(variant, **overrides)
    h = pad_to_multiple(resolution[0])
    w = pad_to_multiple(resolution[1])
    limit = mem_limit_bytes if mem_limit_bytes is not None else _system_memory_bytes()
    estimate = estimate_forward_bytes(model, h, w)
    if estimate > limit:
        raise ResourceLimitError(
            f"{variant} at {h}x{w} needs an estimated {estimate / 2**20:.0f} MiB "
            f"(budget {limit / 2**20:.0f} MiB); choose a smaller resolution"
        )
    weights = init_weights(model, seed)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    img1 = rng.random((3, h, w), dtype=np.float32)
    img2 = rng.random((3, h, w), dtype=np.float32)
    stats = measure_latency(lambda: forward(model, img1, img2, weights),
                            warmup, runs, clock)
    params, macs, flops, plan = _accounting(model, h, w)
    return BenchReport(
        model=variant,
        resolution=tuple(resolution),
        padded_resolution=(h, w),
        latency=stats,
        params=params,
        macs=macs,
        flops=flops,
        planned_peak_memory_bytes=plan.total_bytes,
        seed=seed,
    )


def accounting_report(
    models: list[str],
    resolutions=DEFAULT_RESOLUTIONS,
    measure: bool = False,
    warmup: int = 1,
    runs: int = 3,
    seed: int = 0,
) -> dict:
    """Params/MACs/planned-memory table across models and resolutions.

    Models are ordered by ascending forward MACs at the first resolution.
    Measured latency is opt-in (``measure``) so the default document is a
    pure function of the model definitions.
    """
    resolutions = [tuple(r) for r in resolutions]
    rows = []
    for name in models:
        model = build_model(name)
        per_res = []
        for res in resolutions:
            h, w = pad_to_multiple(res[0]), pad_to_multiple(res[1])
            params, macs, flops, plan = _accounting(model, h, w)
            entry = {
                "resolution": list(res),
                "padded_resolution": [h, w],
                "macs": macs,
                "flops": flops,
                "planned_peak_memory_bytes": plan.total_bytes,
            }
            if measure:
                rep = profile_model(name, res, warmup=warmup, runs=runs, seed=seed)
                entry["latency_ms"] = asdict(rep.latency)
            per_res.append(entry)
        params_report = count_params(model)
        rows.append({
            "model": name,
            "params": dict(params_report.per_stage, total=params_report.total),
            "per_resolution": per_res,
        })
    rows.sort(key=lambda r: r["per_resolution"][0]["macs"]["forward_total"])
    return {
        "schema": REPORT_SCHEMA,
        "resolutions": [list(r) for r in resolutions],
        "measured": bool(measure),
        "flop_convention": FLOP_CONVENTION,
        "models": rows,
    }


def format_report_table(doc: dict) -> str:
    """Human-readable rendering of an accounting report document."""
    lines = []
    res_labels = ["x".join(map(str, r)) for r in doc["resolutions"]]
    header = f"{'model':<16}{'params':>10} " + "".join(f"{lbl:>22}" for lbl in res_labels)
    lines.append(header)
    lines.append("-" * len(header))
    for row in doc["models"]:
        cells = []
        for entry in row["per_resolution"]:
            gmac = entry["macs"]["forward_total"] / 1e9
            mem = entry["planned_peak_memory_bytes"] / 2**20
            cell = f"{gmac:8.2f} GMAC {mem:6.0f}MB"
            if "latency_ms" in entry:
                cell += f" {entry['latency_ms']['mean_ms']:7.1f}ms"
            cells.append(cell)
        lines.append(
            f"{row['model']:<16}{row['params']['total'] / 1e6:>9.2f}M "
            + "".join(f"{c:>22}" for c in cells)
        )
    return "\n".join(lines) + "\n"
