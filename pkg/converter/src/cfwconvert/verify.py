"""Golden-output verification: run the engine on a golden directory's image
pair with the candidate weights and compare the resulting flow field
elementwise against the stored golden flow.

A golden directory contains ``img1.png``, ``img2.png``, ``flow.flo`` and
``meta.json`` declaring the model variant, all produced by the engine's
``infer`` on reference weights.
"""

from __future__ import annotations

import json
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import run_engine


class VerifyError(RuntimeError):
    pass


def read_flo(data: bytes) -> np.ndarray:
    """Minimal .flo decoder returning a (2, H, W) float32 array."""
    if len(data) < 12:
        raise VerifyError("truncated flow file")
    magic, w, h = struct.unpack("<fii", data[:12])
    if np.float32(magic) != np.float32(202021.25):
        raise VerifyError("bad flow file magic")
    if len(data) != 12 + 8 * w * h:
        raise VerifyError("flow file payload size mismatch")
    body = np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w, 2)
    return np.stack([body[:, :, 0], body[:, :, 1]])


@dataclass
class VerifyReport:
    passed: bool
    max_abs_error: float
    location: tuple[int, int, int]  # channel, y, x
    tolerance: float
    variant: str

    def render(self) -> str:
        status = "pass" if self.passed else "FAIL"
        c, y, x = self.location
        return (f"{status}: max abs error {self.max_abs_error:.3e} "
                f"(channel {c}, y {y}, x {x}) vs tolerance {self.tolerance:g} "
                f"on {self.variant}")


def verify(weights_path: str, golden_dir: str, tolerance: float) -> VerifyReport:
    root = Path(golden_dir)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise VerifyError(f"golden dir {golden_dir!r} has no meta.json")
    meta = json.loads(meta_path.read_text())
    variant = meta.get("variant")
    if not variant:
        raise VerifyError("meta.json does not declare a variant")
    for name in ("img1.png", "img2.png", "flow.flo"):
        if not (root / name).exists():
            raise VerifyError(f"golden dir is missing {name}")

    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "out.flo"
        run_engine("infer", str(root / "img1.png"), str(root / "img2.png"),
                   "--model", variant, "--weights", str(weights_path),
                   "--out", str(out))
        got = read_flo(out.read_bytes())
    want = read_flo((root / "flow.flo").read_bytes())
    if got.shape != want.shape:
        raise VerifyError(
            f"flow shapes differ: engine {got.shape} vs golden {want.shape}"
        )
    err = np.abs(got.astype(np.float64) - want.astype(np.float64))
    idx = np.unravel_index(int(err.argmax()), err.shape)
    max_err = float(err[idx])
    return VerifyReport(
        passed=max_err <= tolerance,
        max_abs_error=max_err,
        location=tuple(int(i) for i in idx),
        tolerance=tolerance,
        variant=variant,
    )
