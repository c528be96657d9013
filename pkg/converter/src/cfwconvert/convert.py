"""Checkpoint -> CFW1 conversion.

The converted container is validated against the target variant through
the engine's ``convert-weights-check`` subcommand before it is moved to
the output path, so an incomplete or mis-shaped map never leaves a file
behind.
"""

from __future__ import annotations

import os
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cfw import fingerprint_of, write_cfw
from .checkpoint import read_checkpoint
from .engine import EngineError, run_engine
from .namemap import NameMapError, apply_rule, load_name_map


class ConvertError(RuntimeError):
    pass


@dataclass
class ConvertSummary:
    variant: str
    out_path: str
    fingerprint: int
    mapped: list[str] = field(default_factory=list)
    unmapped_sources: list[str] = field(default_factory=list)

    def render(self) -> str:
        lines = [
            f"converted {len(self.mapped)} tensors for {self.variant} "
            f"-> {self.out_path}",
            f"fingerprint {self.fingerprint:#018x}",
        ]
        if self.unmapped_sources:
            lines.append(f"unmapped source tensors ({len(self.unmapped_sources)}):")
            lines += [f"  {name}" for name in self.unmapped_sources]
        return "\n".join(lines)


def convert(checkpoint_path: str, map_path: str, variant: str,
            out_path: str) -> ConvertSummary:
    name_map = load_name_map(map_path)
    if name_map.variant != variant:
        raise ConvertError(
            f"map targets variant {name_map.variant!r}, requested {variant!r}"
        )
    tensors = read_checkpoint(checkpoint_path)

    used: set[str] = set()
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    try:
        for rule in name_map.rules:
            for target, array in apply_rule(rule, tensors):
                if target in out:
                    raise NameMapError(f"duplicate mapping for target {target!r}")
                out[target] = array
            used.update(rule.sources)
    except NameMapError as e:
        raise ConvertError(str(e)) from None

    blob = write_cfw(out)
    tmp_path = Path(str(out_path) + ".tmp")
    tmp_path.write_bytes(blob)
    try:
        run_engine("convert-weights-check", "--model", variant,
                   "--weights", str(tmp_path))
    except EngineError as e:
        tmp_path.unlink(missing_ok=True)
        raise ConvertError(str(e)) from None
    os.replace(tmp_path, out_path)

    return ConvertSummary(
        variant=variant,
        out_path=str(out_path),
        fingerprint=fingerprint_of(blob),
        mapped=list(out),
        unmapped_sources=[n for n in tensors if n not in used],
    )
