"""Subprocess access to the flow engine's command-line interface.

The engine command defaults to ``pyraflow`` and can be overridden with the
``PYRAFLOW_CMD`` environment variable (whitespace-split, e.g.
``"python -m pyraflow.cli"``).
"""

from __future__ import annotations

import os
import subprocess


class EngineError(RuntimeError):
    pass


def engine_command() -> list[str]:
    return os.environ.get("PYRAFLOW_CMD", "pyraflow").split()


def run_engine(*args: str) -> str:
    cmd = engine_command() + list(args)
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=600)
    except FileNotFoundError:
        raise EngineError(
            f"engine command {cmd[0]!r} not found; install the engine or set "
            f"PYRAFLOW_CMD"
        ) from None
    if proc.returncode != 0:
        detail = (proc.stderr or proc.stdout).strip().splitlines()
        raise EngineError(detail[0] if detail else
                          f"engine exited with status {proc.returncode}")
    return proc.stdout
