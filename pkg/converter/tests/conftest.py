import os
import sys
from collections import OrderedDict
from pathlib import Path

import numpy as np
import pytest

# Reach the engine CLI through the current interpreter so the tests do not
# depend on console-script installation.
os.environ.setdefault("PYRAFLOW_CMD", f"{sys.executable} -m pyraflow.cli")

MAPS_DIR = Path(__file__).resolve().parents[1] / "maps"


@pytest.fixture(scope="session")
def maps_dir() -> Path:
    return MAPS_DIR


def _fan_in_uniform(rng, shape):
    """Sanely scaled weights so a deep stack keeps activations finite."""
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 64
    limit = np.sqrt(6.0 / max(1, fan_in))
    return (rng.random(shape).astype(np.float32) * 2 - 1) * np.float32(limit)


def synthesize_state_dict(name_map, seed: int, with_extras: bool = True):
    """Random checkpoint tensors matching a name map's source expectations."""
    from cfwconvert.namemap import CopyRule

    rng = np.random.default_rng(seed)
    state = OrderedDict()
    for rule in name_map.rules:
        if isinstance(rule, CopyRule):
            if len(rule.shape) == 1:  # bias vector
                arr = (rng.standard_normal(rule.shape) * 0.05).astype(np.float32)
            else:
                # fan-in follows the canonical orientation, not the source layout
                arr = _fan_in_uniform(rng, rule.shape)
            if rule.transpose is not None:
                arr = np.transpose(arr, np.argsort(rule.transpose))
            state[rule.source] = np.ascontiguousarray(arr)
        else:
            out_ch = rule.weight_shape[0]
            state[rule.conv_weight] = _fan_in_uniform(rng, rule.weight_shape)
            if rule.conv_bias:
                state[rule.conv_bias] = (
                    rng.standard_normal(out_ch).astype(np.float32) * 0.05)
            state[rule.gamma] = (rng.random(out_ch) * 0.2 + 0.9).astype(np.float32)
            state[rule.beta] = (rng.standard_normal(out_ch) * 0.05).astype(np.float32)
            state[rule.mean] = (rng.standard_normal(out_ch) * 0.05).astype(np.float32)
            state[rule.var] = (rng.random(out_ch) * 0.2 + 0.9).astype(np.float32)
            if with_extras:
                base = rule.var.rsplit(".", 1)[0]
                state[f"{base}.num_batches_tracked"] = np.int64(1000)
    return state


def save_checkpoint(state, path):
    import torch

    torch.save(OrderedDict(
        (k, torch.from_numpy(np.asarray(v)) if not np.isscalar(v)
         else torch.tensor(v)) for k, v in state.items()), str(path))


def inverse_export(cfw_tensors, name_map):
    """Rebuild a source state dict from canonical tensors (copy rules only)."""
    from cfwconvert.namemap import CopyRule

    state = OrderedDict()
    for rule in name_map.rules:
        if not isinstance(rule, CopyRule):
            raise ValueError("inverse export supports fold-free maps only")
        arr = cfw_tensors[rule.target]
        if rule.transpose is not None:
            arr = np.transpose(arr, np.argsort(rule.transpose))
        state[rule.source] = np.ascontiguousarray(arr)
    return state


def write_png(path, img_chw):
    import cv2

    arr = np.clip(np.rint(img_chw * 255), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    assert cv2.imwrite(str(path), arr[:, :, ::-1])
