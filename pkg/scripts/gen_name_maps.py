#!/usr/bin/env python3
"""Generate converter name-map documents for every model variant.

The emitted YAML maps translate training-checkpoint tensor names (the
``backbone.* / neck.* / decoder.* / refiner.*`` convention) into this
engine's canonical block names, carrying canonical shapes so converters
can validate transforms before writing anything.  Backbone convolutions
arrive with batch-norm statistics and become fold rules; pointwise
``upfeat`` projections arrive linear-style (in, out, 1, 1) and carry a
transpose.

Example:
    python scripts/gen_name_maps.py --out-dir converter/maps
"""

import argparse
from pathlib import Path

import yaml

from pyraflow.model import VARIANTS, build_model, parameter_manifest

_BB_SUBMODULE = {"expand": "expand", "dw": "depthwise", "project": "project"}


def _backbone_source(block: str) -> str:
    parts = block.split(".")
    if parts[1] == "stem":
        return "backbone.stem"
    if parts[1] == "extra":
        return f"backbone.extra.{_BB_SUBMODULE[parts[2]]}"
    index = int(parts[1][2:]) - 1
    return f"backbone.blocks.{index}.{_BB_SUBMODULE[parts[2]]}"


def source_name(target: str) -> str:
    parts = target.split(".")
    leaf = parts[-1]
    if target.startswith("pyr.proj."):
        return f"neck.lateral{parts[2][1:]}.{leaf}"
    if target.startswith("pyr."):
        return f"feature_pyramid.level{parts[1][1:]}.conv{parts[2][1:]}.{leaf}"
    if ".se." in target:
        fc = "fc1" if parts[3] == "reduce" else "fc2"
        return f"backbone.blocks.{int(parts[1][2:]) - 1}.se.{fc}.{leaf}"
    if target.startswith("est."):
        level, rest = parts[1][1:], parts[2]
        if rest == "pred":
            return f"decoder.level{level}.predict.{leaf}"
        if rest == "upfeat":
            return f"decoder.level{level}.upfeat.{leaf}"
        sub = {"dw": ".depthwise", "pw": ".pointwise"}.get(
            parts[3] if len(parts) > 4 else "", "")
        return f"decoder.level{level}.conv{rest[1:]}{sub}.{leaf}"
    if target.startswith("ref."):
        sub = {"dw": ".depthwise", "pw": ".pointwise"}.get(
            parts[2] if len(parts) > 3 else "", "")
        return f"refiner.conv{parts[1][1:]}{sub}.{leaf}"
    raise ValueError(f"no source convention for {target!r}")


def build_map(variant: str) -> dict:
    manifest = parameter_manifest(build_model(variant))
    rules = []
    skip = set()
    for name, shape, _fan in manifest:
        if name in skip:
            continue
        folded = name.startswith("bb.") and ".se." not in name
        if folded and name.endswith(".weight"):
            block = name[: -len(".weight")]
            base = _backbone_source(block)
            skip.add(f"{block}.bias")
            rules.append({
                "kind": "fold_batchnorm",
                "target": block,
                "weight_shape": [int(d) for d in shape],
                "conv_weight": f"{base}.conv.weight",
                "conv_bias": None,
                "gamma": f"{base}.bn.weight",
                "beta": f"{base}.bn.bias",
                "mean": f"{base}.bn.running_mean",
                "var": f"{base}.bn.running_var",
                "eps": 1e-5,
            })
            continue
        rule = {
            "kind": "copy",
            "target": name,
            "shape": [int(d) for d in shape],
            "source": source_name(name),
        }
        if ".upfeat.weight" in name:
            rule["transpose"] = [1, 0, 2, 3]  # source is linear-style (in, out, 1, 1)
        rules.append(rule)
    return {"variant": variant, "rules": rules}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="converter/maps")
    args = ap.parse_args()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for variant in VARIANTS:
        doc = build_map(variant)
        path = out_dir / f"{variant}.yaml"
        path.write_text(yaml.safe_dump(doc, sort_keys=False))
        print(f"wrote {path} ({len(doc['rules'])} rules)")


if __name__ == "__main__":
    main()
