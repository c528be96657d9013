"""Command-line surface: inference, dataset evaluation, latency profiling,
and accounting reports.

Inputs of arbitrary size are zero-padded at the bottom/right edges to the
next multiple of 64 before the forward pass; output flow is cropped back,
so the files on disk match the input dimensions exactly.

A YAML config document (``--config``) may supply any flag value; explicit
command-line flags take precedence.  All failures exit nonzero with a
single-line ``error: ...`` diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from .bench import (
    DEFAULT_RESOLUTIONS,
    DEFAULT_RUNS,
    DEFAULT_WARMUP,
    accounting_report,
    format_report_table,
    pad_to_multiple,
    profile_model,
)
from .flow_io import flow_to_color, read_flo, read_image, read_kitti_png, write_flo, write_image
from .flow_ops import FlowField
from .metrics import epe, fl_all
from .model import VARIANTS, build_model, forward, parameter_manifest
from .tensor import pad2d
from .weights import fingerprint, load_weights


class CliError(RuntimeError):
    pass


def _parse_resolution(text: str) -> tuple[int, int]:
    try:
        h, w = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise CliError(f"bad resolution {text!r}; expected HxW") from None
    if h < 1 or w < 1:
        raise CliError(f"bad resolution {text!r}")
    return h, w


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
    except OSError as e:
        raise CliError(f"cannot read config {path!r}: {e.strerror}") from None
    if not isinstance(cfg, dict):
        raise CliError(f"config {path!r} must be a key/value mapping")
    return cfg


def _opt(args, cfg: dict, key: str, default=None):
    val = getattr(args, key, None)
    if val is not None:
        return val
    return cfg.get(key, default)


def _load_store(path: str):
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CliError(f"cannot read weights {path!r}: {e.strerror}") from None
    return load_weights(data)


def _check_store_against_model(model, store) -> None:
    """First mismatch between the model's manifest and a store is fatal."""
    shapes = store.shapes()
    expected = {}
    for name, shape, _fan in parameter_manifest(model):
        expected[name] = tuple(shape)
        if name not in shapes:
            raise CliError(f"weights incompatible with model: missing block tensor {name!r}")
        if shapes[name] != tuple(shape):
            raise CliError(
                f"weights incompatible with model: {name!r} has shape "
                f"{shapes[name]}, expected {tuple(shape)}"
            )
    extras = [n for n in shapes if n not in expected]
    if extras:
        raise CliError(f"weights incompatible with model: unexpected tensor {extras[0]!r}")


def _padded_forward(model, store, img1: np.ndarray, img2: np.ndarray) -> FlowField:
    h, w = img1.shape[1:]
    ph, pw = pad_to_multiple(h) - h, pad_to_multiple(w) - w
    pads = (0, ph, 0, pw)
    result = forward(model, pad2d(img1, pads), pad2d(img2, pads), store)
    return FlowField(result.final.flow[:, :h, :w])


def cmd_infer(args, cfg) -> int:
    variant = _opt(args, cfg, "model")
    weights_path = _opt(args, cfg, "weights")
    if not variant or not weights_path:
        raise CliError("infer requires --model and --weights")
    out = _opt(args, cfg, "out", "flow.flo")
    img1 = read_image(args.img1)
    img2 = read_image(args.img2)
    if img1.shape != img2.shape:
        raise CliError(f"image sizes differ: {img1.shape[1:]} vs {img2.shape[1:]}")
    model = build_model(variant)
    store = _load_store(weights_path)
    _check_store_against_model(model, store)
    flow = _padded_forward(model, store, img1, img2)
    out_flo = Path(out)
    out_png = out_flo.with_suffix(".png")
    out_flo.write_bytes(write_flo(flow))
    write_image(str(out_png), flow_to_color(flow))
    print(f"wrote {out_flo} and {out_png}")
    return 0


def _scan_dataset(root: Path, layout: str) -> list[tuple[Path, Path, Path]]:
    gt_suffix = "_flow.flo" if layout == "sintel" else "_flow.png"
    triples = []
    for gt in sorted(root.rglob(f"*{gt_suffix}")):
        stem = gt.name[: -len(gt_suffix)]
        img1 = gt.with_name(f"{stem}_img1.png")
        img2 = gt.with_name(f"{stem}_img2.png")
        if img1.exists() and img2.exists():
            triples.append((img1, img2, gt))
    if not triples:
        raise CliError(
            f"empty dataset: no '*_img1.png'/'*_img2.png'/'*{gt_suffix}' "
            f"triples under {root}"
        )
    return triples


def cmd_eval(args, cfg) -> int:
    variant = _opt(args, cfg, "model")
    weights_path = _opt(args, cfg, "weights")
    layout = _opt(args, cfg, "layout", "sintel")
    if not variant or not weights_path:
        raise CliError("eval requires --model and --weights")
    if layout not in ("sintel", "kitti"):
        raise CliError(f"unknown layout {layout!r}; expected sintel or kitti")
    root = Path(args.dataset)
    if not root.is_dir():
        raise CliError(f"dataset directory {str(root)!r} does not exist")
    model = build_model(variant)
    store = _load_store(weights_path)
    _check_store_against_model(model, store)

    rows = []
    for img1_p, img2_p, gt_p in _scan_dataset(root, layout):
        img1, img2 = read_image(str(img1_p)), read_image(str(img2_p))
        if img1.shape != img2.shape:
            raise CliError(f"image sizes differ for pair {img1_p.name}")
        try:
            if layout == "sintel":
                gt = read_flo(gt_p.read_bytes())
            else:
                gt = read_kitti_png(gt_p.read_bytes())
        except ValueError as e:
            raise CliError(f"malformed ground truth {gt_p.name!r}: {e}") from None
        if gt.shape != img1.shape[1:]:
            raise CliError(
                f"malformed ground truth {gt_p.name!r}: size {gt.shape} does "
                f"not match images {img1.shape[1:]}"
            )
        pred = _padded_forward(model, store, img1, img2)
        row = {"frame": gt_p.name[: -len("_flow.flo")] if layout == "sintel"
               else gt_p.name[: -len("_flow.png")],
               "epe": epe(pred, gt)}
        if layout == "kitti":
            row["fl_all"] = fl_all(pred, gt)
        rows.append(row)

    summary = {"model": variant, "layout": layout, "frames": len(rows),
               "aepe": float(np.mean([r["epe"] for r in rows])),
               "per_frame": rows}
    if layout == "kitti":
        summary["fl_all"] = float(np.mean([r["fl_all"] for r in rows]))
    for row in rows:
        extra = f"  fl_all={row['fl_all']:.4f}" if layout == "kitti" else ""
        print(f"{row['frame']:<32} epe={row['epe']:.4f}{extra}")
    line = f"AEPE {summary['aepe']:.4f} over {len(rows)} frames"
    if layout == "kitti":
        line += f"; Fl-all {summary['fl_all']:.4f}"
    print(line)
    out = _opt(args, cfg, "out")
    if out:
        Path(out).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_profile(args, cfg) -> int:
    variant = _opt(args, cfg, "model")
    if not variant:
        raise CliError("profile requires --model")
    res = _opt(args, cfg, "resolution", "512x512")
    resolution = _parse_resolution(res) if isinstance(res, str) else tuple(res)
    report = profile_model(
        variant,
        resolution,
        warmup=int(_opt(args, cfg, "warmup", DEFAULT_WARMUP)),
        runs=int(_opt(args, cfg, "runs", DEFAULT_RUNS)),
        seed=int(_opt(args, cfg, "seed", 0)),
        mem_limit_bytes=_opt(args, cfg, "mem_limit_bytes"),
    )
    lat = report.latency
    print(
        f"{report.model} @ {resolution[0]}x{resolution[1]} "
        f"(compute {report.padded_resolution[0]}x{report.padded_resolution[1]}): "
        f"mean {lat.mean_ms:.2f} ms, std {lat.std_ms:.2f}, p50 {lat.p50_ms:.2f}, "
        f"p95 {lat.p95_ms:.2f} over {lat.runs} runs after {lat.warmup} warm-up runs"
    )
    out = _opt(args, cfg, "out")
    if out:
        Path(out).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        print(f"wrote {out}")
    return 0


def cmd_report(args, cfg) -> int:
    models_opt = _opt(args, cfg, "models", "")
    if isinstance(models_opt, str):
        models = [m for m in models_opt.split(",") if m]
    else:
        models = list(models_opt)
    for m in models:
        if m not in VARIANTS:
            raise CliError(f"unknown model {m!r}; expected one of {VARIANTS}")
    res_opt = _opt(args, cfg, "resolutions")
    if res_opt is None:
        resolutions = [tuple(r) for r in DEFAULT_RESOLUTIONS]
    elif isinstance(res_opt, str):
        resolutions = [_parse_resolution(r) for r in res_opt.split(",") if r]
    else:
        resolutions = [tuple(r) for r in res_opt]
    doc = accounting_report(
        models,
        resolutions,
        measure=bool(_opt(args, cfg, "profile", False)),
        warmup=int(_opt(args, cfg, "warmup", 1)),
        runs=int(_opt(args, cfg, "runs", 3)),
        seed=int(_opt(args, cfg, "seed", 0)),
    )
    sys.stdout.write(format_report_table(doc))
    out = _opt(args, cfg, "out")
    if out:
        Path(out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        print(f"wrote {out}")
    return 0


def cmd_convert_weights_check(args, cfg) -> int:
    variant = _opt(args, cfg, "model")
    weights_path = _opt(args, cfg, "weights")
    if not variant or not weights_path:
        raise CliError("convert-weights-check requires --model and --weights")
    model = build_model(variant)
    store = _load_store(weights_path)
    _check_store_against_model(model, store)
    print(f"ok: {len(store)} tensors match {variant}; fingerprint "
          f"{fingerprint(store):#018x}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pyraflow",
        description="Pyramidal optical flow inference and benchmarking",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config; flags override its values")
        p.add_argument("--out", help="output path for the structured document")

    p = sub.add_parser("profile", help="latency + accounting for one model")
    common(p)
    p.add_argument("--model", choices=VARIANTS)
    p.add_argument("--resolution", help="HxW (padded up to multiples of 64)")
    p.add_argument("--warmup", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mem-limit-bytes", dest="mem_limit_bytes", type=int)
    p.set_defaults(fn=cmd_profile)

    p = sub.add_parser("infer", help="flow for one image pair")
    common(p)
    p.add_argument("img1")
    p.add_argument("img2")
    p.add_argument("--model", choices=VARIANTS)
    p.add_argument("--weights")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="AEPE / Fl-all over a dataset directory")
    common(p)
    p.add_argument("dataset")
    p.add_argument("--model", choices=VARIANTS)
    p.add_argument("--weights")
    p.add_argument("--layout", choices=("sintel", "kitti"))
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="accounting table across models")
    common(p)
    p.add_argument("--models", help="comma-separated variant names")
    p.add_argument("--resolutions", help="comma-separated HxW list")
    p.add_argument("--profile", action="store_const", const=True, default=None,
                   help="include measured latency (non-deterministic)")
    p.add_argument("--warmup", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("convert-weights-check",
                       help="validate a CFW1 file against a model variant")
    common(p)
    p.add_argument("--model", choices=VARIANTS)
    p.add_argument("--weights")
    p.set_defaults(fn=cmd_convert_weights_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(getattr(args, "config", None))
        return args.fn(args, cfg)
    except (RuntimeError, ValueError, KeyError, OSError) as e:
        msg = str(e) or e.__class__.__name__
        print(f"error: {msg.splitlines()[0]}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
