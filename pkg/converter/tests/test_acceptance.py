"""Converter shipping gate: the checkpoint round-trip must reproduce
container fingerprints bit-for-bit, and converted weights must verify
against engine-produced golden outputs within 1e-4.
"""

import json
import re

import numpy as np

from cfwconvert.cfw import fingerprint_of, read_cfw
from cfwconvert.convert import convert
from cfwconvert.engine import run_engine
from cfwconvert.namemap import load_name_map
from cfwconvert.verify import verify

from conftest import (
    inverse_export,
    save_checkpoint,
    synthesize_state_dict,
    write_png,
)


def report_line(ok: bool, text: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion 13: {text}")


def test_criterion_13_round_trip_and_golden_verify(tmp_path, maps_dir):
    # fixture -> external archive -> container reproduces the fingerprint
    map_path = str(maps_dir / "pwcnet_small.yaml")
    nm = load_name_map(map_path)
    ckpt1 = tmp_path / "ckpt1.pt"
    save_checkpoint(synthesize_state_dict(nm, seed=13, with_extras=False), ckpt1)
    fixture = tmp_path / "fixture.cfw"
    summary1 = convert(str(ckpt1), map_path, "pwcnet_small", str(fixture))

    ckpt2 = tmp_path / "ckpt2.pt"
    save_checkpoint(inverse_export(read_cfw(fixture.read_bytes()), nm), ckpt2)
    rebuilt = tmp_path / "rebuilt.cfw"
    summary2 = convert(str(ckpt2), map_path, "pwcnet_small", str(rebuilt))

    round_trip_ok = (
        summary1.fingerprint == summary2.fingerprint
        == fingerprint_of(fixture.read_bytes())
        and fixture.read_bytes() == rebuilt.read_bytes()
    )

    # the engine agrees on the container fingerprint (cross-implementation)
    check_out = run_engine("convert-weights-check", "--model", "pwcnet_small",
                           "--weights", str(fixture))
    engine_fp = int(re.search(r"fingerprint (0x[0-9a-f]+)", check_out).group(1), 16)
    cross_ok = engine_fp == summary1.fingerprint

    # converted weights reproduce engine golden outputs within tolerance
    cmap = str(maps_dir / "compactflownet.yaml")
    cnm = load_name_map(cmap)
    ckpt3 = tmp_path / "ckpt3.pt"
    save_checkpoint(synthesize_state_dict(cnm, seed=31), ckpt3)
    weights = tmp_path / "compact.cfw"
    convert(str(ckpt3), cmap, "compactflownet", str(weights))

    gdir = tmp_path / "golden"
    gdir.mkdir()
    rng = np.random.default_rng(31)
    write_png(gdir / "img1.png", rng.random((3, 64, 64)).astype(np.float32))
    write_png(gdir / "img2.png", rng.random((3, 64, 64)).astype(np.float32))
    run_engine("infer", str(gdir / "img1.png"), str(gdir / "img2.png"),
               "--model", "compactflownet", "--weights", str(weights),
               "--out", str(gdir / "flow.flo"))
    (gdir / "meta.json").write_text(json.dumps({"variant": "compactflownet"}))
    report = verify(str(weights), str(gdir), tolerance=1e-4)

    ok = round_trip_ok and cross_ok and report.passed
    report_line(ok, f"round-trip fingerprint {summary1.fingerprint:#018x} "
                    f"reproduced; engine agrees; golden verify max err "
                    f"{report.max_abs_error:.1e} <= 1e-4")
    assert ok
