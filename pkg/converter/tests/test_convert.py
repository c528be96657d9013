import yaml

import numpy as np
import pytest

from cfwconvert.cfw import fingerprint_of, read_cfw
from cfwconvert.convert import ConvertError, convert
from cfwconvert.namemap import load_name_map

from conftest import save_checkpoint, synthesize_state_dict


@pytest.fixture(scope="module")
def compact_conversion(tmp_path_factory, maps_dir):
    tmp = tmp_path_factory.mktemp("convert")
    map_path = str(maps_dir / "compactflownet.yaml")
    nm = load_name_map(map_path)
    ckpt = tmp / "ckpt.pt"
    save_checkpoint(synthesize_state_dict(nm, seed=5), ckpt)
    out = tmp / "compact.cfw"
    summary = convert(str(ckpt), map_path, "compactflownet", str(out))
    return nm, ckpt, out, summary, map_path


def test_convert_produces_valid_container(compact_conversion):
    nm, _ckpt, out, summary, _mp = compact_conversion
    assert out.exists()
    tensors = read_cfw(out.read_bytes())
    assert list(tensors) == nm.targets()
    assert summary.mapped == nm.targets()
    assert summary.fingerprint == fingerprint_of(out.read_bytes())


def test_convert_lists_unmapped_sources(compact_conversion):
    _nm, _ckpt, _out, summary, _mp = compact_conversion
    assert summary.unmapped_sources
    assert all(name.endswith("num_batches_tracked")
               for name in summary.unmapped_sources)
    assert "unmapped source tensors" in summary.render()


def test_convert_is_deterministic(compact_conversion, tmp_path):
    _nm, ckpt, out, _summary, map_path = compact_conversion
    again = tmp_path / "again.cfw"
    convert(str(ckpt), map_path, "compactflownet", str(again))
    assert again.read_bytes() == out.read_bytes()


def test_convert_applies_fold(compact_conversion):
    nm, ckpt, out, _summary, _mp = compact_conversion
    from cfwconvert.checkpoint import read_checkpoint
    from cfwconvert.namemap import fold_batchnorm

    state = read_checkpoint(str(ckpt))
    tensors = read_cfw(out.read_bytes())
    rule = next(r for r in nm.rules if getattr(r, "conv_weight", "").endswith(
        "stem.conv.weight"))
    fw, fb = fold_batchnorm(state[rule.conv_weight], None, state[rule.gamma],
                            state[rule.beta], state[rule.mean], state[rule.var],
                            rule.eps)
    np.testing.assert_array_equal(tensors["bb.stem.weight"], fw)
    np.testing.assert_array_equal(tensors["bb.stem.bias"], fb)


def test_convert_missing_block_leaves_no_file(tmp_path, maps_dir):
    map_path = maps_dir / "pwcnet_small.yaml"
    doc = yaml.safe_load(map_path.read_text())
    removed = doc["rules"].pop(40)
    crippled = tmp_path / "crippled.yaml"
    crippled.write_text(yaml.safe_dump(doc, sort_keys=False))

    nm = load_name_map(str(map_path))
    ckpt = tmp_path / "ckpt.pt"
    save_checkpoint(synthesize_state_dict(nm, seed=1), ckpt)
    out = tmp_path / "small.cfw"
    with pytest.raises(ConvertError, match=removed["target"]):
        convert(str(ckpt), str(crippled), "pwcnet_small", str(out))
    assert not out.exists()
    assert not out.with_name(out.name + ".tmp").exists()


def test_convert_missing_source_names_target(tmp_path, maps_dir):
    map_path = str(maps_dir / "pwcnet_small.yaml")
    nm = load_name_map(map_path)
    state = synthesize_state_dict(nm, seed=2)
    state.pop("decoder.level4.predict.weight")
    ckpt = tmp_path / "ckpt.pt"
    save_checkpoint(state, ckpt)
    out = tmp_path / "small.cfw"
    with pytest.raises(ConvertError, match="decoder.level4.predict.weight"):
        convert(str(ckpt), map_path, "pwcnet_small", str(out))
    assert not out.exists()


def test_convert_rejects_variant_mismatch(tmp_path, maps_dir):
    with pytest.raises(ConvertError, match="variant"):
        convert("whatever.pt", str(maps_dir / "pwcnet_small.yaml"),
                "compactflownet", str(tmp_path / "x.cfw"))


def test_cli_convert_and_errors(tmp_path, maps_dir, capsys):
    from cfwconvert.cli import main

    map_path = str(maps_dir / "pwcnet_plus.yaml")
    nm = load_name_map(map_path)
    ckpt = tmp_path / "ckpt.pt"
    save_checkpoint(synthesize_state_dict(nm, seed=3), ckpt)
    out = tmp_path / "plus.cfw"
    rc = main(["convert", "--checkpoint", str(ckpt), "--map", map_path,
               "--variant", "pwcnet_plus", "--out", str(out)])
    assert rc == 0
    assert "fingerprint" in capsys.readouterr().out
    assert out.exists()

    rc = main(["convert", "--checkpoint", str(ckpt), "--map", map_path,
               "--variant", "compactflownet", "--out", str(tmp_path / "y.cfw")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err
