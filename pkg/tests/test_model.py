import numpy as np
import pytest

from pyraflow.blocks import MissingWeightError, block_forward
from pyraflow.model import (
    ESTIMATOR_LEVELS,
    UnknownOverrideError,
    UnknownVariantError,
    build_model,
    count_flops,
    count_params,
    extract_pyramid,
    forward,
    init_weights,
    parameter_manifest,
)
from pyraflow.tensor import ShapeError
from pyraflow.weights import RecordingStore, WeightStore


def const_image(h, w, value=0.5):
    return np.full((3, h, w), value, np.float32)


def rand_image(rng, h, w):
    return rng.random((3, h, w)).astype(np.float32)


def zero_prediction_store(model, seed=0) -> WeightStore:
    """Random weights with all flow-producing heads zeroed."""
    src = init_weights(model, seed)
    store = WeightStore()
    last_ref = model.refiner.blocks[-1].name
    for entry in src.entries():
        data = entry.data
        if ".pred." in entry.name or entry.name.startswith(last_ref + "."):
            data = np.zeros_like(data)
        store.add(entry.name, data)
    return store


def level_params(report, level):
    return sum(v for k, v in report.per_block.items()
               if k.startswith(f"est.l{level}."))


# --------------------------------------------------------------------------
# build_model
# --------------------------------------------------------------------------


def test_build_pwcnet_plus_structure():
    m = build_model("pwcnet_plus")
    assert all(m.estimators[l].connectivity == "dense" for l in ESTIMATOR_LEVELS)
    assert m.refiner.depth == "seven" and len(m.refiner.blocks) == 7
    assert m.pyramid.kind == "conv"
    assert m.pyramid.channels == (16, 32, 64, 96, 128, 196)
    assert m.estimators[4].layer_channels == (128, 128, 96, 64, 32)


def test_build_compactflownet_structure():
    m = build_model("compactflownet")
    assert m.refiner.channels == (128, 64, 32, 2)
    assert m.refiner.conv_kind == "depthwise_separable"
    assert m.pyramid.kind == "mobilenet"
    assert all(m.estimators[l].connectivity == "sequential" for l in ESTIMATOR_LEVELS)
    assert all(m.estimators[l].conv_kind == "depthwise_separable"
               for l in ESTIMATOR_LEVELS)


def test_build_pwcnet_small_matches_plus_except_connectivity():
    small = build_model("pwcnet_small")
    plus = build_model("pwcnet_plus")
    for level in ESTIMATOR_LEVELS:
        a, b = small.estimators[level], plus.estimators[level]
        assert a.connectivity == "sequential" and b.connectivity == "dense"
        assert a.layer_channels == b.layer_channels
        assert a.conv_kind == b.conv_kind == "standard"
        assert a.in_static == b.in_static and a.in_cond == b.in_cond
    assert small.pyramid.channels == plus.pyramid.channels
    assert small.refiner.depth == plus.refiner.depth == "seven"


def test_build_rejects_unknown_variant_and_override():
    with pytest.raises(UnknownVariantError):
        build_model("flownet9000")
    with pytest.raises(UnknownOverrideError):
        build_model("pwcnet_plus", pyramid_depth=9)


def test_build_overrides_apply():
    m = build_model("compactflownet", corr_radius=3, estimator_conv_kind="standard")
    assert m.corr_radius == 3
    assert m.estimators[6].in_static == 49
    assert m.estimators[6].conv_kind == "standard"
    assert m.warp_scale == m.div_flow == 20.0
    m2 = build_model("pwcnet_plus", div_flow=10.0, warp_scale=1.0)
    assert m2.div_flow == 10.0 and m2.warp_scale == 1.0


def test_block_names_unique_across_model():
    for v in ("pwcnet_plus", "pwcnet_small", "compactflownet"):
        names = [b.name for b in build_model(v).all_blocks()]
        assert len(names) == len(set(names))


# --------------------------------------------------------------------------
# pyramid extraction
# --------------------------------------------------------------------------


def test_pyramid_shapes_512(rng):
    m = build_model("pwcnet_plus")
    feats = extract_pyramid(m, rand_image(rng, 512, 512), init_weights(m, 1))
    assert feats[6].shape == (196, 8, 8)
    for level in range(1, 7):
        ch = m.pyramid.channels[level - 1]
        assert feats[level].shape == (ch, 512 >> level, 512 >> level)


def test_pyramid_shapes_sintel_padded(rng):
    m = build_model("compactflownet")
    feats = extract_pyramid(m, rand_image(rng, 448, 1024), init_weights(m, 1))
    assert feats[2].shape[1:] == (112, 256)


def test_pyramid_shapes_agree_across_variants(rng):
    img = rand_image(rng, 128, 192)
    shapes = {}
    for v in ("pwcnet_plus", "compactflownet"):
        m = build_model(v)
        feats = extract_pyramid(m, img, init_weights(m, 7))
        shapes[v] = {l: f.shape for l, f in feats.items()}
    assert shapes["pwcnet_plus"] == shapes["compactflownet"]


def test_pyramid_levels_halve(rng):
    m = build_model("compactflownet")
    feats = extract_pyramid(m, rand_image(rng, 128, 64), init_weights(m, 2))
    for level in range(2, 7):
        prev, cur = feats[level - 1].shape, feats[level].shape
        assert (prev[1], prev[2]) == (2 * cur[1], 2 * cur[2])


def test_pyramid_rejects_non_divisible(rng):
    m = build_model("pwcnet_small")
    with pytest.raises(ShapeError):
        extract_pyramid(m, rand_image(rng, 100, 128), init_weights(m, 1))


# --------------------------------------------------------------------------
# forward
# --------------------------------------------------------------------------


@pytest.mark.parametrize("variant", ["pwcnet_small", "compactflownet"])
def test_forward_zero_prediction_weights_give_zero_flow(variant, rng):
    m = build_model(variant)
    store = zero_prediction_store(m)
    res = forward(m, rand_image(rng, 64, 64), rand_image(rng, 64, 64), store)
    for level, flow in res.flows.items():
        np.testing.assert_array_equal(flow.flow, np.zeros_like(flow.flow))
    np.testing.assert_array_equal(res.final.flow, np.zeros((2, 64, 64), np.float32))


def test_forward_shape_contract(rng):
    m = build_model("compactflownet")
    img = rand_image(rng, 64, 128)
    res = forward(m, img, img, init_weights(m, 5))
    for level in ESTIMATOR_LEVELS:
        assert res.flows[level].flow.shape == (2, 64 >> level, 128 >> level)
    assert res.final.flow.shape == (2, 64, 128)
    assert np.isfinite(res.final.flow).all()


def test_forward_deterministic_across_runs(rng):
    m = build_model("compactflownet")
    w = init_weights(m, 9)
    img1, img2 = rand_image(rng, 64, 64), rand_image(rng, 64, 64)
    a = forward(m, img1, img2, w)
    b = forward(m, img1, img2, w)
    np.testing.assert_array_equal(a.final.flow, b.final.flow)
    for level in ESTIMATOR_LEVELS:
        np.testing.assert_array_equal(a.flows[level].flow, b.flows[level].flow)


def test_forward_missing_weight_names_offending_block(rng):
    m = build_model("pwcnet_small")
    src = init_weights(m, 0)
    store = WeightStore()
    for entry in src.entries():
        if entry.name != "est.l3.pred.weight":
            store.add(entry.name, entry.data)
    with pytest.raises(MissingWeightError, match="est.l3.pred.weight"):
        forward(m, const_image(64, 64), const_image(64, 64), store)


def test_forward_validates_inputs(rng):
    m = build_model("compactflownet")
    w = init_weights(m, 0)
    with pytest.raises(ShapeError):
        forward(m, rand_image(rng, 64, 64), rand_image(rng, 64, 128), w)
    with pytest.raises(ValueError):
        forward(m, const_image(64, 64, 2.0), const_image(64, 64, 2.0), w)


def test_forward_consumes_exactly_declared_params(rng):
    for v in ("pwcnet_plus", "pwcnet_small", "compactflownet"):
        m = build_model(v)
        rec = RecordingStore(init_weights(m, 3))
        forward(m, rand_image(rng, 64, 64), rand_image(rng, 64, 64), rec)
        declared = {name: int(np.prod(shape))
                    for name, shape, _ in parameter_manifest(m)}
        assert rec.accessed == declared
        assert sum(rec.accessed.values()) == count_params(m).total


# --------------------------------------------------------------------------
# translation consistency (padding effects excluded)
# --------------------------------------------------------------------------


def interior_is_constant(t, margin):
    core = t[..., margin:-margin, margin:-margin]
    return core.size > 0 and float(core.max()) == float(core.min())


def test_pyramid_features_constant_in_interior(rng):
    m = build_model("pwcnet_small")
    feats = extract_pyramid(m, const_image(256, 256), init_weights(m, 4))
    for level in (1, 2, 3):
        for c in range(0, feats[level].shape[0], 7):
            assert interior_is_constant(feats[level][c], margin=8)


def test_estimator_constant_inputs_give_constant_interior_flow(rng):
    from pyraflow.model import _estimator_forward

    m = build_model("pwcnet_small")
    est = m.estimators[2]
    w = init_weights(m, 4)
    cv = np.full((81, 64, 64), 0.3, np.float32)
    feat = np.full((32, 64, 64), -0.2, np.float32)
    upflow = np.full((2, 64, 64), 0.05, np.float32)
    upfeat = np.full((2, 64, 64), 0.7, np.float32)
    flow, _feat, _up = _estimator_forward(est, [cv, feat, upflow, upfeat], w)
    assert interior_is_constant(flow[0], margin=8)
    assert interior_is_constant(flow[1], margin=8)


def test_refiner_constant_features_give_constant_interior(rng):
    from pyraflow.model import _refiner_forward

    m = build_model("compactflownet")
    w = init_weights(m, 6)
    feat = np.full((32, 64, 64), 0.4, np.float32)
    out = _refiner_forward(m.refiner, feat, w)
    assert interior_is_constant(out[0], margin=10)
    assert interior_is_constant(out[1], margin=10)


# --------------------------------------------------------------------------
# accounting
# --------------------------------------------------------------------------


def test_feature_extractor_params_match_published_profile():
    fe = count_params(build_model("pwcnet_plus")).per_stage["feature_extractor"]
    assert abs(fe - 1.67e6) / 1.67e6 <= 0.02


def test_sequential_estimator_smaller_than_dense_at_every_level():
    dense = count_params(build_model("pwcnet_plus"))
    seq = count_params(build_model("pwcnet_small"))
    for level in ESTIMATOR_LEVELS:
        assert level_params(seq, level) < level_params(dense, level)


def test_separable_blocks_beat_standard_at_equal_channels():
    ds = build_model("compactflownet")
    std = build_model("compactflownet", estimator_conv_kind="standard",
                      refiner_conv_kind="standard")
    p_ds, p_std = count_params(ds), count_params(std)
    f_ds = count_flops(ds, 256, 256)
    f_std = count_flops(std, 256, 256)
    for stage in ("flow_estimator", "flow_refiner"):
        assert p_ds.per_stage[stage] < p_std.per_stage[stage]
        assert f_ds.macs.per_stage[stage] < f_std.macs.per_stage[stage]


def test_compactflownet_parameter_budget():
    report = count_params(build_model("compactflownet"))
    assert report.total < 5_000_000
    assert report.per_stage["feature_extractor"] < 4_500_000


def test_mobilenet_backbone_parameter_count():
    fe = count_params(build_model("compactflownet")).per_stage["feature_extractor"]
    assert abs(fe - 3.12e6) / 3.12e6 <= 0.10


def test_flops_area_scaling_fully_convolutional():
    for v in ("pwcnet_plus", "pwcnet_small"):
        m = build_model(v)
        assert count_flops(m, 512, 512).total_macs == 4 * count_flops(m, 256, 256).total_macs
    m = build_model("compactflownet")
    a = count_flops(m, 512, 512).macs.per_stage
    b = count_flops(m, 256, 256).macs.per_stage
    for stage in ("flow_estimator", "flow_refiner"):  # no pooled SE branches here
        assert a[stage] == 4 * b[stage]


def test_flops_ordering_across_variants():
    for res in ((512, 512), (448, 1024), (1088, 1920)):
        macs = {v: count_flops(build_model(v), *res).forward_macs
                for v in ("pwcnet_plus", "pwcnet_small", "compactflownet")}
        assert macs["compactflownet"] < macs["pwcnet_small"] < macs["pwcnet_plus"]


def test_count_flops_rejects_unaligned():
    with pytest.raises(ShapeError):
        count_flops(build_model("compactflownet"), 100, 128)


def test_params_are_resolution_independent_pins():
    # exact integer pins guard against accidental architecture drift
    plus = count_params(build_model("pwcnet_plus"))
    small = count_params(build_model("pwcnet_small"))
    compact = count_params(build_model("compactflownet"))
    assert plus.per_stage["feature_extractor"] == 1_665_804
    assert plus.total == 9_301_530
    assert small.total == 4_700_960
    assert compact.per_stage["feature_extractor"] == 3_083_900
    assert compact.total == 3_413_858
