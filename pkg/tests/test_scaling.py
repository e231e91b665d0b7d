import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esmerge import (
    LayerRules,
    LayerType,
    Variant,
    apply_variant,
    classify_layers,
    inter_dim_coeffs,
    inter_layer_coeffs,
    inter_task_coeffs,
    norm_order,
)


def block(norm: float) -> np.ndarray:
    return np.array([[norm]])


# --- inter-task --------------------------------------------------------------


def test_task_coeffs_equal_norms():
    np.testing.assert_array_equal(
        inter_task_coeffs([block(2.0)] * 3, exponent=2.0), np.ones(3)
    )


def test_task_coeffs_hand_values():
    np.testing.assert_array_equal(
        inter_task_coeffs([block(1.0), block(3.0)], exponent=2.0),
        np.array([0.25, 2.25]),
    )


def test_task_coeffs_single_task():
    np.testing.assert_array_equal(inter_task_coeffs([block(5.0)], 2.0), np.ones(1))


def test_task_coeffs_all_zero():
    np.testing.assert_array_equal(inter_task_coeffs([block(0.0)] * 4, 2.0), np.ones(4))


def test_task_coeffs_empty_rejected():
    with pytest.raises(ValueError):
        inter_task_coeffs([], 2.0)


# --- inter-dimension -----------------------------------------------------------


def test_dim_coeffs_equal_columns():
    A = np.array([[1.0, 1.0], [1.0, -1.0]])  # both columns norm sqrt(2)
    np.testing.assert_array_equal(inter_dim_coeffs(A, 2.0), np.ones(2))


def test_dim_coeffs_hand_values():
    A = np.array([[0.0, 2.0]])
    np.testing.assert_array_equal(inter_dim_coeffs(A, 2.0), np.array([0.0, 4.0]))


def test_dim_coeffs_zero_matrix():
    np.testing.assert_array_equal(inter_dim_coeffs(np.zeros((3, 4)), 2.0), np.ones(4))


# --- inter-layer ----------------------------------------------------------------


def test_layer_coeffs_same_type_group():
    merged = {
        "blk.0.mlp.c_fc.weight": block(1.0),
        "blk.1.mlp.c_fc.weight": block(3.0),
    }
    coeffs = inter_layer_coeffs(merged, LayerRules.default(), 2.0)
    assert coeffs["blk.0.mlp.c_fc.weight"] == 0.25
    assert coeffs["blk.1.mlp.c_fc.weight"] == 2.25


def test_layer_coeffs_equal_norms_are_one():
    merged = {f"blk.{i}.attn.out_proj.weight": block(2.0) for i in range(4)}
    assert all(v == 1.0 for v in inter_layer_coeffs(merged, LayerRules.default(), 2.0).values())


def test_layer_coeffs_singleton_group_and_other():
    merged = {
        "blk.0.mlp.c_fc.weight": block(9.0),  # alone in its group
        "some.unmatched.weight": block(100.0),  # classifies as Other
    }
    coeffs = inter_layer_coeffs(merged, LayerRules.default(), 2.0)
    assert coeffs == {"blk.0.mlp.c_fc.weight": 1.0, "some.unmatched.weight": 1.0}


def test_layer_coeffs_groups_do_not_mix():
    merged = {
        "blk.0.mlp.c_fc.weight": block(1.0),
        "blk.1.mlp.c_fc.weight": block(3.0),
        "blk.0.mlp.c_proj.weight": block(10.0),
        "blk.1.mlp.c_proj.weight": block(10.0),
    }
    coeffs = inter_layer_coeffs(merged, LayerRules.default(), 2.0)
    assert coeffs["blk.0.mlp.c_fc.weight"] == 0.25
    assert coeffs["blk.0.mlp.c_proj.weight"] == 1.0


# --- variants -------------------------------------------------------------------


@pytest.mark.parametrize(
    "gamma,variant,expected",
    [
        (0.25, Variant.FULL, 0.25),
        (0.25, Variant.REVERSE, 4.0),
        (0.25, Variant.NOISE_MINUS, 0.25),
        (0.25, Variant.SIGNAL_PLUS, 1.0),
        (1.0, Variant.REVERSE, 1.0),
        (1.0, Variant.NOISE_MINUS, 1.0),
        (1.0, Variant.SIGNAL_PLUS, 1.0),
        (2.25, Variant.NOISE_MINUS, 1.0),
        (2.25, Variant.SIGNAL_PLUS, 2.25),
        (2.25, Variant.NONE, 1.0),
    ],
)
def test_variant_table(gamma, variant, expected):
    assert apply_variant(gamma, variant) == expected


def test_variant_reverse_rejects_zero():
    with pytest.raises(ValueError):
        apply_variant(0.0, Variant.REVERSE)


def test_variant_rejects_negative():
    with pytest.raises(ValueError):
        apply_variant(-0.5, Variant.FULL)


@given(st.floats(min_value=0.0, max_value=1e9))
@settings(max_examples=100)
def test_variant_factorization_identity(gamma):
    low = apply_variant(gamma, Variant.NOISE_MINUS)
    high = apply_variant(gamma, Variant.SIGNAL_PLUS)
    assert low * high == apply_variant(gamma, Variant.FULL)


# --- exponent knob ----------------------------------------------------------------


def test_exponent_zero_disables_scaling(rng):
    blocks = [rng.standard_normal((2, 3)) for _ in range(4)]
    np.testing.assert_array_equal(inter_task_coeffs(blocks, 0.0), np.ones(4))
    np.testing.assert_array_equal(
        inter_dim_coeffs(rng.standard_normal((3, 5)), 0.0), np.ones(5)
    )


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=0.01, max_value=100.0), min_size=2, max_size=8))
def test_mean_one_property_exponent_one(norms):
    coeffs = inter_task_coeffs([block(n) for n in norms], exponent=1.0)
    assert abs(coeffs.mean() - 1.0) <= 1e-10


def test_monotone_in_norm():
    coeffs = inter_task_coeffs([block(n) for n in (1.0, 2.0, 3.0, 4.0)], 2.0)
    assert np.all(np.diff(coeffs) > 0)


def test_negative_exponent_rejected():
    with pytest.raises(ValueError):
        inter_task_coeffs([block(1.0)], exponent=-1.0)


# --- classification -----------------------------------------------------------------


def test_classify_spec_examples():
    rules = LayerRules.default()
    assert rules.classify("blk.0.attn.in_proj_weight") is LayerType.ATTN_QKV
    assert rules.classify("blk.3.mlp.c_fc.weight") is LayerType.MLP_UP
    assert rules.classify("blk.3.mlp.c_proj.weight") is LayerType.MLP_DOWN
    assert rules.classify("blk.1.attn.out_proj.weight") is LayerType.ATTN_OUT
    assert rules.classify("weird.2d.weight") is LayerType.OTHER


def test_classify_layers_map():
    names = ["blk.0.attn.in_proj_weight", "pos_embed"]
    out = classify_layers(names, LayerRules.default())
    assert out["blk.0.attn.in_proj_weight"] is LayerType.ATTN_QKV
    assert out["pos_embed"] is LayerType.OTHER


def test_first_match_wins():
    rules = LayerRules.compile(
        [(r"special", LayerType.MLP_DOWN), (r"special.*", LayerType.MLP_UP)],
        include=[r"weight$"],
    )
    assert rules.classify("special.weight") is LayerType.MLP_DOWN


def test_matrix_layer_selection():
    rules = LayerRules.default()
    assert rules.is_matrix_layer("blk.0.attn.in_proj_weight", 2)
    assert not rules.is_matrix_layer("blk.0.attn.in_proj_bias", 1)
    assert not rules.is_matrix_layer("conv1.weight", 4)  # rank filter
    assert not rules.is_matrix_layer("positional_embedding", 2)  # name filter


def test_rules_from_file(tmp_path):
    path = tmp_path / "rules.txt"
    path.write_text(
        "# custom scheme\n"
        "[include]\n"
        "kernel$\n"
        "[rules]\n"
        "attn\\.qkv\\.kernel\tAttnQKV\n"
        "ffn\\.up\\.kernel\tMlpUp\n"
    )
    rules = LayerRules.from_file(path)
    assert rules.classify("l0.attn.qkv.kernel") is LayerType.ATTN_QKV
    assert rules.is_matrix_layer("l0.ffn.up.kernel", 2)
    assert not rules.is_matrix_layer("l0.ffn.up.weight", 2)


def test_rules_file_rejects_unknown_type(tmp_path):
    path = tmp_path / "rules.txt"
    path.write_text("[rules]\nfoo\tNotAType\n")
    with pytest.raises(ValueError):
        LayerRules.from_file(path)


def test_rules_malformed_pattern():
    with pytest.raises(ValueError):
        LayerRules.compile([(r"(", LayerType.OTHER)], include=[])


# --- norm ordering --------------------------------------------------------------------


def make_mats():
    return {
        "a": np.full((1, 1), 3.0),
        "b": np.full((1, 1), 1.0),
        "c": np.full((1, 1), 2.0),
    }


def test_norm_order_descending():
    assert norm_order(make_mats(), "descending") == ["a", "c", "b"]


def test_norm_order_ascending():
    assert norm_order(make_mats(), "ascending") == ["b", "c", "a"]


def test_norm_order_ties_lexicographic():
    mats = {k: np.ones((1, 1)) for k in ("z", "m", "a")}
    assert norm_order(mats, "descending") == ["a", "m", "z"]


def test_norm_order_random_is_seeded():
    mats = make_mats()
    first = norm_order(mats, "random", seed=3)
    second = norm_order(mats, "random", seed=3)
    assert first == second
    assert sorted(first) == ["a", "b", "c"]


def test_norm_order_empty_rejected():
    with pytest.raises(ValueError):
        norm_order({}, "descending")
