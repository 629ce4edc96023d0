"""White-box feature extraction: the logit identity, permutation covariance
and attack-dataset assembly."""

import numpy as np
import pytest

from conftest import random_inputs, rng

from shadowalign.attack import (
    FeatureSpec,
    build_attack_dataset,
    extract_features,
    input_activation_features,
)
from shadowalign.data import LabeledDataset
from shadowalign.errors import ShapeError
from shadowalign.nn import backward, build_mlp, forward, forward_batch
from shadowalign.symmetry import random_permutation, permute_layer
from shadowalign.training import init_weights


def full_spec(model):
    n = model.n_param_layers
    return FeatureSpec(
        oa_layers=tuple(range(n)),
        grad_layers=tuple(range(n)),
        include_input_activations=True,
    )


def test_ia_sums_to_true_class_logit(mid_mlp):
    g = rng(0)
    for _ in range(20):
        x = g.standard_normal(6).astype(np.float32)
        y = int(g.integers(3))
        feats = extract_features(mid_mlp, x, y, full_spec(mid_mlp))
        trace = forward(mid_mlp, x)
        _, head = mid_mlp.param_layer(-1)
        logit = trace.logits[y]
        assert abs(feats.groups["ia"].sum() + head.b[y] - logit) < 1e-5


def test_oa_of_permuted_layer_is_permuted_vector(mid_mlp):
    g = rng(1)
    x = g.standard_normal(6).astype(np.float32)
    spec = full_spec(mid_mlp)
    before = extract_features(mid_mlp, x, 0, spec)
    perm = random_permutation(8, g)
    permuted_model = permute_layer(mid_mlp, 0, perm)
    after = extract_features(permuted_model, x, 0, spec)
    # the permuted layer's activations move with the units (up to GEMM
    # rounding, which depends on row position)
    np.testing.assert_allclose(
        after.groups["oa0"][perm.mapping], before.groups["oa0"], rtol=0, atol=1e-6
    )
    # the output layer is untouched by hidden permutations
    np.testing.assert_allclose(after.groups["oa2"], before.groups["oa2"], atol=1e-6)


def test_gradient_features_permute_with_the_units(mid_mlp):
    g = rng(2)
    x = g.standard_normal(6).astype(np.float32)
    perm = random_permutation(8, g)
    permuted_model = permute_layer(mid_mlp, 0, perm)
    g_before = backward(mid_mlp, x, 1)
    g_after = backward(permuted_model, x, 1)
    np.testing.assert_allclose(
        g_after.weights[0][perm.mapping], g_before.weights[0], rtol=0, atol=1e-6
    )
    np.testing.assert_allclose(
        g_after.biases[0][perm.mapping], g_before.biases[0], rtol=0, atol=1e-6
    )
    np.testing.assert_allclose(
        g_after.weights[1][:, perm.mapping], g_before.weights[1], rtol=0, atol=1e-6
    )


def test_confident_record_has_vanishing_gradients():
    model = init_weights(build_mlp([4, 6], 2), 3)
    model.layers[-1].b[...] = [40.0, -40.0]
    x = rng(3).standard_normal(4).astype(np.float32)
    feats = extract_features(model, x, 0, full_spec(model))
    assert np.abs(feats.groups["g1"]).max() < 1e-6
    np.testing.assert_allclose(feats.groups["oa1"], [1.0, 0.0], atol=1e-6)


def test_bias_gradient_concatenated_after_weights(mid_mlp):
    x = rng(4).standard_normal(6).astype(np.float32)
    feats = extract_features(mid_mlp, x, 0, full_spec(mid_mlp))
    grads = backward(mid_mlp, x, 0)
    expected = np.concatenate([grads.weights[0].ravel(), grads.biases[0]])
    np.testing.assert_allclose(feats.groups["g0"], expected, atol=1e-7)


def pool_of(model, n, n_classes, seed=5):
    g = rng(seed)
    return LabeledDataset(
        x=g.standard_normal((n, *model.input_shape)).astype(np.float32),
        y=g.integers(0, n_classes, n).astype(np.int64),
        ids=np.arange(100, 100 + n, dtype=np.int64),
        n_classes=n_classes,
    )


def test_attack_dataset_single_model_all_members(mid_mlp):
    pool = pool_of(mid_mlp, 12, 3)
    spec = FeatureSpec(oa_layers=(-1,))
    ds = build_attack_dataset([mid_mlp], [pool.ids], pool, spec)
    assert ds.members.all()
    assert len(ds) == 12


def test_attack_dataset_two_disjoint_halves_balanced(mid_mlp):
    pool = pool_of(mid_mlp, 20, 3)
    half_a, half_b = pool.ids[:10], pool.ids[10:]
    other = init_weights(build_mlp([6, 8, 5], 3), seed=77)
    spec = FeatureSpec(oa_layers=(-1,))
    ds = build_attack_dataset([mid_mlp, other], [half_a, half_b], pool, spec)
    assert len(ds) == 40
    assert ds.members.sum() == 20  # exactly balanced by construction


def test_attack_dataset_labels_match_indicator_oracle(mid_mlp):
    pool = pool_of(mid_mlp, 15, 3)
    member_ids = pool.ids[[1, 3, 8]]
    spec = FeatureSpec(oa_layers=(0,), grad_layers=(1,))
    ds = build_attack_dataset([mid_mlp], [member_ids], pool, spec)
    oracle = np.array([1 if i in set(member_ids) else 0 for i in pool.ids])
    np.testing.assert_array_equal(ds.members, oracle)
    # rows are the per-record features
    single = extract_features(mid_mlp, pool.x[4], int(pool.y[4]), spec)
    np.testing.assert_allclose(ds.groups["g1"][4], single.groups["g1"], atol=1e-7)


def test_negative_layer_indices_normalise(mid_mlp):
    spec = FeatureSpec(oa_layers=(-2,), grad_layers=(-1,)).normalized(mid_mlp)
    assert spec.oa_layers == (1,)
    assert spec.grad_layers == (2,)


def test_invalid_class_rejected(mid_mlp):
    with pytest.raises(ShapeError):
        extract_features(mid_mlp, np.zeros(6, np.float32), 9, full_spec(mid_mlp))
