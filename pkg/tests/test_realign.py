"""Similarity costs, planted-permutation recovery, sweep properties, the
sorting baseline and the align-then-train pipeline."""

import numpy as np
import pytest

from conftest import max_output_deviation, random_inputs, rng

from shadowalign.assignment import assignment_cost
from shadowalign.data import SyntheticSpec, gen_synthetic
from shadowalign.errors import ShapeError
from shadowalign.metrics import wms
from shadowalign.nn import Dense, Model, build_cnn, build_mlp
from shadowalign.realign import (
    CostMatrix,
    RealignPlan,
    hungarian,
    realign,
    realign_after_init,
    realign_bottom_up,
    realign_top_down,
    sim_activation,
    sim_correlation,
    sim_weight,
    weight_sort_canonical,
)
from shadowalign.rng import SeedBundle
from shadowalign.symmetry import Permutation, random_permutation, permute_layer
from shadowalign.training import TrainConfig, init_weights, train


def trained_pair(seed_a=1, seed_b=2, arch="mlp"):
    """Two models of one architecture trained on the same data with different
    weight initialisations."""
    g = rng(1000)
    if arch == "mlp":
        spec = SyntheticSpec("blobs", n_classes=4, n_per_class=80, dim=10, separation=3.0)
        template = build_mlp([10, 12, 8], 4)
    else:
        spec = SyntheticSpec(
            "images", n_classes=3, n_per_class=60, image_size=10, separation=3.0
        )
        template = build_cnn(10, 3, conv_filters=[4, 6], fc_sizes=[10], kernel=3, dropout_p=0.0)
    ds = gen_synthetic(spec, g)
    n = len(ds)
    tr = ds.subset(np.arange(0, int(n * 0.8)))
    va = ds.subset(np.arange(int(n * 0.8), n))
    cfg = TrainConfig(lr=0.005, max_epochs=15, patience=3)
    m_a, _ = train(template, tr, va, SeedBundle(seed_a, 11, 12), cfg)
    m_b, _ = train(template, tr, va, SeedBundle(seed_b, 11, 12), cfg)
    return m_a, m_b, va.x[:60]


def planted(model, seed=5):
    """Randomly permute every hidden layer; returns (permuted model, perms)."""
    g = rng(seed)
    out = model
    perms = []
    for layer in range(model.n_param_layers - 1):
        _, lyr = model.param_layer(layer)
        perm = random_permutation(lyr.out_size, g)
        out = permute_layer(out, layer, perm)
        perms.append(perm)
    return out, perms


# ---------------------------------------------------------------------------
# Similarity costs


def test_sim_weight_identical_models_zero_diagonal(mid_mlp):
    cost = sim_weight(mid_mlp, mid_mlp, 0, "input")
    assert np.allclose(np.diag(cost.values), 0)
    assert hungarian(cost).is_identity()


def test_sim_weight_recovers_planted_permutation(mid_mlp):
    perm = random_permutation(8, rng(3))
    shadow = permute_layer(mid_mlp, 0, perm)
    cost = sim_weight(shadow, mid_mlp, 0, "input")
    recovered = hungarian(cost)
    np.testing.assert_array_equal(recovered.mapping, perm.inverse().mapping)


def test_sim_weight_hand_two_neuron_swap():
    def make(w_rows):
        m = build_mlp([2, 2], 2)
        m.layers[0].w[...] = w_rows
        return m

    shadow = make([[1, 0], [0, 1]])
    target = make([[0, 1], [1, 0]])
    cost = sim_weight(shadow, target, 0, "input")
    np.testing.assert_allclose(np.diag(cost.values), np.sqrt(2), atol=1e-6)
    np.testing.assert_allclose(cost.values[0, 1], 0, atol=1e-6)
    np.testing.assert_allclose(cost.values[1, 0], 0, atol=1e-6)
    np.testing.assert_array_equal(hungarian(cost).mapping, [1, 0])


def test_sim_activation_identity_and_planted(mid_mlp):
    probe = random_inputs(mid_mlp, 40)
    cost = sim_activation(mid_mlp, mid_mlp, 1, probe)
    assert np.allclose(np.diag(cost.values), 0)
    perm = random_permutation(5, rng(4))
    shadow = permute_layer(mid_mlp, 1, perm)
    recovered = hungarian(sim_activation(shadow, mid_mlp, 1, probe))
    np.testing.assert_array_equal(recovered.mapping, perm.inverse().mapping)


def test_sim_activation_hand_two_records():
    # one hidden unit passes the first coordinate, the other the second;
    # two probe records make the activation series distinguish them exactly
    model = build_mlp([2, 2], 2, activation="none")
    model.layers[0].w[...] = [[1, 0], [0, 1]]
    swapped = permute_layer(model, 0, Permutation(np.array([1, 0])))
    probe = np.array([[1.0, 0.0], [0.0, 2.0]], dtype=np.float32)
    cost = sim_activation(swapped, model, 0, probe)
    np.testing.assert_allclose(cost.values, [[np.sqrt(5), 0], [0, np.sqrt(5)]], atol=1e-6)


def test_sim_correlation_identity_diagonal_minus_one(mid_mlp):
    probe = random_inputs(mid_mlp, 50)
    cost = sim_correlation(mid_mlp, mid_mlp, 0, probe)
    assert np.allclose(np.diag(cost.values), -1, atol=1e-9)


def test_sim_correlation_recovers_planted(mid_mlp):
    probe = random_inputs(mid_mlp, 50)
    perm = random_permutation(8, rng(5))
    shadow = permute_layer(mid_mlp, 0, perm)
    recovered = hungarian(sim_correlation(shadow, mid_mlp, 0, probe))
    np.testing.assert_array_equal(recovered.mapping, perm.inverse().mapping)


def test_pearson_invariant_under_affine_rescaling(mid_mlp):
    """Scaling a unit's activations (via the ReLU scale symmetry) leaves its
    correlation row unchanged."""
    from shadowalign.realign import activation_series, correlation_matrix

    probe = random_inputs(mid_mlp, 50)
    series = activation_series(mid_mlp, 0, probe)
    scaled = 2.0 * series + 3.0
    np.testing.assert_allclose(
        correlation_matrix(series, series), correlation_matrix(scaled, series), atol=1e-9
    )


def test_constant_series_correlate_with_nothing():
    from shadowalign.realign import correlation_matrix

    a = np.vstack([np.ones(10), np.arange(10.0)])
    b = np.vstack([np.arange(10.0), np.arange(10.0)])
    rho = correlation_matrix(a, b)
    assert rho[0, 0] == 0.0 and rho[0, 1] == 0.0
    assert abs(rho[1, 0] - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# Sweeps


def test_bottom_up_identity_for_equal_models(mid_mlp):
    aligned, plan = realign_bottom_up(mid_mlp, mid_mlp, "weight")
    assert plan.is_identity()
    assert max_output_deviation(mid_mlp, aligned, random_inputs(mid_mlp, 50)) == 0


@pytest.mark.parametrize("method", ["weight", "activation", "correlation"])
@pytest.mark.parametrize("direction", ["bottom_up", "top_down"])
def test_planted_permutations_fully_recovered_mlp(method, direction):
    model = init_weights(build_mlp([6, 9, 7], 3), seed=21)
    shadow, _perms = planted(model, seed=31)
    probe = random_inputs(model, 60)
    aligned, plan = realign(shadow, model, method, direction, probe_x=probe)
    for layer in range(model.n_param_layers):
        assert wms(model, aligned, layer) < 1e-5
    assert max_output_deviation(shadow, aligned, probe) < 1e-5


@pytest.mark.parametrize("method", ["weight", "activation", "correlation"])
def test_planted_permutations_fully_recovered_cnn(method):
    # seed 305 gives a model with no dead units on the probe; constant
    # activation series are indistinguishable to activation-based matching
    cnn = init_weights(
        build_cnn(12, 3, conv_filters=[4, 6], fc_sizes=[10], kernel=3, dropout_p=0.0),
        seed=305,
    )
    shadow, _perms = planted(cnn, seed=41)
    probe = random_inputs(cnn, 40)
    aligned, _plan = realign(shadow, cnn, method, "bottom_up", probe_x=probe)
    for layer in range(cnn.n_param_layers):
        assert wms(cnn, aligned, layer) < 1e-5


def test_realignment_reduces_wms_on_trained_shadows():
    target, shadow, probe = trained_pair()
    aligned_bu, _ = realign_bottom_up(shadow, target, "weight")
    assert wms(target, aligned_bu, 0) < wms(target, shadow, 0)
    aligned_td, _ = realign_top_down(shadow, target, "weight")
    last_hidden = target.n_param_layers - 2
    assert wms(target, aligned_td, last_hidden) < wms(target, shadow, last_hidden)


def test_hungarian_cost_never_exceeds_identity_cost():
    target, shadow, probe = trained_pair(seed_a=3, seed_b=4)
    for method in ("weight", "activation", "correlation"):
        current = shadow
        for layer in range(target.n_param_layers - 1):
            if method == "weight":
                cost = sim_weight(current, target, layer, "input")
            elif method == "activation":
                cost = sim_activation(current, target, layer, probe)
            else:
                cost = sim_correlation(current, target, layer, probe)
            perm = hungarian(cost)
            identity_cost = float(np.trace(cost.values))
            assert assignment_cost(cost.values, perm.mapping) <= identity_cost + 1e-9
            current = permute_layer(current, layer, perm)


def test_realigned_model_is_function_preserving():
    target, shadow, probe = trained_pair(seed_a=5, seed_b=6)
    for method, direction in (("weight", "bottom_up"), ("activation", "top_down")):
        aligned, plan = realign(shadow, target, method, direction, probe_x=probe)
        assert max_output_deviation(shadow, aligned, probe) < 1e-5
        replayed = plan.apply(shadow)
        for la, lb in zip(aligned.layers, replayed.layers):
            if hasattr(la, "w"):
                np.testing.assert_array_equal(la.w, lb.w)


def test_architecture_mismatch_rejected(mid_mlp, small_mlp):
    with pytest.raises(ShapeError):
        realign_bottom_up(small_mlp, mid_mlp, "weight")


# ---------------------------------------------------------------------------
# Weight sorting baseline


def test_weight_sort_idempotent_and_function_preserving(mid_mlp):
    canon = weight_sort_canonical(mid_mlp)
    again = weight_sort_canonical(canon)
    for la, lb in zip(canon.layers, again.layers):
        if hasattr(la, "w"):
            np.testing.assert_array_equal(la.w, lb.w)
    assert max_output_deviation(mid_mlp, canon, random_inputs(mid_mlp, 50)) < 1e-5


def test_weight_sort_canonicalises_permuted_variants(mid_mlp):
    shadow, _ = planted(mid_mlp, seed=51)
    canon_a = weight_sort_canonical(mid_mlp)
    canon_b = weight_sort_canonical(shadow)
    for la, lb in zip(canon_a.layers, canon_b.layers):
        if hasattr(la, "w"):
            np.testing.assert_array_equal(la.w, lb.w)
            np.testing.assert_array_equal(la.b, lb.b)


def test_weight_sort_tie_break_is_stable():
    model = build_mlp([2, 3], 2)
    model.layers[0].w[...] = [[1, 0], [0.5, 0.5], [0, 1]]  # equal sums everywhere
    model.layers[1].w[...] = [[1, 2, 3], [4, 5, 6]]
    canon = weight_sort_canonical(model, include_bias=True)
    np.testing.assert_array_equal(canon.layers[0].w, model.layers[0].w)


# ---------------------------------------------------------------------------
# Re-alignment after initialisation


def test_align_init_against_itself_is_identity():
    template = build_mlp([6, 8, 5], 3)
    fresh = init_weights(template, 77)
    _aligned, plan = realign_top_down(fresh, fresh, "weight")
    assert plan.is_identity()


def test_realign_after_init_pipeline_trains_and_logs():
    g = rng(2000)
    spec = SyntheticSpec("blobs", n_classes=3, n_per_class=70, dim=8, separation=4.0)
    ds = gen_synthetic(spec, g)
    tr, va = ds.subset(np.arange(160)), ds.subset(np.arange(160, 210))
    template = build_mlp([8, 10, 6], 3)
    cfg = TrainConfig(lr=0.01, max_epochs=30, patience=3)
    target, _ = train(template, tr, va, SeedBundle(1, 2, 3), cfg)
    model, plan, log = realign_after_init(template, target, SeedBundle(9, 8, 7), tr, va, cfg)
    _baseline, base_log = train(template, tr, va, SeedBundle(9, 8, 7), cfg)
    # aligned-init training converges like an unaligned shadow
    assert log.epochs[-1].val_acc >= base_log.epochs[-1].val_acc - 0.1
    # the plan replays on the raw init to reproduce the training start
    fresh = init_weights(template, 9)
    replayed = plan.apply(fresh)
    realigned, _ = realign_top_down(fresh, target, "weight")
    for la, lb in zip(replayed.layers, realigned.layers):
        if hasattr(la, "w"):
            np.testing.assert_array_equal(la.w, lb.w)
