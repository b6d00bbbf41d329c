import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stcrf.energy import EnergyError, init_model
from stcrf.graph import GraphSpec, ObservationInstance, StateSpaceTooLarge
from stcrf.inference import (Marginals, batch_marginals, compute_message, exact_inference,
                             fixed_point_residual, free_energy, init_marginals, map_labels,
                             mean_field_update_node, run_mean_field)
from stcrf.verify import tiny_case

from conftest import make_instance, zero_params

TWO = GraphSpec(2, 1, (2, 2), (1, 1))


def hand_model(psi0, psi1, mu01, mu10):
    """Two-node STEG model whose energies are set through biases and mu."""
    model = zero_params(init_model(TWO, "steg"))
    model.params["w/0.b0"] = np.array(psi0, dtype=float)
    model.params["w/1.b0"] = np.array(psi1, dtype=float)
    model.params["mu/0/1"] = np.array(mu01, dtype=float)
    model.params["mu/1/0"] = np.array(mu10, dtype=float)
    return model


def test_init_marginals():
    spec = GraphSpec(2, 1, (2, 3), (1, 1))
    q = init_marginals(zero_params(init_model(spec, "ueg")), make_instance(spec))
    np.testing.assert_allclose(q.node(0, 0), [0.5, 0.5])
    np.testing.assert_allclose(q.node(0, 1), [1 / 3] * 3)
    model = hand_model([0, math.log(3)], [0, 0], np.zeros((2, 2)), np.zeros((2, 2)))
    np.testing.assert_allclose(init_marginals(model, make_instance(TWO)).node(0, 0), [0.75, 0.25],
                               atol=1e-15)
    model = hand_model([0, -1e6], [0, 0], np.zeros((2, 2)), np.zeros((2, 2)))
    assert init_marginals(model, make_instance(TWO)).node(0, 0)[1] > 1 - 1e-9


def test_messages():
    inst = make_instance(TWO)
    q = Marginals(np.full((1, 2, 2), 0.5), (2, 2))
    zero = hand_model([0, 0], [0, 0], np.zeros((2, 2)), np.zeros((2, 2)))
    np.testing.assert_array_equal(compute_message(zero, inst, q, (0, 0), (0, 1)), [1.0, 1.0])
    ident = hand_model([0, 0], [0, 0], np.zeros((2, 2)), np.eye(2))
    np.testing.assert_allclose(compute_message(ident, inst, q, (0, 0), (0, 1)),
                               [math.exp(-0.5)] * 2, rtol=1e-15)
    const = hand_model([0, 0], [0, 0], np.zeros((2, 2)), np.full((2, 2), 0.7))
    skew = Marginals(np.array([[[0.2, 0.8], [0.9, 0.1]]]), (2, 2))
    np.testing.assert_allclose(compute_message(const, inst, skew, (0, 0), (0, 1)),
                               [math.exp(-0.7)] * 2, rtol=1e-15)
    with pytest.raises(EnergyError, match="no pairwise terms"):
        compute_message(init_model(TWO, "ueg"), inst, q, (0, 0), (0, 1))


def test_single_node_update_by_hand():
    model = hand_model([0, 1], [0.5, 0], [[1, 0], [0, 1]], [[0, 2], [0, 0]])
    inst = make_instance(TWO)
    q = init_marginals(model, inst)
    q0 = np.array([1, math.exp(-1)]) / (1 + math.exp(-1))
    # node (0,1) couples to (0,0) through mu10 and the transpose of mu01
    s = -np.array([0.5, 0.0]) - (np.array([[0, 2], [0, 0]]) + np.eye(2)) @ q0
    expected = np.exp(s - s.max()) / np.exp(s - s.max()).sum()
    out = mean_field_update_node(model, inst, q, (0, 1))
    np.testing.assert_allclose(out.node(0, 1), expected, atol=1e-15)
    np.testing.assert_array_equal(out.node(0, 0), q.node(0, 0))


def test_update_ignores_messages_without_pairwise_terms(rng):
    spec = GraphSpec(2, 2, (3, 2), (2, 2))
    inst = make_instance(spec, rng)
    ueg = init_model(spec, "ueg", seed=1)
    q = Marginals(rng.dirichlet(np.ones(3), size=(2, 2)), (3, 2))
    out = mean_field_update_node(ueg, inst, q, (1, 0))
    np.testing.assert_allclose(out.node(1, 0), init_marginals(ueg, inst).node(1, 0), atol=1e-15)
    model = init_model(spec, "steg", seed=1)
    flat = zero_params(model)
    flat = flat.with_params({**flat.params, "w/0.W0": model.params["w/0.W0"]})
    np.testing.assert_allclose(mean_field_update_node(flat, inst, q, (1, 0)).node(1, 0),
                               init_marginals(flat, inst).node(1, 0), atol=1e-15)


def test_zero_coupling_fixed_point_after_one_pass(rng):
    spec = GraphSpec(2, 2, (3, 2), (2, 2))
    model = init_model(spec, "steg", seed=4)
    model.pairwise_scale = 0.0
    inst = make_instance(spec, rng)
    np.testing.assert_allclose(run_mean_field(model, inst, 3).values,
                               init_marginals(model, inst).values, atol=1e-15)


def test_two_by_two_converges_and_map_matches():
    model = hand_model([0, 1], [0.5, 0], [[1, 0], [0, 1]], [[0, 2], [0, 0]])
    model = model.with_params(model.params)
    spec = GraphSpec(2, 2, (2, 2), (1, 1))
    big = zero_params(init_model(spec, "steg"))
    big = big.with_params({**big.params, **{k: v for k, v in model.params.items()}})
    inst = make_instance(spec)
    q50 = run_mean_field(big, inst, 50)
    q51 = run_mean_field(big, inst, 51)
    assert np.max(np.abs(q50.values - q51.values)) < 1e-8
    assert fixed_point_residual(big, inst, q50) < 1e-8
    labels = map_labels(q50).labels
    np.testing.assert_array_equal(labels, np.argmax(q50.values, axis=2))


def test_map_label_ties():
    q = Marginals(np.array([[[0.2, 0.8], [0.5, 0.5]]]), (2, 2))
    np.testing.assert_array_equal(map_labels(q).labels, [[1, 0]])


def test_free_energy_examples():
    spec = GraphSpec(2, 1, (2, 3), (1, 1))
    model = zero_params(init_model(spec, "steg"))
    inst = make_instance(spec)
    uniform = Marginals(np.array([[[0.5, 0.5, 0.0], [1 / 3, 1 / 3, 1 / 3]]]), (2, 3))
    assert free_energy(model, inst, uniform) == pytest.approx(-(math.log(2) + math.log(3)), abs=1e-12)
    onehot = Marginals(np.array([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]]), (2, 3))
    assert free_energy(model, inst, onehot) == 0.0


def test_free_energy_at_exact_ueg_marginals_is_minus_log_z(rng):
    spec = GraphSpec(2, 2, (3, 2), (2, 2))
    model = init_model(spec, "ueg", seed=9)
    inst = make_instance(spec, rng, scale=2.0)
    gibbs = exact_inference(model, inst)
    assert free_energy(model, inst, gibbs.exact_marginals) == pytest.approx(-gibbs.log_partition, abs=1e-12)


def test_exact_inference_examples(rng):
    spec = GraphSpec(2, 1, (2, 3), (1, 1))
    gibbs = exact_inference(zero_params(init_model(spec, "steg")), make_instance(spec))
    assert gibbs.log_partition == pytest.approx(math.log(6), abs=1e-14)
    np.testing.assert_allclose(gibbs.exact_marginals.node(0, 1), [1 / 3] * 3, atol=1e-15)
    with pytest.raises(StateSpaceTooLarge):
        big = GraphSpec(3, 3, (35, 132, 35), (1, 1, 1))
        exact_inference(init_model(big, "ueg"), make_instance(big))


def test_exact_marginals_match_independent_enumeration(rng):
    spec = GraphSpec(2, 2, (2, 3), (2, 2))
    model = init_model(spec, "gsteg", rank=1, seed=11)
    inst = make_instance(spec, rng)
    from stcrf.energy import total_energy
    from stcrf.graph import enumerate_assignments
    weights = {}
    for y in enumerate_assignments(spec):
        weights[y] = math.exp(-total_energy(model, inst, y))
    z = sum(weights.values())
    gibbs = exact_inference(model, inst)
    assert gibbs.log_partition == pytest.approx(math.log(z), abs=1e-12)
    for t in range(2):
        for k in range(2):
            marg = np.zeros(spec.label_sizes[k])
            for y, w in weights.items():
                marg[y.labels[t, k]] += w / z
            np.testing.assert_allclose(gibbs.exact_marginals.node(t, k), marg, atol=1e-12)
    best = max(weights, key=weights.get)
    assert gibbs.map_assignment == best


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["ueg", "seg", "steg", "gsteg"]), st.integers(0, 100_000),
       st.sampled_from(["sequential", "parallel"]))
def test_marginals_stay_normalized(mode, seed, schedule):
    model, inst = tiny_case(np.random.default_rng(seed), mode, feature_scale=2.0)
    q = run_mean_field(model, inst, 3, schedule=schedule, damping=0.5)
    q.check(atol=1e-9)
    assert np.all(q.values >= 0) and np.all(q.values <= 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.floats(-50, 50))
def test_unary_shift_invariance(seed, shift):
    model, inst = tiny_case(np.random.default_rng(seed), "gsteg")
    before = run_mean_field(model, inst, 3)
    shifted = model.with_params(model.params)
    shifted.params["w/0.b0"] = shifted.params["w/0.b0"] + shift
    np.testing.assert_allclose(run_mean_field(shifted, inst, 3).values, before.values, atol=1e-10)


def test_parallel_with_damping_reaches_the_same_fixed_point(rng):
    model, inst = tiny_case(rng, "steg", streams=2, steps=2)
    model.pairwise_scale = 0.2
    seq = run_mean_field(model, inst, 200, tol=1e-13)
    par = run_mean_field(model, inst, 400, schedule="parallel", damping=0.5, tol=1e-13)
    np.testing.assert_allclose(par.values, seq.values, atol=1e-9)


def test_batch_marginals_match_single_runs(rng):
    spec = GraphSpec(2, 2, (3, 3), (2, 2))
    model = init_model(spec, "gsteg", seed=3)
    insts = [make_instance(spec, rng) for _ in range(3)]
    short = GraphSpec(2, 1, (3, 3), (2, 2))
    insts.append(make_instance(short, rng))
    qs = batch_marginals(model, insts, 3)
    for inst, q in zip(insts, qs):
        np.testing.assert_allclose(q.values, run_mean_field(model, inst, 3).values, atol=1e-14)
