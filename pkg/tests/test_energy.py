import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stcrf.energy import (EnergyError, Mode, build_potentials, init_model, instance_potentials,
                          pairwise_transition, stack_features, temporal_kernel, total_energy,
                          unary_energy)
from stcrf.graph import Assignment, GraphSpec, ObservationInstance
from stcrf.projection import init_map, map_forward

from conftest import make_instance, zero_params


def test_temporal_kernel_values():
    assert temporal_kernel(5, 5, 10) == 1.0
    assert temporal_kernel(0, 10, 10) == pytest.approx(0.6065306597126334, abs=1e-12)
    assert temporal_kernel(0, 1, 1e6) == pytest.approx(1.0, abs=1e-9)


def test_affine_map_by_hand():
    params = {"m.W0": np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).T, "m.b0": np.array([0, 0, 0.5])}
    out, _ = map_forward(params, "m", np.array([[2.0, 3.0]]))
    np.testing.assert_array_equal(out[0], [2.0, 3.0, 5.5])
    ident = {"m.W0": np.eye(2), "m.b0": np.zeros(2)}
    np.testing.assert_array_equal(map_forward(ident, "m", np.array([[1.0, -2.0]]))[0][0], [1, -2])


def test_hidden_map_shapes():
    params = init_map(np.random.default_rng(0), "m", 4, 3, hidden=(1024,))
    out, _ = map_forward(params, "m", np.ones((5, 4)), dropout=0.3, rng=np.random.default_rng(1))
    assert out.shape == (5, 3)


def _constant_maps(model, values):
    params = {k: np.zeros_like(v) for k, v in model.params.items()}
    for name, b in values.items():
        params[f"{name}.b0"] = np.asarray(b, dtype=float)
    return model.with_params(params)


def test_gated_outer_product_by_hand():
    spec = GraphSpec(2, 1, (2, 3), (1, 1))
    model = init_model(spec, "gsteg", rank=1)
    model = _constant_maps(model, {"g/0/1": [1, 0], "h/0/1": [2, 3, 0]})
    inst = make_instance(spec)
    phi = pairwise_transition(model, inst, (0, 0), (0, 1)).values
    np.testing.assert_array_equal(phi, [[2, 3, 0], [0, 0, 0]])
    zero = zero_params(model)
    np.testing.assert_array_equal(pairwise_transition(zero, inst, (0, 0), (0, 1)).values, 0)


def test_compatibility_matrix_passes_through_at_zero_lag():
    spec = GraphSpec(2, 2, (2, 2), (1, 1))
    model = zero_params(init_model(spec, "steg"))
    mu = np.array([[1.0, 2.0], [3.0, 4.0]])
    model.params["mu/0/1"] = mu
    inst = make_instance(spec)
    np.testing.assert_array_equal(pairwise_transition(model, inst, (0, 0), (0, 1)).values, mu)
    lagged = pairwise_transition(model, inst, (0, 0), (1, 1)).values
    np.testing.assert_allclose(lagged, temporal_kernel(0, 1, model.bandwidth) * mu, rtol=1e-15)


def test_edge_errors():
    spec = GraphSpec(2, 2, (2, 2), (1, 1))
    inst = make_instance(spec)
    with pytest.raises(EnergyError, match="no pairwise terms"):
        pairwise_transition(init_model(spec, "ueg"), inst, (0, 0), (0, 1))
    with pytest.raises(EnergyError, match="temporal edge in spatial-only mode"):
        pairwise_transition(init_model(spec, "seg"), inst, (0, 0), (1, 1))


def test_rank_must_be_below_label_sizes():
    with pytest.raises(EnergyError):
        init_model(GraphSpec(2, 1, (2, 3), (1, 1)), "gsteg", rank=2)


def test_total_energy_two_node_hand_sum():
    spec = GraphSpec(2, 1, (2, 3), (1, 1))
    model = _constant_maps(init_model(spec, "steg"), {"w/0": [0, 1], "w/1": [0, 0, 2]})
    m01 = np.arange(6.0).reshape(2, 3) / 10
    m10 = -np.arange(6.0).reshape(3, 2) / 7
    model.params["mu/0/1"] = m01
    model.params["mu/1/0"] = m10
    inst = make_instance(spec)
    expected = 1 + 2 + m01[1, 2] + m10[2, 1]
    assert total_energy(model, inst, Assignment([[1, 2]])) == pytest.approx(expected, abs=1e-15)


def test_zero_parameters_give_zero_energy():
    spec = GraphSpec(3, 2, (2, 3, 2), (2, 2, 2))
    for mode in Mode:
        model = zero_params(init_model(spec, mode, rank=1))
        inst = make_instance(spec)
        assert total_energy(model, inst, inst.gold) == 0.0


def test_unary_only_energy_is_sum_of_unaries(rng):
    spec = GraphSpec(2, 3, (3, 4), (2, 3))
    model = init_model(spec, "ueg", seed=3)
    inst = make_instance(spec, rng)
    y = inst.gold
    expected = sum(unary_energy(model, inst, t, k)[y.labels[t, k]] for t in range(3) for k in range(2))
    assert total_energy(model, inst, y) == pytest.approx(expected, abs=1e-12)


def test_clique_templates_shared_across_time(rng):
    spec = GraphSpec(2, 3, (3, 3), (2, 2))
    model = init_model(spec, "steg", seed=1)
    inst = make_instance(spec, rng)
    a = pairwise_transition(model, inst, (0, 0), (0, 1)).values
    b = pairwise_transition(model, inst, (2, 0), (2, 1)).values
    np.testing.assert_array_equal(a, b)


def test_gating_depends_on_source_features_only(rng):
    spec = GraphSpec(2, 2, (3, 3), (2, 2))
    model = init_model(spec, "gsteg", rank=2, seed=2)
    inst = make_instance(spec, rng)
    before = pairwise_transition(model, inst, (0, 0), (1, 1)).values
    feats = list(inst.features)
    feats[1] = feats[1] + 5.0
    moved = ObservationInstance(spec, tuple(feats), inst.gold)
    np.testing.assert_array_equal(pairwise_transition(model, moved, (0, 0), (1, 1)).values, before)
    feats = list(inst.features)
    feats[0] = feats[0] + 5.0
    moved = ObservationInstance(spec, tuple(feats), inst.gold)
    assert not np.allclose(pairwise_transition(model, moved, (0, 0), (1, 1)).values, before)


def test_prior_term_adds_on_every_edge(rng):
    spec = GraphSpec(2, 2, (3, 3), (2, 2))
    emb = [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]
    plain = init_model(spec, "seg", seed=5)
    prior = init_model(spec, "seg", embeddings=emb, seed=5)
    prior = prior.with_params({**prior.params, **plain.params})
    inst = make_instance(spec, rng)
    diff = instance_potentials(prior, inst).pair - instance_potentials(plain, inst).pair
    u = emb[0] @ prior.params["u.W0"][:, 0] + prior.params["u.b0"][0]
    v = emb[1] @ prior.params["v.W0"][:, 0] + prior.params["v.b0"][0]
    np.testing.assert_allclose(diff[0, 0, 1], np.outer(u, v), atol=1e-12)
    np.testing.assert_array_equal(diff[0, 0, 3], 0.0)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(list(Mode)), st.integers(0, 10_000))
def test_batched_potentials_match_single_instance(mode, seed):
    rng = np.random.default_rng(seed)
    spec = GraphSpec(2, 2, (3, 4), (2, 3))
    model = init_model(spec, mode, rank=2, seed=seed)
    insts = [make_instance(spec, rng) for _ in range(3)]
    batch, _ = build_potentials(model, stack_features(spec, insts))
    for i, inst in enumerate(insts):
        single = instance_potentials(model, inst)
        np.testing.assert_allclose(batch.unary[i], single.unary[0], atol=1e-14)
        if batch.pair is not None:
            np.testing.assert_allclose(batch.pair[i], single.pair[0], atol=1e-14)
