"""Policy mixture EM: responsibilities, likelihood trace, G selection."""

import numpy as np
import pytest

from themes import edm, emedm
from themes.rmtticc import SubTrajectory


def _unit(uid, states, actions, cluster=0):
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    return SubTrajectory(trajectory_id=uid, start=0, end=len(actions),
                         cluster=cluster, states=states, actions=actions)


def two_policy_units(seed=0, n_units=30, steps=20, n_actions=3):
    """Half the units follow argmax(x . w0), half argmax(x . w1)."""
    rng = np.random.default_rng(seed)
    W = [rng.standard_normal((n_actions, 2)) for _ in range(2)]
    units = []
    truth = []
    for i in range(n_units):
        g = i % 2
        X = rng.standard_normal((steps, 2))
        a = np.argmax(X @ W[g].T + 0.05 * rng.standard_normal((steps, n_actions)),
                      axis=1)
        units.append(_unit(f"u{i}", X, a))
        truth.append(g)
    return units, np.asarray(truth)


FAST_EDM = dict(hidden=16, epochs=15, learning_rate=0.2, occupancy_weight=0.0)


class TestPairArrays:
    def test_pooling_and_unit_index(self):
        units = [_unit("a", np.zeros((3, 2)), [0, 1, 2]),
                 _unit("b", np.ones((2, 2)), [1, 0])]
        X, a, idx = emedm.pair_arrays(units)
        assert X.shape == (5, 2)
        np.testing.assert_array_equal(a, [0, 1, 2, 1, 0])
        np.testing.assert_array_equal(idx, [0, 0, 0, 1, 1])

    def test_empty_raises(self):
        with pytest.raises(ValueError, match="sub-trajectories"):
            emedm.pair_arrays([])


class TestMixtureContainer:
    def test_simplex_validation(self):
        rng = np.random.default_rng(0)
        net = edm.PolicyNet.initialize(2, 3, 4, rng)
        with pytest.raises(ValueError, match="simplex"):
            emedm.PolicyMixture(priors=np.array([0.7, 0.7]),
                                policies=[net, net.copy()],
                                responsibilities=np.ones((4, 2)) / 2)
        with pytest.raises(ValueError, match="disagree"):
            emedm.PolicyMixture(priors=np.array([1.0]),
                                policies=[net, net.copy()],
                                responsibilities=np.ones((4, 1)))

    def test_json_round_trip(self):
        rng = np.random.default_rng(1)
        nets = [edm.PolicyNet.initialize(2, 3, 4, rng) for _ in range(2)]
        mix = emedm.PolicyMixture(priors=np.array([0.25, 0.75]), policies=nets,
                                  responsibilities=np.array([[0.1, 0.9], [0.6, 0.4]]))
        back = emedm.PolicyMixture.from_json(mix.to_json())
        np.testing.assert_array_equal(back.priors, mix.priors)
        np.testing.assert_array_equal(back.responsibilities, mix.responsibilities)
        X = rng.standard_normal((5, 2))
        for p, q in zip(back.policies, mix.policies):
            np.testing.assert_array_equal(p.logits(X), q.logits(X))


class TestResponsibilities:
    def test_rows_on_simplex(self):
        units, _ = two_policy_units()
        rng = np.random.default_rng(2)
        nets = [edm.PolicyNet.initialize(2, 3, 8, rng) for _ in range(3)]
        mix = emedm.PolicyMixture(priors=np.ones(3) / 3, policies=nets,
                                  responsibilities=np.ones((len(units), 3)) / 3)
        resp = emedm.responsibilities(units, mix)
        assert resp.shape == (len(units), 3)
        assert np.all(resp >= 0)
        np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-12)

    def test_identical_policies_recover_priors(self):
        units, _ = two_policy_units(n_units=6)
        rng = np.random.default_rng(3)
        net = edm.PolicyNet.initialize(2, 3, 8, rng)
        mix = emedm.PolicyMixture(priors=np.array([0.3, 0.7]),
                                  policies=[net, net.copy()],
                                  responsibilities=np.ones((6, 2)) / 2)
        resp = emedm.responsibilities(units, mix)
        np.testing.assert_allclose(resp, np.tile([0.3, 0.7], (6, 1)), atol=1e-12)


class TestFit:
    def test_g1_short_circuit_matches_plain_training(self):
        units, _ = two_policy_units(n_units=8)
        cfg = edm.EdmConfig(seed=5, **FAST_EDM)
        res = emedm.fit(units, 1, cfg, n_actions=3)
        X, a, _ = emedm.pair_arrays(units)
        direct = edm.train(X, a, 3, cfg)
        np.testing.assert_array_equal(res.mixture.policies[0].W1, direct.net.W1)
        np.testing.assert_array_equal(res.mixture.policies[0].W2, direct.net.W2)
        np.testing.assert_array_equal(res.mixture.priors, [1.0])
        np.testing.assert_array_equal(res.mixture.responsibilities,
                                      np.ones((8, 1)))
        assert res.converged

    def test_deterministic(self):
        units, _ = two_policy_units(n_units=10)
        cfg = edm.EdmConfig(seed=1, **FAST_EDM)
        st = emedm.EmSettings(max_iters=4, seed=7)
        r1 = emedm.fit(units, 2, cfg, st, n_actions=3)
        r2 = emedm.fit(units, 2, cfg, st, n_actions=3)
        assert r1.loglik_trace == r2.loglik_trace
        np.testing.assert_array_equal(r1.mixture.responsibilities,
                                      r2.mixture.responsibilities)

    def test_loglik_trace_non_decreasing(self):
        units, _ = two_policy_units(seed=4)
        cfg = edm.EdmConfig(seed=2, **FAST_EDM)
        st = emedm.EmSettings(max_iters=8, seed=0)
        res = emedm.fit(units, 2, cfg, st, n_actions=3)
        trace = np.asarray(res.loglik_trace)
        assert len(trace) >= 2
        drops = np.diff(trace) / np.maximum(1.0, np.abs(trace[:-1]))
        assert drops.min() > -1e-6

    def test_separates_the_two_behaviors(self):
        units, truth = two_policy_units(seed=8)
        cfg = edm.EdmConfig(seed=3, **FAST_EDM)
        st = emedm.EmSettings(max_iters=12, seed=1)
        res = emedm.fit(units, 2, cfg, st, n_actions=3)
        hard = res.mixture.responsibilities.argmax(axis=1)
        agree = float((hard == truth).mean())
        assert max(agree, 1.0 - agree) > 0.9

    def test_responsibility_rows_sum_to_one(self):
        units, _ = two_policy_units(n_units=12)
        cfg = edm.EdmConfig(seed=0, **FAST_EDM)
        res = emedm.fit(units, 3, cfg, emedm.EmSettings(max_iters=3), n_actions=3)
        np.testing.assert_allclose(res.mixture.responsibilities.sum(axis=1),
                                   1.0, atol=1e-10)
        assert res.mixture.priors.shape == (3,)

    def test_collapsed_component_is_reseeded(self):
        # all units share one behavior; with G=2 one component would starve,
        # the reseed keeps every prior above the collapse floor
        rng = np.random.default_rng(9)
        W = rng.standard_normal((3, 2))
        units = []
        for i in range(10):
            X = rng.standard_normal((15, 2))
            units.append(_unit(f"u{i}", X, np.argmax(X @ W.T, axis=1)))
        cfg = edm.EdmConfig(seed=4, **FAST_EDM)
        st = emedm.EmSettings(max_iters=6, seed=2, collapse_factor=10.0)
        res = emedm.fit(units, 2, cfg, st, n_actions=3)
        assert np.all(np.isfinite(res.mixture.priors))
        np.testing.assert_allclose(res.mixture.priors.sum(), 1.0, atol=1e-10)

    def test_validation(self):
        units, _ = two_policy_units(n_units=4)
        cfg = edm.EdmConfig(**FAST_EDM)
        with pytest.raises(ValueError, match="G"):
            emedm.fit(units, 0, cfg)
        with pytest.raises(ValueError):
            emedm.EmSettings(max_iters=0)
        with pytest.raises(ValueError):
            emedm.EmSettings(rel_tol=0.0)


class TestSelectG:
    def test_easy_two_behavior_case(self):
        units, _ = two_policy_units(seed=6, n_units=24)
        cfg = edm.EdmConfig(seed=1, **FAST_EDM)
        st = emedm.EmSettings(max_iters=8, seed=3)
        G, scores, results = emedm.select_G(units, 4, cfg, st, n_actions=3)
        assert G == 2
        assert set(scores).issuperset({1, 2})
        assert isinstance(results[G], emedm.EmEdmResult)
        # the accepted G improved on G=1 by the required margin
        assert scores[2] > scores[1]

    def test_gmax_one(self):
        units, _ = two_policy_units(n_units=6)
        cfg = edm.EdmConfig(seed=0, **FAST_EDM)
        G, scores, results = emedm.select_G(units, 1, cfg, n_actions=3)
        assert G == 1
        assert list(scores) == [1]

    def test_validation(self):
        units, _ = two_policy_units(n_units=4)
        with pytest.raises(ValueError, match="G_max"):
            emedm.select_G(units, 0, edm.EdmConfig(**FAST_EDM))
