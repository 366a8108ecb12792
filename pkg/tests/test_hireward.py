"""Reward regulator over (cluster, policy): MDP build, soft values, MLIRL."""

import numpy as np
import pytest

from themes import edm, emedm, hireward
from themes.rmtticc import Segmentation
from themes.trajdata import Dataset

from conftest import make_trajectory
from oracles import central_difference_grad


def settings(**over):
    base = dict(steps=10, learning_rate=0.05, discount=0.9, temperature=1.0,
                value_sweeps=30, value_tol=1e-12)
    base.update(over)
    return hireward.MlirlSettings(**base)


class TestHighLevelMDP:
    def test_add_one_smoothing_hand_case(self):
        # one episode 0 -> 1 -> 0 with a single policy; counts start at one
        # everywhere, so the visited transitions get 2/3 and the rest 1/3
        mdp = hireward.HighLevelMDP.from_episodes(
            [np.array([[0, 0], [1, 0], [0, 0]])], K=2, G=1)
        np.testing.assert_allclose(mdp.transitions[0, 0], [1 / 3, 2 / 3])
        np.testing.assert_allclose(mdp.transitions[1, 0], [2 / 3, 1 / 3])

    def test_no_episodes_gives_uniform_rows(self):
        mdp = hireward.HighLevelMDP.from_episodes([], K=3, G=2)
        np.testing.assert_allclose(mdp.transitions, 1.0 / 3)
        np.testing.assert_allclose(mdp.transitions.sum(axis=2), 1.0)

    def test_rows_always_sum_to_one(self):
        rng = np.random.default_rng(0)
        eps = [np.column_stack([rng.integers(0, 4, 7), rng.integers(0, 3, 7)])
               for _ in range(5)]
        mdp = hireward.HighLevelMDP.from_episodes(eps, K=4, G=3)
        np.testing.assert_allclose(mdp.transitions.sum(axis=2), 1.0, atol=1e-12)

    def test_out_of_range_raises(self):
        with pytest.raises(ValueError, match="out of range"):
            hireward.HighLevelMDP.from_episodes([np.array([[5, 0]])], K=2, G=1)


class TestSoftValues:
    def test_single_state_single_action_fixed_point(self):
        # V = r + discount * V has the closed form r / (1 - discount)
        mdp = hireward.HighLevelMDP.from_episodes([], K=1, G=1)
        st = settings(discount=0.8, value_sweeps=500)
        table = np.array([[2.0]])
        Q, cache = hireward.soft_values(table, mdp, st)
        assert Q[0, 0] == pytest.approx(2.0 / (1 - 0.8), rel=1e-6)
        np.testing.assert_allclose(cache[-1], [[1.0]])

    def test_single_state_two_action_fixed_point(self):
        # V = temp * logsumexp(r / temp) + discount * V, solvable in closed form
        from scipy.special import logsumexp
        mdp = hireward.HighLevelMDP.from_episodes([], K=1, G=2)
        temp, disc = 0.7, 0.85
        st = settings(discount=disc, temperature=temp, value_sweeps=2000)
        r = np.array([[1.0, -0.5]])
        Q, cache = hireward.soft_values(r, mdp, st)
        V = temp * logsumexp(r[0] / temp) / (1 - disc)
        np.testing.assert_allclose(Q[0], r[0] + disc * V, rtol=1e-6)

    def test_early_stop_on_tolerance(self):
        mdp = hireward.HighLevelMDP.from_episodes([], K=2, G=2)
        st = settings(value_sweeps=5000, value_tol=1e-6)
        _, cache = hireward.soft_values(np.zeros((2, 2)), mdp, st)
        assert len(cache) < 5000


class TestLoglikAndGrad:
    def make_mdp(self, seed=0):
        rng = np.random.default_rng(seed)
        eps = [np.column_stack([rng.integers(0, 3, 6), rng.integers(0, 2, 6)])
               for _ in range(4)]
        return hireward.HighLevelMDP.from_episodes(eps, K=3, G=2)

    def test_gradient_matches_finite_differences(self):
        mdp = self.make_mdp()
        # fixed sweep count so the perturbed forward pass runs the same graph
        st = settings(discount=0.9, temperature=0.7, value_sweeps=12,
                      value_tol=1e-300)
        table = np.random.default_rng(1).normal(size=(3, 2))
        _, grad = hireward.loglik_and_grad(table, mdp, st)

        def f(t):
            ll, _ = hireward.loglik_and_grad(t, mdp, st)
            return ll

        fd = central_difference_grad(f, table.copy(), eps=1e-6)
        scale = max(1.0, float(np.abs(fd).max()))
        assert float(np.abs(grad - fd).max()) / scale < 1e-7

    def test_loglik_is_negative_and_finite(self):
        mdp = self.make_mdp(seed=3)
        ll, grad = hireward.loglik_and_grad(np.zeros((3, 2)), mdp, settings())
        assert np.isfinite(ll) and ll < 0
        assert grad.shape == (3, 2)

    def test_uniform_table_gives_uniform_policy_loglik(self):
        mdp = self.make_mdp(seed=4)
        n_choices = sum(len(ep) for ep in mdp.episodes)
        ll, _ = hireward.loglik_and_grad(np.ones((3, 2)), mdp, settings())
        assert ll == pytest.approx(n_choices * np.log(0.5), rel=1e-9)


class TestMlirlFit:
    def test_trace_length_is_steps_plus_one(self):
        mdp = TestLoglikAndGrad().make_mdp()
        res = hireward.mlirl_fit(mdp, settings(steps=7))
        assert len(res.loglik_trace) == 8

    def test_loglik_improves(self):
        rng = np.random.default_rng(5)
        # biased choices: cluster k prefers policy k % 2
        eps = []
        for _ in range(6):
            ks = rng.integers(0, 3, 8)
            gs = np.where(rng.random(8) < 0.9, ks % 2, 1 - ks % 2)
            eps.append(np.column_stack([ks, gs]))
        mdp = hireward.HighLevelMDP.from_episodes(eps, K=3, G=2)
        res = hireward.mlirl_fit(mdp, settings(steps=40, learning_rate=0.1))
        trace = res.loglik_trace
        assert trace[-1] > trace[0]
        # the learned table prefers the demonstrated policy in each cluster
        table = res.regulator.table
        assert table[0, 0] > table[0, 1]
        assert table[1, 1] > table[1, 0]

    def test_deterministic(self):
        mdp = TestLoglikAndGrad().make_mdp(seed=6)
        r1 = hireward.mlirl_fit(mdp, settings(steps=5))
        r2 = hireward.mlirl_fit(mdp, settings(steps=5))
        np.testing.assert_array_equal(r1.regulator.table, r2.regulator.table)
        assert r1.loglik_trace == r2.loglik_trace

    def test_init_table_shape_mismatch(self):
        mdp = TestLoglikAndGrad().make_mdp()
        with pytest.raises(ValueError, match="shape"):
            hireward.mlirl_fit(mdp, settings(), init_table=np.zeros((2, 2)))

    def test_regulator_json_round_trip(self):
        reg = hireward.RewardRegulator(table=np.array([[1.0, 2.0], [3.0, 4.0]]),
                                       boltzmann_temp=0.5)
        back = hireward.RewardRegulator.from_json(reg.to_json())
        np.testing.assert_array_equal(back.table, reg.table)
        assert back.boltzmann_temp == 0.5

    def test_settings_validation(self):
        with pytest.raises(ValueError):
            hireward.MlirlSettings(steps=0)
        with pytest.raises(ValueError):
            hireward.MlirlSettings(discount=1.0)
        with pytest.raises(ValueError):
            hireward.MlirlSettings(temperature=0.0)


def tiny_mixture(n_units, G=2, n_inputs=3, n_actions=2, seed=0):
    rng = np.random.default_rng(seed)
    nets = [edm.PolicyNet.initialize(n_inputs, n_actions, 4, rng) for _ in range(G)]
    resp = rng.dirichlet(np.ones(G), size=n_units)
    return emedm.PolicyMixture(priors=np.ones(G) / G, policies=nets,
                               responsibilities=resp)


class TestHighLevelEpisodes:
    def test_grouping_and_argmax_assignment(self):
        seg = Segmentation(labels={
            "a": np.array([0, 0, 1, 1, 1]),
            "b": np.array([2, 2]),
        })
        assert len(seg.sub_trajectories) == 3
        resp = np.array([[0.9, 0.1], [0.2, 0.8], [0.5, 0.5]])
        rng = np.random.default_rng(0)
        nets = [edm.PolicyNet.initialize(2, 2, 4, rng) for _ in range(2)]
        mix = emedm.PolicyMixture(priors=np.ones(2) / 2, policies=nets,
                                  responsibilities=resp)
        eps = hireward.build_highlevel_episodes(seg, mix)
        assert len(eps) == 2
        np.testing.assert_array_equal(eps[0], [[0, 0], [1, 1]])
        np.testing.assert_array_equal(eps[1], [[2, 0]])  # tie -> smaller index

    def test_mismatched_responsibilities_raise(self):
        seg = Segmentation(labels={"a": np.array([0, 1])})
        mix = tiny_mixture(n_units=5)
        with pytest.raises(ValueError, match="sub-trajector"):
            hireward.build_highlevel_episodes(seg, mix)


class TestPerTimestepRewards:
    def test_all_ones_table_is_mean_action_probability(self):
        rng = np.random.default_rng(2)
        tr = make_trajectory("t0", rng.normal(size=(6, 3)),
                             rng.integers(0, 2, size=6))
        ds = Dataset(trajectories=(tr,), feature_names=(), action_count=2)
        seg = Segmentation(labels={"t0": np.array([0, 0, 0, 1, 1, 1])})
        mix = tiny_mixture(n_units=2, seed=3)
        reg = hireward.RewardRegulator(table=np.ones((2, 2)))
        rewards = hireward.per_timestep_rewards(seg, mix, reg, ds)
        expected = np.column_stack([
            np.exp(net.action_log_probs(tr.states, tr.actions))
            for net in mix.policies
        ]).mean(axis=1)
        np.testing.assert_allclose(rewards["t0"], expected, rtol=1e-12)

    def test_table_scales_by_assigned_cluster_row(self):
        rng = np.random.default_rng(4)
        tr = make_trajectory("t0", rng.normal(size=(4, 3)),
                             rng.integers(0, 2, size=4))
        ds = Dataset(trajectories=(tr,), feature_names=(), action_count=2)
        seg = Segmentation(labels={"t0": np.array([0, 0, 1, 1])})
        mix = tiny_mixture(n_units=2, seed=5)
        table = np.array([[2.0, 0.0], [0.0, 2.0]])
        reg = hireward.RewardRegulator(table=table)
        rewards = hireward.per_timestep_rewards(seg, mix, reg, ds)
        probs = np.column_stack([
            np.exp(net.action_log_probs(tr.states, tr.actions))
            for net in mix.policies
        ])
        expected = (probs * table[seg.labels["t0"]]).mean(axis=1)
        np.testing.assert_allclose(rewards["t0"], expected, rtol=1e-12)
        assert rewards["t0"].shape == (4,)
