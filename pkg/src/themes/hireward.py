"""Hierarchical reward regulator learned over the (cluster, policy) level.

Segmented, policy-attributed demonstrations induce a small MDP whose states
are segmentation clusters and whose actions are mixture policies. A reward
table over (cluster, policy) is fit by gradient ascent on the log-likelihood
of the demonstrated high-level choices under a Boltzmann policy; values come
from soft value iteration and gradients are backpropagated through the
executed sweeps analytically. The fitted table then refreshes per-timestep
rewards for the next segmentation pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .emedm import PolicyMixture
from .rmtticc import Segmentation
from .trajdata import Dataset


@dataclass
class MlirlSettings:
    steps: int = 150
    learning_rate: float = 0.05
    discount: float = 0.95
    temperature: float = 1.0
    value_sweeps: int = 50
    value_tol: float = 1e-8

    def __post_init__(self):
        if self.steps < 1 or self.value_sweeps < 1:
            raise ValueError("steps and value_sweeps must be >= 1")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must be in [0, 1)")
        if self.learning_rate <= 0 or self.temperature <= 0 or self.value_tol <= 0:
            raise ValueError("learning_rate, temperature, value_tol must be positive")


@dataclass(eq=False)
class HighLevelMDP:
    """Empirical (cluster, policy) MDP with add-one-smoothed transitions."""

    n_states: int
    n_actions: int
    transitions: np.ndarray  # (K, G, K), rows sum to 1
    episodes: list           # one (L, 2) int array of (k, g) steps per trajectory

    @classmethod
    def from_episodes(cls, episodes: list, K: int, G: int) -> "HighLevelMDP":
        counts = np.ones((K, G, K))  # add-one smoothing
        eps = []
        for ep in episodes:
            ep = np.asarray(ep, dtype=np.int64).reshape(-1, 2)
            if len(ep) and (ep[:, 0].max() >= K or ep[:, 1].max() >= G):
                raise ValueError("episode index out of range")
            eps.append(ep)
            for i in range(len(ep) - 1):
                counts[ep[i, 0], ep[i, 1], ep[i + 1, 0]] += 1.0
        trans = counts / counts.sum(axis=2, keepdims=True)
        return cls(n_states=K, n_actions=G, transitions=trans, episodes=eps)


@dataclass(eq=False)
class RewardRegulator:
    """Reward table over (cluster, policy) plus the Boltzmann temperature."""

    table: np.ndarray  # (K, G)
    boltzmann_temp: float = 1.0

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "table": self.table.tolist(),
            "boltzmann_temp": float(self.boltzmann_temp),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RewardRegulator":
        return cls(table=np.asarray(doc["table"], dtype=np.float64),
                   boltzmann_temp=float(doc["boltzmann_temp"]))


def build_highlevel_episodes(seg: Segmentation, mixture: PolicyMixture) -> list:
    """One (k, g) step per sub-trajectory, grouped per trajectory in order.

    g is the argmax responsibility of the sub-trajectory (ties toward the
    smaller index).
    """
    runs = seg.sub_trajectories
    if mixture.responsibilities.shape[0] != len(runs):
        raise ValueError("responsibilities rows do not match sub-trajectory count")
    g_assign = mixture.responsibilities.argmax(axis=1)
    episodes = []
    order = []
    current = None
    for i, (tid, start, end, k) in enumerate(runs):
        if tid != current:
            episodes.append([])
            order.append(tid)
            current = tid
        episodes[-1].append((k, int(g_assign[i])))
    return [np.asarray(ep, dtype=np.int64) for ep in episodes]


def soft_values(table: np.ndarray, mdp: HighLevelMDP, settings: MlirlSettings):
    """Soft value iteration; returns (Q, per-sweep softmax cache).

    V <- temp * logsumexp(Q / temp) with Q = table + discount * T V, run for
    value_sweeps sweeps or until the sup-norm change drops below value_tol.
    The cache holds the softmax of every intermediate Q for the backward pass.
    """
    temp = settings.temperature
    V = np.zeros(mdp.n_states)
    cache = []
    Q = table + 0.0
    for _ in range(settings.value_sweeps):
        Q = table + settings.discount * (mdp.transitions @ V)
        V_new = temp * logsumexp(Q / temp, axis=1)
        cache.append(softmax(Q / temp, axis=1))
        delta = float(np.abs(V_new - V).max())
        V = V_new
        if delta < settings.value_tol:
            break
    return Q, cache


def loglik_and_grad(table: np.ndarray, mdp: HighLevelMDP,
                    settings: MlirlSettings) -> tuple[float, np.ndarray]:
    """Boltzmann log-likelihood of the demonstrated (k, g) choices + gradient.

    The gradient is backpropagated through exactly the value-iteration sweeps
    executed in the forward pass.
    """
    temp = settings.temperature
    Q, cache = soft_values(table, mdp, settings)
    pi = cache[-1]
    counts = np.zeros((mdp.n_states, mdp.n_actions))
    for ep in mdp.episodes:
        for k, g in ep:
            counts[k, g] += 1.0
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    ll = float((counts * log_pi).sum())

    state_counts = counts.sum(axis=1, keepdims=True)
    gQ = (counts - state_counts * pi) / temp
    grad = np.zeros_like(table)
    for s in range(len(cache) - 1, -1, -1):
        grad += gQ
        gV = settings.discount * np.einsum("kg,kgj->j", gQ, mdp.transitions)
        if s == 0:
            break
        gQ = gV[:, None] * cache[s - 1]
    return ll, grad


@dataclass(eq=False)
class MlirlResult:
    regulator: RewardRegulator
    loglik_trace: list


def mlirl_fit(mdp: HighLevelMDP, settings: MlirlSettings | None = None,
              init_table: np.ndarray | None = None) -> MlirlResult:
    """Gradient ascent on the Boltzmann log-likelihood of high-level choices."""
    if settings is None:
        settings = MlirlSettings()
    table = np.ones((mdp.n_states, mdp.n_actions)) if init_table is None \
        else np.array(init_table, dtype=np.float64, copy=True)
    if table.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("init_table shape mismatch")
    trace = []
    for _ in range(settings.steps):
        ll, grad = loglik_and_grad(table, mdp, settings)
        trace.append(ll)
        table = table + settings.learning_rate * grad
    ll, _ = loglik_and_grad(table, mdp, settings)
    trace.append(ll)
    return MlirlResult(regulator=RewardRegulator(table=table,
                                                 boltzmann_temp=settings.temperature),
                       loglik_trace=trace)


def per_timestep_rewards(seg: Segmentation, mixture: PolicyMixture,
                         regulator: RewardRegulator, dataset: Dataset) -> dict:
    """r_t = mean over policies of pi_g(a_t | x_t) * table[k_t, g].

    With an all-ones table this is the mean demonstrated-action probability
    across policies. Returns a dict trajectory id -> (T,) array.
    """
    out = {}
    for tr in dataset.trajectories:
        labels = seg.labels[tr.id]
        probs = np.column_stack([
            np.exp(net.action_log_probs(tr.states, tr.actions))
            for net in mixture.policies
        ])
        out[tr.id] = (probs * regulator.table[labels]).mean(axis=1)
    return out
