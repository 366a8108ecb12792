"""Synthetic benchmark generator with a known regime/policy hierarchy.

Trajectories are built from contiguous segments. Each segment carries a
latent regime k drawn from a Markov chain; states follow an autoregressive
Gaussian whose stacked-window law is N(mu_k, Theta_k^{-1}) with Theta_k
block-Toeplitz; timestamps advance by exponential gaps with a per-regime
rate; actions are drawn from the policy g(k), a softmax of a fixed random
affine map of the current state.

Regimes are laid out so that regimes sharing a state-space location host all
policies: the instantaneous state does not reveal the active policy, while
the window covariance structure still identifies the regime.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .trajdata import Dataset, Trajectory


class GenerationError(RuntimeError):
    """Raised when a sampled parameter set cannot be made positive definite."""


@dataclass
class GeneratorConfig:
    """Desk-scale defaults: N=60 trajectories of ~3 segments x ~40 steps."""

    K_true: int = 4
    G_true: int = 2
    m: int = 6
    A: int = 2
    omega_true: int = 2
    N: int = 60
    mean_segment_length: int = 40
    segments_per_trajectory: int = 3
    timestamp_rate_per_regime: tuple = ()
    mean_separation: float = 2.0
    precision_sparsity: float = 0.3
    lag_strength: float = 0.5
    variance_spread: float = 3.0
    pair_offset: float = 1.5
    logit_scale: float = 2.5
    seed: int = 0

    def __post_init__(self):
        if self.K_true < 1 or self.G_true < 1:
            raise ValueError("K_true and G_true must be >= 1")
        if self.G_true > self.K_true:
            raise ValueError("G_true cannot exceed K_true (the regime-policy map is surjective)")
        if self.m < 1 or self.A < 2 or self.omega_true < 1:
            raise ValueError("need m >= 1, A >= 2, omega_true >= 1")
        if self.N < 1 or self.mean_segment_length < 2 or self.segments_per_trajectory < 1:
            raise ValueError("N, mean_segment_length, segments_per_trajectory out of range")
        if not 0.0 <= self.precision_sparsity <= 1.0:
            raise ValueError("precision_sparsity must be in [0, 1]")
        if self.variance_spread < 1.0:
            raise ValueError("variance_spread must be >= 1")
        if self.pair_offset < 0.0:
            raise ValueError("pair_offset must be >= 0")
        rates = tuple(self.timestamp_rate_per_regime)
        if not rates:
            # staggered sampling rates so gap statistics differ across regimes
            rates = tuple(0.5 + 1.5 * ((k * 7) % self.K_true) / max(1, self.K_true - 1)
                          if self.K_true > 1 else 1.0 for k in range(self.K_true))
        if len(rates) != self.K_true or any(r <= 0 for r in rates):
            raise ValueError("timestamp_rate_per_regime needs K_true positive rates")
        self.timestamp_rate_per_regime = rates


@dataclass
class GroundTruth:
    """Everything the generator knows: latent labels and true parameters."""

    regime_labels: dict            # traj id -> (T,) int array
    segments: list                 # (traj_id, start, end, regime, policy), end exclusive
    true_means: np.ndarray         # (K, m) per-state means
    true_precisions: list          # K matrices, (m*omega, m*omega)
    true_policy_params: list       # (W (A, m), b (A,)) per policy
    regime_policy_map: np.ndarray  # (K,) ints

    def policy_labels(self) -> np.ndarray:
        """Policy index per segment, aligned with `segments`."""
        return np.array([seg[4] for seg in self.segments], dtype=np.int64)

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "regime_labels": {tid: lab.tolist() for tid, lab in self.regime_labels.items()},
            "segments": [[tid, int(s), int(e), int(k), int(g)]
                         for tid, s, e, k, g in self.segments],
            "true_means": self.true_means.tolist(),
            "true_precisions": [P.tolist() for P in self.true_precisions],
            "true_policy_params": [{"W": W.tolist(), "b": b.tolist()}
                                   for W, b in self.true_policy_params],
            "regime_policy_map": self.regime_policy_map.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GroundTruth":
        return cls(
            regime_labels={tid: np.asarray(lab, dtype=np.int64)
                           for tid, lab in doc["regime_labels"].items()},
            segments=[(seg[0], int(seg[1]), int(seg[2]), int(seg[3]), int(seg[4]))
                      for seg in doc["segments"]],
            true_means=np.asarray(doc["true_means"], dtype=np.float64),
            true_precisions=[np.asarray(P, dtype=np.float64) for P in doc["true_precisions"]],
            true_policy_params=[(np.asarray(p["W"], dtype=np.float64),
                                 np.asarray(p["b"], dtype=np.float64))
                                for p in doc["true_policy_params"]],
            regime_policy_map=np.asarray(doc["regime_policy_map"], dtype=np.int64),
        )


def save_ground_truth(gt: GroundTruth, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(gt.to_json(), fh, sort_keys=True)


def load_ground_truth(path) -> GroundTruth:
    with open(path, "r", encoding="utf-8") as fh:
        return GroundTruth.from_json(json.load(fh))


def make_block_toeplitz_precision(m: int, omega: int, sparsity: float, seed,
                                  value_range: tuple = (0.2, 0.6),
                                  lag_scale: float = 0.5) -> np.ndarray:
    """Random sparse PD block-Toeplitz precision matrix.

    A0 is sparse symmetric: off-diagonal entries are non-zero with
    probability `sparsity`, drawn uniformly from +-value_range, and the
    diagonal is loaded for strict dominance. Lag blocks are built as
    A_l = (c1_l * A0 + c0_l * I) * lag_scale**l, so they are symmetric and
    commute with A0. That restriction is what lets an autoregressive sampler
    driven by the window conditionals be exactly stationary with window law
    N(mu, theta^{-1}) for omega=2 (and near-stationary for omega>2): the
    chain's marginals and the window marginals then agree. Positive
    definiteness reduces to per-eigendirection scalar Toeplitz checks; the
    lag weights are shrunk geometrically until every check passes.
    """
    if m < 1 or omega < 1:
        raise ValueError("need m >= 1 and omega >= 1")
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must be in [0, 1], got {sparsity}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo, hi = value_range
    A0 = np.zeros((m, m))
    for p in range(m):
        for q in range(p + 1, m):
            if rng.random() < sparsity:
                v = rng.uniform(lo, hi) * (1 if rng.random() < 0.5 else -1)
                A0[p, q] = A0[q, p] = v
    margins = 0.4 + 0.4 * rng.random(m)
    A0[np.diag_indices(m)] = np.abs(A0).sum(axis=1) + margins
    a_eigs = np.linalg.eigvalsh(A0)

    coeffs = []
    for lag in range(1, omega):
        scale = lag_scale ** lag
        c1 = scale * rng.uniform(0.3, 0.6) * (1 if rng.random() < 0.5 else -1)
        c0 = scale * rng.uniform(0.1, 0.3) * (1 if rng.random() < 0.5 else -1)
        coeffs.append((c1, c0))

    for _ in range(100):
        # PD across every A0 eigendirection: the omega x omega scalar
        # Toeplitz matrix with diagonal a and lag entries c1*a + c0 must be PD
        ok = True
        for a in a_eigs:
            row = np.zeros(omega)
            row[0] = a
            for lag, (c1, c0) in enumerate(coeffs, start=1):
                row[lag] = c1 * a + c0
            tmat = np.empty((omega, omega))
            for i in range(omega):
                for j in range(omega):
                    tmat[i, j] = row[abs(i - j)]
            if omega > 1 and np.linalg.eigvalsh(tmat)[0] <= 0:
                ok = False
                break
        if ok:
            blocks = [A0] + [c1 * A0 + c0 * np.eye(m) for c1, c0 in coeffs]
            d = m * omega
            theta = np.zeros((d, d))
            for i in range(omega):
                for j in range(omega):
                    blk = blocks[abs(j - i)]
                    theta[i * m:(i + 1) * m, j * m:(j + 1) * m] = blk
            if np.linalg.eigvalsh(theta)[0] > 0:
                return theta
        coeffs = [(0.7 * c1, 0.7 * c0) for c1, c0 in coeffs]
    raise GenerationError("no positive-definite precision after 100 attempts")


def _conditional_samplers(mu_w: np.ndarray, theta: np.ndarray, m: int, omega: int):
    """Per-history-length regression matrices and conditional Cholesky factors.

    Entry h (0 <= h <= omega-1) conditions the next state on the last h
    states under the window Gaussian N(mu_w, theta^{-1}).
    """
    sigma = np.linalg.inv(theta)
    sigma = (sigma + sigma.T) / 2.0
    out = []
    for h in range(omega):
        sub = sigma[-(h + 1) * m:, -(h + 1) * m:]
        if h == 0:
            cc = sub
            B = np.zeros((m, 0))
        else:
            Spp = sub[:h * m, :h * m]
            Scp = sub[h * m:, :h * m]
            B = Scp @ np.linalg.inv(Spp)
            cc = sub[h * m:, h * m:] - B @ Scp.T
        cc = (cc + cc.T) / 2.0
        out.append((B, np.linalg.cholesky(cc)))
    return out


def generate(config: GeneratorConfig):
    """Sample a dataset and its ground truth. Fixed seed, fixed bytes."""
    K, G, m, A, omega = (config.K_true, config.G_true, config.m, config.A,
                         config.omega_true)
    param_rng = np.random.default_rng([config.seed, 0])

    n_loc = math.ceil(K / G)
    locations = param_rng.standard_normal((n_loc, m))
    locations /= np.linalg.norm(locations, axis=1, keepdims=True)
    locations *= config.mean_separation
    policy_map = np.array([k % G for k in range(K)], dtype=np.int64)
    # regimes sharing a location get a small mean jitter on top of the
    # variance spread, so the overlap is partial rather than concentric
    jitter = param_rng.standard_normal((K, m))
    jitter /= np.linalg.norm(jitter, axis=1, keepdims=True)
    jitter *= config.pair_offset / math.sqrt(2.0)
    means = np.array([locations[k // G] + jitter[k] for k in range(K)])

    precisions = [
        make_block_toeplitz_precision(m, omega, config.precision_sparsity,
                                      np.random.default_rng([config.seed, 7, k]),
                                      lag_scale=config.lag_strength)
        for k in range(K)
    ]
    if G > 1 and config.variance_spread != 1.0:
        # regimes sharing a mean location (same k // G) get distinct overall
        # scales, so they stay identifiable from second moments alone
        for k in range(K):
            precisions[k] = precisions[k] * config.variance_spread ** (
                (k % G) / (G - 1) - 0.5)
    samplers = [
        _conditional_samplers(np.tile(means[k], omega), precisions[k], m, omega)
        for k in range(K)
    ]

    policies = []
    for g in range(G):
        W = param_rng.standard_normal((A, m)) * (config.logit_scale / math.sqrt(m))
        b = np.zeros(A)
        policies.append((W, b))

    rates = np.asarray(config.timestamp_rate_per_regime, dtype=np.float64)
    min_len = max(omega + 1, 3)

    trajectories = []
    regime_labels = {}
    segments = []
    for i in range(config.N):
        rng = np.random.default_rng([config.seed, 101, i])
        tid = f"traj{i:04d}"

        regs = []
        k = int(rng.integers(K))
        for _ in range(config.segments_per_trajectory):
            regs.append(k)
            if K > 1:
                step = int(rng.integers(1, K))
                k = (k + step) % K
        lengths = [max(min_len, int(rng.poisson(config.mean_segment_length)))
                   for _ in regs]

        T = sum(lengths)
        states = np.empty((T, m))
        labels = np.empty(T, dtype=np.int64)
        t = 0
        for k_seg, L in zip(regs, lengths):
            for _ in range(L):
                h = min(t, omega - 1)
                B, chol = samplers[k_seg][h]
                mu_c = means[k_seg]
                if h > 0:
                    v = states[t - h:t].ravel()
                    mu_prev = np.tile(means[k_seg], h)
                    mu_c = mu_c + B @ (v - mu_prev)
                states[t] = mu_c + chol @ rng.standard_normal(m)
                labels[t] = k_seg
                t += 1

        gaps = rng.exponential(1.0 / rates[labels[1:]]) if T > 1 else np.empty(0)
        timestamps = np.concatenate([[0.0], np.cumsum(gaps)])

        actions = np.empty(T, dtype=np.int64)
        u = rng.random(T)
        for t in range(T):
            W, b = policies[policy_map[labels[t]]]
            logits = W @ states[t] + b
            z = logits - logits.max()
            probs = np.exp(z) / np.exp(z).sum()
            actions[t] = int(np.searchsorted(np.cumsum(probs), u[t], side="right").clip(0, A - 1))

        trajectories.append(Trajectory(id=tid, states=states, actions=actions,
                                       timestamps=timestamps))
        regime_labels[tid] = labels
        start = 0
        for k_seg, L in zip(regs, lengths):
            segments.append((tid, start, start + L, int(k_seg), int(policy_map[k_seg])))
            start += L

    dataset = Dataset(trajectories=tuple(trajectories),
                      feature_names=tuple(f"f{j}" for j in range(m)),
                      action_count=A)
    truth = GroundTruth(regime_labels=regime_labels, segments=segments,
                        true_means=means, true_precisions=precisions,
                        true_policy_params=policies, regime_policy_map=policy_map)
    return dataset, truth
