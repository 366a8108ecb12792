"""Mixture of energy-based policies over sub-trajectory units (EM).

Each sub-trajectory is one mixture unit. Responsibilities come from the
product of per-pair action likelihoods under each candidate policy times the
mixing prior, normalized in log space. The M-step updates the priors in
closed form and retrains each policy on all pairs with responsibility
weights; retrains warm-start from the previous parameters and are kept only
if they do not worsen the weighted cloning loss, so the observed-data
log-likelihood is non-decreasing up to solver tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import edm


@dataclass
class EmSettings:
    max_iters: int = 50
    rel_tol: float = 1e-4
    seed: int = 0
    hard_assignment: bool = False
    collapse_factor: float = 10.0  # empty when prior < 1 / (collapse_factor * N)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol <= 0 or self.collapse_factor <= 0:
            raise ValueError("rel_tol and collapse_factor must be positive")


@dataclass(eq=False)
class PolicyMixture:
    """G policies with mixing priors and per-unit responsibilities."""

    priors: np.ndarray            # (G,), simplex
    policies: list                # G PolicyNet
    responsibilities: np.ndarray  # (N, G), rows on the simplex

    def __post_init__(self):
        self.priors = np.asarray(self.priors, dtype=np.float64)
        self.responsibilities = np.asarray(self.responsibilities, dtype=np.float64)
        G = self.priors.shape[0]
        if len(self.policies) != G or self.responsibilities.shape[1] != G:
            raise ValueError("priors, policies, responsibilities disagree on G")
        if abs(self.priors.sum() - 1.0) > 1e-8 or np.any(self.priors < 0):
            raise ValueError("priors must lie on the simplex")

    @property
    def G(self) -> int:
        return self.priors.shape[0]

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "G": int(self.G),
            "priors": self.priors.tolist(),
            "policies": [p.to_json() for p in self.policies],
            "responsibilities": self.responsibilities.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PolicyMixture":
        return cls(priors=np.asarray(doc["priors"]),
                   policies=[edm.PolicyNet.from_json(p) for p in doc["policies"]],
                   responsibilities=np.asarray(doc["responsibilities"]))


def pair_arrays(subtrajs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pooled (states, actions, unit index per pair) across sub-trajectories."""
    if not subtrajs:
        raise ValueError("no sub-trajectories")
    X = np.concatenate([st.states for st in subtrajs], axis=0)
    a = np.concatenate([st.actions for st in subtrajs])
    idx = np.concatenate([np.full(len(st.actions), i, dtype=np.int64)
                          for i, st in enumerate(subtrajs)])
    return X, a, idx


def _log_joint(X, a, idx, n_units, policies, priors) -> np.ndarray:
    """(N, G): sum of per-pair action log-probs per unit plus log prior."""
    G = len(policies)
    out = np.empty((n_units, G))
    with np.errstate(divide="ignore"):
        log_nu = np.log(priors)
    for g, net in enumerate(policies):
        lp = net.action_log_probs(X, a)
        out[:, g] = np.bincount(idx, weights=lp, minlength=n_units) + log_nu[g]
    return out


def responsibilities(subtrajs, mixture: PolicyMixture) -> np.ndarray:
    """Posterior over policies per sub-trajectory, log-space normalized."""
    X, a, idx = pair_arrays(subtrajs)
    log_u = _log_joint(X, a, idx, len(subtrajs), mixture.policies, mixture.priors)
    log_norm = logsumexp(log_u, axis=1, keepdims=True)
    return np.exp(log_u - log_norm)


@dataclass(eq=False)
class EmEdmResult:
    mixture: PolicyMixture
    loglik_trace: list
    iterations: int
    converged: bool


def fit(subtrajs, G: int, edm_config: edm.EdmConfig,
        em_settings: EmSettings | None = None, n_actions: int = 0) -> EmEdmResult:
    """EM over sub-trajectory units.

    Responsibilities are initialized by a seeded Dirichlet(1) draw per unit;
    iterations alternate {prior update; responsibility-weighted policy
    training} with the responsibility pass, until the observed-data
    log-likelihood moves by less than rel_tol (relative) or max_iters is hit.
    Every policy trains with the same derived seed, so permuting component
    indices permutes the result. G=1 reduces to a single training run on the
    pooled pairs. n_actions=0 infers the action space from the data.
    """
    if em_settings is None:
        em_settings = EmSettings()
    if G < 1:
        raise ValueError(f"G must be >= 1, got {G}")
    X, a, idx = pair_arrays(subtrajs)
    n_units = len(subtrajs)
    if n_actions <= 0:
        n_actions = _infer_actions(subtrajs)

    if G == 1:
        res = edm.train(X, a, n_actions, edm_config)
        ll = float(res.net.action_log_probs(X, a).sum())
        mix = PolicyMixture(priors=np.ones(1), policies=[res.net],
                            responsibilities=np.ones((n_units, 1)))
        return EmEdmResult(mixture=mix, loglik_trace=[ll], iterations=1, converged=True)

    rng = np.random.default_rng(em_settings.seed)
    resp = rng.dirichlet(np.ones(G), size=n_units)
    policies = [None] * G
    trace = []
    prev_ll = None
    converged = False
    iters = 0
    for iters in range(1, em_settings.max_iters + 1):
        if em_settings.hard_assignment:
            hard = np.zeros_like(resp)
            hard[np.arange(n_units), resp.argmax(axis=1)] = 1.0
            resp = hard
        nu = resp.mean(axis=0)
        # re-seed collapsed components from the least-committed unit
        floor = 1.0 / (em_settings.collapse_factor * n_units)
        for g in range(G):
            if nu[g] < floor:
                j = int(resp.max(axis=1).argmin())
                resp[j] = 0.0
                resp[j, g] = 1.0
                nu = resp.mean(axis=0)
        for g in range(G):
            w_pairs = resp[idx, g]
            trained = edm.train(X, a, n_actions, edm_config, weights=w_pairs,
                                init_net=policies[g])
            if policies[g] is None:
                policies[g] = trained.net
            else:
                # generalized-EM accept rule: never worsen the weighted loss
                old = edm.bc_loss(X, a, w_pairs, policies[g])
                new = edm.bc_loss(X, a, w_pairs, trained.net)
                if new <= old:
                    policies[g] = trained.net
        log_u = _log_joint(X, a, idx, n_units, policies, nu)
        log_norm = logsumexp(log_u, axis=1, keepdims=True)
        resp_new = np.exp(log_u - log_norm)
        ll = float(log_norm.sum())
        trace.append(ll)
        if prev_ll is not None and abs(ll - prev_ll) <= em_settings.rel_tol * max(1.0, abs(prev_ll)):
            resp = resp_new
            converged = True
            break
        prev_ll = ll
        resp = resp_new

    mix = PolicyMixture(priors=nu, policies=policies, responsibilities=resp)
    return EmEdmResult(mixture=mix, loglik_trace=trace, iterations=iters,
                       converged=converged)


def _infer_actions(subtrajs) -> int:
    return max(2, int(max(st.actions.max() for st in subtrajs)) + 1)


def select_G(subtrajs, G_max: int, edm_config: edm.EdmConfig,
             em_settings: EmSettings | None = None,
             improvement: float = 0.01, n_actions: int = 0):
    """Grow G until a component collapses or the log-likelihood plateaus.

    Accepts G while each fit improves the best log-likelihood by at least
    `improvement` (relative) and produces no effectively-empty component;
    returns (G, {G: final log-likelihood}, {G: EmEdmResult}).
    """
    if em_settings is None:
        em_settings = EmSettings()
    if G_max < 1:
        raise ValueError("G_max must be >= 1")
    n_units = len(subtrajs)
    floor = 1.0 / (10.0 * n_units)
    scores = {}
    results = {}
    accepted = 1
    prev_ll = None
    for G in range(1, G_max + 1):
        res = fit(subtrajs, G, edm_config, em_settings, n_actions=n_actions)
        ll = res.loglik_trace[-1]
        scores[G] = ll
        results[G] = res
        if G > 1:
            if np.any(res.mixture.priors < floor):
                break
            if ll - prev_ll < improvement * abs(prev_ll):
                break
        accepted = G
        prev_ll = ll
    return accepted, scores, results
