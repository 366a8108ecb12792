"""Time- and reward-aware sub-trajectory segmentation.

Each timestep of a trajectory is represented by its stacked window (the
omega most recent states). K clusters carry Gaussian window models
N(mu_k, Theta_k^{-1}) with sparse block-Toeplitz precisions. Assignment is a
penalized Viterbi pass: emission costs are Gaussian negative log-likelihoods
and every label change pays a switch penalty

    beta * clamp(phi(dr_t, log(e + dT_t)), floor, cap) / cap

where phi is a bivariate Gaussian density over (reward change, log time gap)
refit from data. A switch in a typical reward/gap context costs beta; large
reward jumps and unusually long gaps relax the penalty toward
beta * floor / cap. Normalizing by the cap keeps beta's meaning stable when
phi is refit on rewards with a different scale. Model estimation alternates
the Viterbi assignment with per-cluster sparse precision fits; the number of
clusters is chosen by BIC.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tglasso
from .trajdata import Dataset, Trajectory, window_matrix

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(eq=False)
class ClusterModel:
    """Gaussian window model: mean, precision, and cached log det."""

    mu: np.ndarray
    theta: np.ndarray
    log_det: float

    @classmethod
    def from_theta(cls, mu: np.ndarray, theta: np.ndarray) -> "ClusterModel":
        sign, logdet = np.linalg.slogdet(theta)
        if sign <= 0:
            raise ValueError("cluster precision must be positive definite")
        return cls(mu=np.asarray(mu, dtype=np.float64),
                   theta=np.asarray(theta, dtype=np.float64), log_det=float(logdet))


@dataclass
class PenaltyInputs:
    """Switch-penalty context: beta, per-timestep rewards, and phi parameters.

    rewards maps trajectory id to a (T,) array; phi_mean/phi_cov parameterize
    the bivariate Gaussian over (|reward change|, log(e + time gap));
    density values are clamped to [density_floor, density_cap] and then
    normalized by density_cap, so beta is the cost of a switch at the
    density cap and beta * floor / cap the cost in the far tails.
    """

    beta: float
    rewards: dict
    phi_mean: np.ndarray
    phi_cov: np.ndarray
    density_floor: float
    density_cap: float

    def __post_init__(self):
        self.phi_mean = np.asarray(self.phi_mean, dtype=np.float64).reshape(2)
        self.phi_cov = np.asarray(self.phi_cov, dtype=np.float64).reshape(2, 2)
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not (0 < self.density_floor <= self.density_cap):
            raise ValueError("need 0 < density_floor <= density_cap")
        if np.linalg.eigvalsh(self.phi_cov)[0] <= 0:
            raise ValueError("phi covariance must be positive definite")

    @classmethod
    def fit(cls, beta: float, rewards: dict, dataset: Dataset,
            ridge: float = 1e-6, floor_ratio: float = 0.4) -> "PenaltyInputs":
        """Fit phi to the pooled (|dr|, log(e + dT)) pairs of a dataset.

        The covariance gets a ridge so degenerate channels (e.g. constant
        rewards) stay usable; the clamp is [floor_ratio * d_mode, d_mode]
        with d_mode the fitted density's mode value, so a switch costs
        between floor_ratio * beta and beta. The default floor keeps
        single-step label flicker expensive enough that the cluster-count
        selection cannot profit from it while still letting atypical
        contexts relax the cost.
        """
        pairs = []
        for tr in dataset.trajectories:
            r = np.asarray(rewards[tr.id], dtype=np.float64)
            if r.shape != (len(tr),):
                raise ValueError(f"rewards for {tr.id!r} have shape {r.shape}, expected ({len(tr)},)")
            if len(tr) < 2:
                continue
            dr = np.abs(np.diff(r))
            lg = np.log(math.e + tr.delta_t)
            pairs.append(np.column_stack([dr, lg]))
        if not pairs:
            raise ValueError("no timestamp gaps in dataset; cannot fit the penalty density")
        V = np.concatenate(pairs, axis=0)
        mean = V.mean(axis=0)
        Y = V - mean
        cov = Y.T @ Y / V.shape[0] + ridge * np.eye(2)
        d_mode = 1.0 / (2.0 * math.pi * math.sqrt(float(np.linalg.det(cov))))
        return cls(beta=beta, rewards=rewards, phi_mean=mean, phi_cov=cov,
                   density_floor=floor_ratio * d_mode, density_cap=d_mode)

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "beta": float(self.beta),
            "phi_mean": self.phi_mean.tolist(),
            "phi_cov": self.phi_cov.tolist(),
            "density_floor": float(self.density_floor),
            "density_cap": float(self.density_cap),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PenaltyInputs":
        return cls(beta=float(doc["beta"]), rewards={},
                   phi_mean=np.asarray(doc["phi_mean"]),
                   phi_cov=np.asarray(doc["phi_cov"]),
                   density_floor=float(doc["density_floor"]),
                   density_cap=float(doc["density_cap"]))


def switch_penalty(delta_r, delta_t, p: PenaltyInputs):
    """Penalty paid when the label changes across a gap. Vectorized.

    Computes beta * clamp(phi(dr, log(e + dT)), floor, cap) / cap.
    Non-increasing in the Mahalanobis distance of (dr, log(e + dT)) from the
    phi mean: a reward jump or an unusually long gap makes the switch
    cheaper, never dearer, while a switch in a typical context costs beta.
    """
    dr = np.atleast_1d(np.asarray(delta_r, dtype=np.float64))
    dt = np.atleast_1d(np.asarray(delta_t, dtype=np.float64))
    if np.any(dt <= 0):
        raise ValueError("time gaps must be positive")
    v = np.column_stack([dr, np.log(math.e + dt)]) - p.phi_mean
    sol = np.linalg.solve(p.phi_cov, v.T).T
    maha = np.einsum("ij,ij->i", v, sol)
    det = float(np.linalg.det(p.phi_cov))
    density = np.exp(-0.5 * maha) / (2.0 * math.pi * math.sqrt(det))
    out = p.beta * np.clip(density, p.density_floor, p.density_cap) / p.density_cap
    return float(out[0]) if np.isscalar(delta_r) or np.ndim(delta_r) == 0 else out


def emission_negloglik(w: np.ndarray, c: ClusterModel) -> float:
    """Gaussian negative log-likelihood of one stacked window.

    0.5 * (w - mu)^T Theta (w - mu) - 0.5 * log|Theta| + (d/2) * log(2 pi),
    d being the stacked dimension.
    """
    w = np.asarray(w, dtype=np.float64)
    y = w - c.mu
    d = y.shape[-1]
    return float(0.5 * y @ c.theta @ y - 0.5 * c.log_det + 0.5 * d * LOG_2PI)


def _emission_matrix(W: np.ndarray, models: list) -> np.ndarray:
    """(T, K) emission costs for a window matrix."""
    T, d = W.shape
    E = np.empty((T, len(models)))
    for k, c in enumerate(models):
        Y = W - c.mu
        E[:, k] = 0.5 * np.einsum("ij,jk,ik->i", Y, c.theta, Y) \
            - 0.5 * c.log_det + 0.5 * d * LOG_2PI
    return E


def viterbi_assign(windows: np.ndarray, models: list, p: PenaltyInputs,
                   delta_ts: np.ndarray, delta_rs: np.ndarray) -> np.ndarray:
    """Minimum-cost label path for one trajectory.

    Total cost = sum of emissions + switch penalty at each label change.
    The first window pays no switch penalty. Ties break toward the smaller
    cluster index.
    """
    W = np.asarray(windows, dtype=np.float64)
    T = W.shape[0]
    K = len(models)
    E = _emission_matrix(W, models)
    if T == 1:
        return np.array([int(np.argmin(E[0]))], dtype=np.int64)
    delta_ts = np.asarray(delta_ts, dtype=np.float64)
    delta_rs = np.asarray(delta_rs, dtype=np.float64)
    if delta_ts.shape != (T - 1,) or delta_rs.shape != (T - 1,):
        raise ValueError("delta_ts and delta_rs must have length T - 1")
    pens = switch_penalty(delta_rs, delta_ts, p)

    cost = E[0].copy()
    ptr = np.zeros((T, K), dtype=np.int64)
    for t in range(1, T):
        pen = pens[t - 1]
        new_cost = np.empty(K)
        for k in range(K):
            cand = cost + pen
            cand[k] = cost[k]
            j = int(np.argmin(cand))  # first minimum = smallest index
            ptr[t, k] = j
            new_cost[k] = E[t, k] + cand[j]
        cost = new_cost
    labels = np.empty(T, dtype=np.int64)
    labels[-1] = int(np.argmin(cost))
    for t in range(T - 1, 0, -1):
        labels[t - 1] = ptr[t, labels[t]]
    return labels


def path_cost(labels: np.ndarray, windows: np.ndarray, models: list,
              p: PenaltyInputs, delta_ts: np.ndarray, delta_rs: np.ndarray) -> float:
    """Cost of an arbitrary label path under the Viterbi objective."""
    E = _emission_matrix(np.asarray(windows, dtype=np.float64), models)
    T = E.shape[0]
    total = float(E[np.arange(T), labels].sum())
    if T > 1:
        pens = switch_penalty(np.asarray(delta_rs), np.asarray(delta_ts), p)
        switches = labels[1:] != labels[:-1]
        total += float(pens[switches].sum())
    return total


@dataclass(eq=False)
class SubTrajectory:
    """A maximal run of constant cluster label within one trajectory."""

    trajectory_id: str
    start: int
    end: int  # exclusive
    cluster: int
    states: np.ndarray
    actions: np.ndarray

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(eq=False)
class Segmentation:
    """Per-timestep labels plus the derived run-length sub-trajectories."""

    labels: dict
    sub_trajectories: list = field(default_factory=list)

    def __post_init__(self):
        runs = []
        for tid, lab in self.labels.items():
            lab = np.asarray(lab, dtype=np.int64)
            self.labels[tid] = lab
            start = 0
            for t in range(1, len(lab) + 1):
                if t == len(lab) or lab[t] != lab[start]:
                    runs.append((tid, start, t, int(lab[start])))
                    start = t
        self.sub_trajectories = runs

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "labels": {tid: lab.tolist() for tid, lab in self.labels.items()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Segmentation":
        return cls(labels={tid: np.asarray(lab, dtype=np.int64)
                           for tid, lab in doc["labels"].items()})


def extract_subtrajectories(dataset: Dataset, seg: Segmentation) -> list[SubTrajectory]:
    """Materialize sub-trajectories with their states and actions, in dataset order."""
    out = []
    by_id = {tr.id: tr for tr in dataset.trajectories}
    for tid, start, end, k in seg.sub_trajectories:
        tr = by_id[tid]
        out.append(SubTrajectory(trajectory_id=tid, start=start, end=end, cluster=k,
                                 states=tr.states[start:end], actions=tr.actions[start:end]))
    return out


@dataclass
class TiccSettings:
    max_em_iters: int = 100
    objective_rel_tol: float = 1e-5
    admm: tglasso.ADMMSettings = field(default_factory=tglasso.ADMMSettings)
    seed: int = 0
    n_restarts: int = 1  # random inits tried; best final objective wins

    def __post_init__(self):
        if self.max_em_iters < 1:
            raise ValueError("max_em_iters must be >= 1")
        if self.objective_rel_tol <= 0:
            raise ValueError("objective_rel_tol must be positive")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")


@dataclass(eq=False)
class TiccResult:
    models: list
    segmentation: Segmentation
    objective_trace: list
    iterations: int
    converged: bool


def _kmeanspp_labels(W_all: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding, then a single nearest-seed assignment."""
    n = W_all.shape[0]
    seeds = [int(rng.integers(n))]
    d2 = np.square(W_all - W_all[seeds[0]]).sum(axis=1)
    for _ in range(1, K):
        total = float(d2.sum())
        if total <= 0:
            probs = np.full(n, 1.0 / n)
        else:
            probs = d2 / total
        seeds.append(int(rng.choice(n, p=probs)))
        d2 = np.minimum(d2, np.square(W_all - W_all[seeds[-1]]).sum(axis=1))
    centers = W_all[seeds]
    dists = ((W_all[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(dists, axis=1).astype(np.int64)


def _fill_empty_by_distance(flat: np.ndarray, W_all: np.ndarray, K: int) -> None:
    """Give every empty cluster one window: the worst Euclidean fit (in place)."""
    for k in range(K):
        if np.any(flat == k):
            continue
        counts = np.bincount(flat, minlength=K)
        means = np.zeros((K, W_all.shape[1]))
        for j in range(K):
            if counts[j] > 0:
                means[j] = W_all[flat == j].mean(axis=0)
        d2 = np.square(W_all - means[flat]).sum(axis=1)
        d2[counts[flat] < 2] = -np.inf  # do not empty a singleton
        flat[int(np.argmax(d2))] = k


def fit(dataset: Dataset, K: int, omega: int, lam: float, penalty: PenaltyInputs,
        settings: TiccSettings | None = None, init_labels: dict | None = None,
        init_models: list | None = None) -> TiccResult:
    """Alternate penalized Viterbi assignment with per-cluster precision fits.

    The recorded objective (emissions + switch penalties + lam * l1-off over
    clusters) is evaluated after each assignment pass and is non-increasing
    up to solver tolerance. Empty clusters are re-seeded with the single
    worst-fitting window before the next refit.
    """
    if settings is None:
        settings = TiccSettings()
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    mats, trs = [], list(dataset.trajectories)
    for tr in trs:
        mat, _ = window_matrix(tr, omega)
        mats.append(mat)
    W_all = np.concatenate(mats, axis=0)
    n = W_all.shape[0]
    if K > n:
        raise ValueError(f"K = {K} exceeds the {n} available windows")
    offsets = np.cumsum([0] + [mat.shape[0] for mat in mats])
    m = dataset.state_dim

    dts = [tr.delta_t for tr in trs]
    drs = []
    for tr in trs:
        r = np.asarray(penalty.rewards.get(tr.id, np.ones(len(tr))), dtype=np.float64)
        drs.append(np.abs(np.diff(r)))

    def estep(models):
        labs = {}
        for i, tr in enumerate(trs):
            labs[tr.id] = viterbi_assign(mats[i], models, penalty, dts[i], drs[i])
        return labs

    def flatten(labs):
        return np.concatenate([labs[tr.id] for tr in trs])

    def mstep(flat):
        models = []
        for k in range(K):
            members = W_all[flat == k]
            mu, S, total = tglasso.empirical_stats(members)
            lam_eff = 2.0 * lam / total
            prob = tglasso.GlassoProblem(empirical_covariance=S, sample_count=total,
                                         lam=lam_eff, omega=omega, m=m)
            res = tglasso.solve(prob, settings.admm)
            models.append(ClusterModel.from_theta(mu, res.theta))
        return models

    def objective(labs, models):
        total = 0.0
        for i, tr in enumerate(trs):
            E = _emission_matrix(mats[i], models)
            lab = labs[tr.id]
            total += float(E[np.arange(len(lab)), lab].sum())
            if len(lab) > 1:
                pens = switch_penalty(drs[i], dts[i], penalty)
                total += float(pens[lab[1:] != lab[:-1]].sum())
        for c in models:
            total += lam * float(np.abs(c.theta).sum() - np.abs(np.diag(c.theta)).sum())
        return total

    def run_em(flat):
        trace = []
        prev_flat = None
        prev_obj = None
        converged = False
        models = []
        iters = 0
        final_flat = flat
        for iters in range(1, settings.max_em_iters + 1):
            models = mstep(flat)
            labels = estep(models)
            new_flat = flatten(labels)
            final_flat = new_flat
            obj = objective(labels, models)
            trace.append(obj)
            if prev_flat is not None and np.array_equal(new_flat, prev_flat):
                converged = True
                break
            if prev_obj is not None and abs(obj - prev_obj) <= settings.objective_rel_tol * max(1.0, abs(prev_obj)):
                converged = True
                break
            prev_flat = new_flat.copy()
            prev_obj = obj
            flat = new_flat
            # re-seed empty clusters with the worst-fitting window before refit
            for k in range(K):
                if not np.any(flat == k):
                    E_own = np.empty(n)
                    for j in range(K):
                        sel = flat == j
                        if np.any(sel):
                            E_own[sel] = _emission_matrix(W_all[sel], [models[j]])[:, 0]
                    counts = np.bincount(flat, minlength=K)
                    E_own[counts[flat] < 2] = -np.inf
                    flat = flat.copy()
                    flat[int(np.argmax(E_own))] = k
        return final_flat, models, trace, iters, converged

    rng = np.random.default_rng(settings.seed)
    if init_models is not None:
        if len(init_models) != K:
            raise ValueError(f"init_models has {len(init_models)} entries, expected {K}")
        flat = flatten(estep(init_models))
        _fill_empty_by_distance(flat, W_all, K)
        final_flat, models, trace, iters, converged = run_em(flat)
    elif init_labels is not None:
        labels = {tr.id: np.asarray(init_labels[tr.id], dtype=np.int64) for tr in trs}
        flat = flatten(labels)
        if flat.max() >= K or flat.min() < 0:
            raise ValueError("init_labels out of range")
        _fill_empty_by_distance(flat, W_all, K)
        final_flat, models, trace, iters, converged = run_em(flat)
    else:
        # explicit inits are deterministic starts; random inits get restarts
        best = None
        for _ in range(settings.n_restarts):
            flat = _kmeanspp_labels(W_all, K, rng)
            _fill_empty_by_distance(flat, W_all, K)
            out = run_em(flat)
            if best is None or out[2][-1] < best[2][-1]:
                best = out
        final_flat, models, trace, iters, converged = best

    final_labels = {}
    for i, tr in enumerate(trs):
        final_labels[tr.id] = final_flat[offsets[i]:offsets[i + 1]].copy()
    seg = Segmentation(labels=final_labels)
    return TiccResult(models=models, segmentation=seg, objective_trace=trace,
                      iterations=iters, converged=converged)


def _df(models: list, m: int, omega: int, tol: float = 1e-10) -> int:
    """Parameter count: non-zero unique precision entries + means."""
    df = 0
    for c in models:
        blocks = tglasso.unique_blocks(c.theta, m, omega)
        a0 = blocks[0]
        iu = np.triu_indices(m)
        df += int((np.abs(a0[iu]) > tol).sum())
        for Al in blocks[1:]:
            df += int((np.abs(Al) > tol).sum())
        df += m * omega
    return df


def bic_score(dataset: Dataset, result: TiccResult, omega: int) -> float:
    """-2 * sum log-likelihood of assigned windows + df * log(#windows)."""
    m = dataset.state_dim
    total_ll = 0.0
    n = 0
    for tr in dataset.trajectories:
        mat, _ = window_matrix(tr, omega)
        E = _emission_matrix(mat, result.models)
        lab = result.segmentation.labels[tr.id]
        total_ll += float(-E[np.arange(len(lab)), lab].sum())
        n += len(lab)
    df = _df(result.models, m, omega)
    return -2.0 * total_ll + df * math.log(n)


def bic_select(dataset: Dataset, K_candidates, omega: int, lam: float,
               penalty: PenaltyInputs, settings: TiccSettings | None = None):
    """Fit each candidate K and return (best_K, {K: BIC}). Failures are skipped
    with a warning; every candidate failing is an error. Ties prefer smaller K."""
    scores = {}
    results = {}
    for K in K_candidates:
        try:
            res = fit(dataset, K, omega, lam, penalty, settings)
            scores[int(K)] = bic_score(dataset, res, omega)
            results[int(K)] = res
        except (ValueError, tglasso.SolverError, np.linalg.LinAlgError) as exc:
            warnings.warn(f"candidate K={K} failed: {exc}")
    if not scores:
        raise tglasso.SolverError("every K candidate failed")
    best = min(sorted(scores), key=lambda k: (scores[k], k))
    return best, scores, results
