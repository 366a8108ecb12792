"""End-to-end offline apprenticeship pipeline.

fit() alternates three stages until the per-timestep segment labels and the
argmax policy assignments both stop moving (or the outer-iteration cap is
hit): time-aware sub-trajectory segmentation over stacked windows, EM over
energy-based policies on the resulting sub-trajectories, and a high-level
reward fit whose table refreshes the per-timestep rewards that feed the next
segmentation round. Rewards start at all-ones; the segmentation penalty
density is refit at the top of every outer iteration.

Model selection happens once, on the first outer iteration: the cluster
count by BIC over config.K_candidates when config.K == 0, the policy count
by likelihood growth up to config.G_max when config.G == 0.

Sub-module seeds are derived from config.seed (see derived_configs); the
seed fields on the nested configs are ignored by the pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import edm, emedm, hireward, rmtticc
from .edm import EdmConfig
from .emedm import EmSettings, PolicyMixture
from .hireward import HighLevelMDP, MlirlSettings, RewardRegulator
from .metrics import classification_metrics, segmentation_metrics
from .rmtticc import ClusterModel, PenaltyInputs, Segmentation, TiccSettings
from .tglasso import ADMMSettings
from .trajdata import DataError, Dataset, window_matrix

ABLATION_NAMES = ("EDM", "EM-EDM", "MT-TICC&EDM", "THEMES_0", "THEMES")

# flat config key -> (attribute path, value kind)
_FLAT_FIELDS = (
    ("seed", ("seed",), "int"),
    ("K", ("K",), "int"),
    ("K_candidates", ("K_candidates",), "ints"),
    ("G", ("G",), "int"),
    ("G_max", ("G_max",), "int"),
    ("omega", ("omega",), "int"),
    ("lam", ("lam",), "float"),
    ("beta", ("beta",), "float"),
    ("outer_iters", ("outer_iters",), "int"),
    ("skip_regulator", ("skip_regulator",), "bool"),
    ("g_improvement", ("g_improvement",), "float"),
    ("edm.hidden", ("edm", "hidden"), "int"),
    ("edm.occupancy_weight", ("edm", "occupancy_weight"), "float"),
    ("edm.learning_rate", ("edm", "learning_rate"), "float"),
    ("edm.epochs", ("edm", "epochs"), "int"),
    ("edm.batch_size", ("edm", "batch_size"), "int"),
    ("edm.sgld_steps", ("edm", "sgld_steps"), "int"),
    ("edm.sgld_step_size", ("edm", "sgld_step_size"), "float"),
    ("edm.sgld_noise_scale", ("edm", "sgld_noise_scale"), "float"),
    ("edm.replay_buffer_size", ("edm", "replay_buffer_size"), "int"),
    ("edm.reinit_prob", ("edm", "reinit_prob"), "float"),
    ("edm.gamma", ("edm", "gamma"), "float"),
    ("em.max_iters", ("em", "max_iters"), "int"),
    ("em.rel_tol", ("em", "rel_tol"), "float"),
    ("em.hard_assignment", ("em", "hard_assignment"), "bool"),
    ("em.collapse_factor", ("em", "collapse_factor"), "float"),
    ("mlirl.steps", ("mlirl", "steps"), "int"),
    ("mlirl.learning_rate", ("mlirl", "learning_rate"), "float"),
    ("mlirl.discount", ("mlirl", "discount"), "float"),
    ("mlirl.temperature", ("mlirl", "temperature"), "float"),
    ("mlirl.value_sweeps", ("mlirl", "value_sweeps"), "int"),
    ("mlirl.value_tol", ("mlirl", "value_tol"), "float"),
    ("ticc.max_em_iters", ("ticc", "max_em_iters"), "int"),
    ("ticc.objective_rel_tol", ("ticc", "objective_rel_tol"), "float"),
    ("ticc.n_restarts", ("ticc", "n_restarts"), "int"),
    ("admm.penalty_rho", ("ticc", "admm", "penalty_rho"), "float"),
    ("admm.max_iters", ("ticc", "admm", "max_iters"), "int"),
    ("admm.abs_tol", ("ticc", "admm", "abs_tol"), "float"),
    ("admm.rel_tol", ("ticc", "admm", "rel_tol"), "float"),
)

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _parse_value(kind: str, raw, key: str):
    if kind == "int":
        if isinstance(raw, bool):
            raise ValueError(f"{key}: expected an integer, got a boolean")
        if isinstance(raw, int):
            return raw
        try:
            return int(str(raw).strip())
        except ValueError:
            raise ValueError(f"{key}: expected an integer, got {raw!r}") from None
    if kind == "float":
        if isinstance(raw, (int, float)) and not isinstance(raw, bool):
            return float(raw)
        try:
            return float(str(raw).strip())
        except ValueError:
            raise ValueError(f"{key}: expected a number, got {raw!r}") from None
    if kind == "bool":
        if isinstance(raw, bool):
            return raw
        s = str(raw).strip().lower()
        if s in _TRUE:
            return True
        if s in _FALSE:
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if kind == "ints":
        if isinstance(raw, (list, tuple)):
            return tuple(int(v) for v in raw)
        parts = [p.strip() for p in str(raw).split(",") if p.strip()]
        if not parts:
            raise ValueError(f"{key}: expected a comma-separated integer list")
        return tuple(int(p) for p in parts)
    raise ValueError(f"unknown config kind {kind!r}")


def _format_value(kind: str, value) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "ints":
        return ",".join(str(int(v)) for v in value)
    if kind == "float":
        return repr(float(value))
    return str(value)


@dataclass
class ThemesConfig:
    """Top-level pipeline configuration. K=0 / G=0 request model selection."""

    seed: int = 0
    K: int = 0
    K_candidates: tuple = (2, 3, 4, 5, 6)
    G: int = 0
    G_max: int = 4
    omega: int = 2
    lam: float = 1e-5
    beta: float = 12.0
    outer_iters: int = 10
    skip_regulator: bool = False
    g_improvement: float = 0.01
    edm: EdmConfig = field(default_factory=EdmConfig)
    em: EmSettings = field(default_factory=EmSettings)
    mlirl: MlirlSettings = field(default_factory=MlirlSettings)
    ticc: TiccSettings = field(default_factory=TiccSettings)

    def __post_init__(self):
        self.K_candidates = tuple(int(k) for k in self.K_candidates)
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be >= 1")
        if self.omega < 1:
            raise ValueError("omega must be >= 1")
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lam and beta must be >= 0")
        if self.K < 0 or self.G < 0:
            raise ValueError("K and G must be >= 0 (0 selects automatically)")
        if self.G_max < 1:
            raise ValueError("G_max must be >= 1")
        if self.g_improvement < 0:
            raise ValueError("g_improvement must be >= 0")
        if self.K == 0:
            if not self.K_candidates or any(k < 1 for k in self.K_candidates):
                raise ValueError("K=0 needs K_candidates with entries >= 1")

    def _get(self, path):
        obj = self
        for name in path:
            obj = getattr(obj, name)
        return obj

    def to_flat(self) -> dict:
        """Flat key -> canonical string value, in schema order."""
        return {key: _format_value(kind, self._get(path))
                for key, path, kind in _FLAT_FIELDS}

    def to_json(self) -> dict:
        doc = {"schema_version": 1}
        for key, path, kind in _FLAT_FIELDS:
            v = self._get(path)
            doc[key] = list(v) if kind == "ints" else v
        return doc

    @classmethod
    def _from_mapping(cls, mapping: dict) -> "ThemesConfig":
        known = {key: (path, kind) for key, path, kind in _FLAT_FIELDS}
        unknown = sorted(set(mapping) - set(known) - {"schema_version"})
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        buckets = {(): {}, ("edm",): {}, ("em",): {}, ("mlirl",): {},
                   ("ticc",): {}, ("ticc", "admm"): {}}
        for key, raw in mapping.items():
            if key == "schema_version":
                continue
            path, kind = known[key]
            buckets[path[:-1]][path[-1]] = _parse_value(kind, raw, key)
        return cls(
            edm=EdmConfig(**buckets[("edm",)]),
            em=EmSettings(**buckets[("em",)]),
            mlirl=MlirlSettings(**buckets[("mlirl",)]),
            ticc=TiccSettings(admm=ADMMSettings(**buckets[("ticc", "admm")]),
                              **buckets[("ticc",)]),
            **buckets[()],
        )

    @classmethod
    def from_flat(cls, flat: dict) -> "ThemesConfig":
        return cls._from_mapping(flat)

    @classmethod
    def from_json(cls, doc: dict) -> "ThemesConfig":
        return cls._from_mapping(doc)


def _subseed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def derived_configs(config: ThemesConfig):
    """Per-stage copies of the nested configs with seeds derived from config.seed.

    Returns (ticc_settings, em_settings, edm_config). Deriving distinct
    streams keeps the stages' randomness independent of each other.
    """
    ticc = replace(config.ticc, seed=_subseed(config.seed, 1))
    em = replace(config.em, seed=_subseed(config.seed, 2))
    edm_cfg = replace(config.edm, seed=_subseed(config.seed, 3))
    return ticc, em, edm_cfg


@dataclass(eq=False)
class ThemesModel:
    """Frozen pipeline output: segmentation models, policies, regulator."""

    config: ThemesConfig
    K: int
    G: int
    n_actions: int
    state_dim: int
    feature_names: tuple
    cluster_models: list
    penalty: PenaltyInputs
    mixture: PolicyMixture
    regulator: RewardRegulator | None
    segmentation: Segmentation
    policy_binding: str = "mixture"  # "mixture" | "cluster"
    cluster_policy: tuple | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.policy_binding not in ("mixture", "cluster"):
            raise ValueError(f"unknown policy binding {self.policy_binding!r}")
        if self.policy_binding == "cluster":
            if self.cluster_policy is None or len(self.cluster_policy) != self.K:
                raise ValueError("cluster binding needs one policy index per cluster")
        if len(self.cluster_models) != self.K:
            raise ValueError("cluster model count disagrees with K")
        if self.mixture.G != self.G:
            raise ValueError("mixture size disagrees with G")

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "config": self.config.to_json(),
            "K": int(self.K),
            "G": int(self.G),
            "n_actions": int(self.n_actions),
            "state_dim": int(self.state_dim),
            "feature_names": list(self.feature_names),
            "clusters": [{"mu": c.mu.tolist(), "theta": c.theta.tolist()}
                         for c in self.cluster_models],
            "penalty": self.penalty.to_json(),
            "mixture": self.mixture.to_json(),
            "regulator": None if self.regulator is None else self.regulator.to_json(),
            "policy_binding": self.policy_binding,
            "cluster_policy": None if self.cluster_policy is None
            else [int(i) for i in self.cluster_policy],
            "diagnostics": self.diagnostics,
        }

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        dump_json(d / "model.json", self.to_json())
        dump_json(d / "segmentation.json", self.segmentation.to_json())

    @classmethod
    def load(cls, directory) -> "ThemesModel":
        d = Path(directory)
        doc = json.loads((d / "model.json").read_text(encoding="utf-8"))
        seg_doc = json.loads((d / "segmentation.json").read_text(encoding="utf-8"))
        reg = doc["regulator"]
        cp = doc["cluster_policy"]
        return cls(
            config=ThemesConfig.from_json(doc["config"]),
            K=int(doc["K"]),
            G=int(doc["G"]),
            n_actions=int(doc["n_actions"]),
            state_dim=int(doc["state_dim"]),
            feature_names=tuple(doc["feature_names"]),
            cluster_models=[ClusterModel.from_theta(np.asarray(c["mu"]),
                                                    np.asarray(c["theta"]))
                            for c in doc["clusters"]],
            penalty=PenaltyInputs.from_json(doc["penalty"]),
            mixture=PolicyMixture.from_json(doc["mixture"]),
            regulator=None if reg is None else RewardRegulator.from_json(reg),
            segmentation=Segmentation.from_json(seg_doc),
            policy_binding=doc["policy_binding"],
            cluster_policy=None if cp is None else tuple(int(i) for i in cp),
            diagnostics=doc["diagnostics"],
        )


def dump_json(path, doc) -> None:
    """Canonical JSON writer: sorted keys, stable float repr, trailing newline."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _annotate(exc: Exception, outer: int):
    msg = f"outer iteration {outer}: {exc}"
    try:
        wrapped = exc.__class__(msg)
    except TypeError:
        wrapped = RuntimeError(msg)
    raise wrapped from exc


def _flat_labels(dataset: Dataset, seg: Segmentation) -> np.ndarray:
    return np.concatenate([seg.labels[tr.id] for tr in dataset.trajectories])


def _flat_policy_assignment(seg: Segmentation, mixture: PolicyMixture) -> np.ndarray:
    """Per-timestep argmax policy index, expanded from sub-trajectory runs."""
    g_assign = mixture.responsibilities.argmax(axis=1)
    parts = [np.full(end - start, g_assign[i], dtype=np.int64)
             for i, (_, start, end, _) in enumerate(seg.sub_trajectories)]
    return np.concatenate(parts)


def fit(dataset: Dataset, config: ThemesConfig) -> ThemesModel:
    """Run the full alternating loop on a training dataset.

    Per outer iteration: refit the switch-penalty density on the current
    rewards, segment, fit the policy mixture on the sub-trajectories, then
    (unless skip_regulator) fit the high-level reward table and refresh the
    per-timestep rewards. Stops early when neither the segment labels nor
    the per-timestep argmax policy assignments changed. skip_regulator runs
    exactly one pass with unit rewards.

    Errors from the stages are re-raised annotated with the outer iteration.
    """
    if not dataset.trajectories:
        raise DataError("empty dataset")
    ticc_settings, em_settings, edm_config = derived_configs(config)
    A = dataset.action_count
    K, G = config.K, config.G
    rewards = {tr.id: np.ones(len(tr)) for tr in dataset.trajectories}

    iter_diags = []
    diagnostics = {"iterations": iter_diags, "notes": []}
    init_labels = None
    prev_flat = None
    prev_gflat = None
    penalty = None
    seg = None
    ticc_res = None
    em_res = None
    regulator = None
    converged = False

    for outer in range(1, config.outer_iters + 1):
        try:
            penalty = PenaltyInputs.fit(config.beta, rewards, dataset)
            if outer == 1 and K == 0:
                K, bic_scores, ticc_results = rmtticc.bic_select(
                    dataset, config.K_candidates, config.omega, config.lam,
                    penalty, ticc_settings)
                ticc_res = ticc_results[K]
                diagnostics["bic_scores"] = {str(k): float(v)
                                             for k, v in sorted(bic_scores.items())}
            else:
                ticc_res = rmtticc.fit(dataset, K, config.omega, config.lam,
                                       penalty, ticc_settings,
                                       init_labels=init_labels)
            seg = ticc_res.segmentation
            subtrajs = rmtticc.extract_subtrajectories(dataset, seg)
            if outer == 1 and G == 0:
                G, g_scores, g_results = emedm.select_G(
                    subtrajs, config.G_max, edm_config, em_settings,
                    improvement=config.g_improvement, n_actions=A)
                em_res = g_results[G]
                diagnostics["policy_count_scores"] = {str(g): float(v)
                                                      for g, v in sorted(g_scores.items())}
            else:
                em_res = emedm.fit(subtrajs, G, edm_config, em_settings, n_actions=A)
        except Exception as exc:
            _annotate(exc, outer)

        flat = _flat_labels(dataset, seg)
        gflat = _flat_policy_assignment(seg, em_res.mixture)
        changes = None if prev_flat is None else int((flat != prev_flat).sum())
        iter_diags.append({
            "outer": outer,
            "ticc_objective": [float(v) for v in ticc_res.objective_trace],
            "ticc_iterations": int(ticc_res.iterations),
            "ticc_converged": bool(ticc_res.converged),
            "em_loglik": [float(v) for v in em_res.loglik_trace],
            "em_iterations": int(em_res.iterations),
            "em_converged": bool(em_res.converged),
            "subtrajectories": len(subtrajs),
            "label_changes": changes,
            "mlirl_loglik": None,
        })

        stop = (prev_flat is not None and np.array_equal(flat, prev_flat)
                and prev_gflat is not None and np.array_equal(gflat, prev_gflat))
        if stop:
            # the stages just reproduced the previous iteration exactly, so
            # the regulator and rewards carried over from it are already
            # consistent with this segmentation and mixture
            converged = True
            break
        if config.skip_regulator:
            converged = True
            break

        try:
            episodes = hireward.build_highlevel_episodes(seg, em_res.mixture)
            mdp = HighLevelMDP.from_episodes(episodes, K, G)
            ml_res = hireward.mlirl_fit(mdp, config.mlirl)
            regulator = ml_res.regulator
            rewards = hireward.per_timestep_rewards(seg, em_res.mixture,
                                                    regulator, dataset)
        except Exception as exc:
            _annotate(exc, outer)
        iter_diags[-1]["mlirl_loglik"] = [float(v) for v in ml_res.loglik_trace]

        prev_flat = flat
        prev_gflat = gflat
        init_labels = seg.labels

    diagnostics["selected_K"] = int(K)
    diagnostics["selected_G"] = int(G)
    diagnostics["outer_iterations"] = len(iter_diags)
    diagnostics["converged"] = bool(converged)

    return ThemesModel(
        config=config,
        K=K,
        G=G,
        n_actions=A,
        state_dim=dataset.state_dim,
        feature_names=dataset.feature_names,
        cluster_models=list(ticc_res.models),
        penalty=penalty,
        mixture=em_res.mixture,
        regulator=regulator,
        segmentation=seg,
        policy_binding="mixture",
        cluster_policy=None,
        diagnostics=diagnostics,
    )


@dataclass(eq=False)
class Prediction:
    """Per-timestep action distributions and cluster labels for one trajectory."""

    trajectory_id: str
    probs: np.ndarray   # (T, n_actions), rows sum to 1
    labels: np.ndarray  # (T,) cluster indices


def _segment_probs_mixture(states, actions, mixture: PolicyMixture) -> np.ndarray:
    """Causal mixture prediction within one sub-trajectory.

    The weight over policies starts at the priors and is updated with the
    executed action only after the step's prediction is emitted, so row t
    never depends on actions at or after t.
    """
    T = states.shape[0]
    G = mixture.G
    log_probs = np.stack([net.log_probs(states) for net in mixture.policies])  # (G,T,A)
    with np.errstate(divide="ignore"):
        logw = np.log(mixture.priors)
    out = np.empty((T, log_probs.shape[2]))
    for t in range(T):
        w = np.exp(logw - logw.max())
        w /= w.sum()
        out[t] = w @ np.exp(log_probs[:, t, :])
        logw = logw + log_probs[:, t, actions[t]]
        logw -= logw.max()
    return out


def predict_actions(model: ThemesModel, dataset: Dataset) -> dict:
    """Per-timestep action probabilities for every trajectory in the dataset.

    Each trajectory is first segmented with the frozen cluster models; the
    reward-change channel of the switch penalty is pinned at its training
    marginal mean so demonstrated actions cannot influence segmentation.
    Within each predicted sub-trajectory the policies are mixed with causal
    prefix weights (priors at the first step). Returns a dict trajectory
    id -> Prediction.
    """
    if dataset.state_dim != model.state_dim:
        raise DataError(f"state dimension {dataset.state_dim} does not match "
                        f"the model's {model.state_dim}")
    if dataset.action_count > model.n_actions:
        raise DataError(f"dataset actions exceed the model's {model.n_actions}")
    mean_dr = float(model.penalty.phi_mean[0])
    out = {}
    for tr in dataset.trajectories:
        windows, _ = window_matrix(tr, model.config.omega)
        dts = tr.delta_t
        drs = np.full(max(len(tr) - 1, 0), mean_dr)
        labels = rmtticc.viterbi_assign(windows, model.cluster_models,
                                        model.penalty, dts, drs)
        probs = np.empty((len(tr), model.n_actions))
        start = 0
        for t in range(1, len(tr) + 1):
            if t == len(tr) or labels[t] != labels[start]:
                sl = slice(start, t)
                if model.policy_binding == "cluster":
                    net = model.mixture.policies[model.cluster_policy[labels[start]]]
                    probs[sl] = np.exp(net.log_probs(tr.states[sl]))
                else:
                    probs[sl] = _segment_probs_mixture(tr.states[sl],
                                                       tr.actions[sl],
                                                       model.mixture)
                start = t
        out[tr.id] = Prediction(trajectory_id=tr.id, probs=probs, labels=labels)
    return out


def evaluate_model(model: ThemesModel, dataset: Dataset,
                   truth_labels: dict | None = None) -> dict:
    """Pooled held-out metrics; segmentation scores when truth labels given.

    Classification metrics are computed for binary action spaces and absent
    otherwise. truth_labels maps trajectory id -> per-timestep regime label.
    """
    preds = predict_actions(model, dataset)
    y = np.concatenate([tr.actions for tr in dataset.trajectories])
    p = np.concatenate([preds[tr.id].probs for tr in dataset.trajectories], axis=0)
    report = {"steps": int(y.shape[0])}
    lp = np.log(p[np.arange(y.shape[0]), y])
    report["mean_action_logprob"] = float(lp.mean())
    if model.n_actions == 2:
        report.update(classification_metrics(y, p[:, 1]))
    else:
        for k in ("acc", "rec", "prec", "f1", "auc", "jaccard"):
            report[k] = None
    if truth_labels is not None:
        t = np.concatenate([np.asarray(truth_labels[tr.id], dtype=np.int64)
                            for tr in dataset.trajectories])
        k = np.concatenate([preds[tr.id].labels for tr in dataset.trajectories])
        report.update(segmentation_metrics(t, k))
    return report


def _fit_ticc_then_per_cluster_edm(dataset: Dataset, config: ThemesConfig) -> ThemesModel:
    """One segmentation pass with unit rewards, one plain policy per cluster."""
    ticc_settings, _, edm_config = derived_configs(config)
    A = dataset.action_count
    rewards = {tr.id: np.ones(len(tr)) for tr in dataset.trajectories}
    penalty = PenaltyInputs.fit(config.beta, rewards, dataset)
    diagnostics = {"notes": []}
    if config.K == 0:
        K, bic_scores, results = rmtticc.bic_select(
            dataset, config.K_candidates, config.omega, config.lam,
            penalty, ticc_settings)
        ticc_res = results[K]
        diagnostics["bic_scores"] = {str(k): float(v)
                                     for k, v in sorted(bic_scores.items())}
    else:
        K = config.K
        ticc_res = rmtticc.fit(dataset, K, config.omega, config.lam,
                               penalty, ticc_settings)
    seg = ticc_res.segmentation
    subtrajs = rmtticc.extract_subtrajectories(dataset, seg)
    clusters = np.asarray([st.cluster for st in subtrajs], dtype=np.int64)
    policies = []
    for k in range(K):
        members = [st for st in subtrajs if st.cluster == k]
        if not members:
            # no demonstrations landed in this cluster; fall back to the
            # global pool so test windows assigned here still get a policy
            members = subtrajs
            diagnostics["notes"].append(f"cluster {k} empty; policy trained on all pairs")
        X, a, _ = emedm.pair_arrays(members)
        policies.append(edm.train(X, a, A, edm_config).net)
    resp = np.zeros((len(subtrajs), K))
    resp[np.arange(len(subtrajs)), clusters] = 1.0
    mixture = PolicyMixture(priors=resp.mean(axis=0), policies=policies,
                            responsibilities=resp)
    diagnostics["iterations"] = [{
        "outer": 1,
        "ticc_objective": [float(v) for v in ticc_res.objective_trace],
        "ticc_iterations": int(ticc_res.iterations),
        "ticc_converged": bool(ticc_res.converged),
        "subtrajectories": len(subtrajs),
    }]
    diagnostics["selected_K"] = int(K)
    diagnostics["selected_G"] = int(K)
    diagnostics["outer_iterations"] = 1
    diagnostics["converged"] = True
    return ThemesModel(
        config=config, K=K, G=K, n_actions=A, state_dim=dataset.state_dim,
        feature_names=dataset.feature_names, cluster_models=list(ticc_res.models),
        penalty=penalty, mixture=mixture, regulator=None, segmentation=seg,
        policy_binding="cluster", cluster_policy=tuple(range(K)),
        diagnostics=diagnostics,
    )


def run_ablation(name: str, dataset: Dataset, config: ThemesConfig) -> ThemesModel:
    """Fit one of the named method variants.

    EDM: one cluster, one policy (plain behavioral training on all pairs).
    EM-EDM: whole trajectories as mixture units, no segmentation structure.
    MT-TICC&EDM: one segmentation pass with unit rewards, one policy per
    cluster, hard cluster-to-policy binding.
    THEMES_0: one segmentation pass with unit rewards, then the policy
    mixture; no reward regulator.
    THEMES: the full alternating loop.
    """
    if name == "THEMES":
        return fit(dataset, config)
    if name == "THEMES_0":
        return fit(dataset, replace(config, skip_regulator=True))
    if name == "EDM":
        return fit(dataset, replace(config, K=1, G=1, skip_regulator=True))
    if name == "EM-EDM":
        return fit(dataset, replace(config, K=1, skip_regulator=True))
    if name == "MT-TICC&EDM":
        return _fit_ticc_then_per_cluster_edm(dataset, config)
    raise ValueError(f"unknown ablation {name!r}; expected one of {ABLATION_NAMES}")
