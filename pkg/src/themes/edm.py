"""Energy-based policy induction from weighted demonstrations.

A policy is a one-hidden-layer tanh network producing per-action logits
f(x); action probabilities are softmax(f(x)) and the state energy is
E(x) = -logsumexp(f(x)). Training minimizes a weighted behavioral-cloning
negative log-likelihood plus an occupancy term (mean energy of demonstration
states minus mean energy of model samples), with negatives drawn by SGLD
from a persistent replay buffer. All gradients are analytic; no external
differentiation library is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


class TrainingError(RuntimeError):
    """A training loss or parameter became non-finite."""


class SamplerError(RuntimeError):
    """An SGLD chain produced a non-finite state."""


@dataclass
class EdmConfig:
    hidden: int = 64
    occupancy_weight: float = 0.5   # alpha in the composite loss
    learning_rate: float = 0.1
    epochs: int = 30
    batch_size: int = 256
    sgld_steps: int = 20
    sgld_step_size: float = 1e-2
    sgld_noise_scale: float = 1e-2
    replay_buffer_size: int = 1024
    reinit_prob: float = 0.05
    gamma: float = 0.99  # recorded discount context; not used by the losses
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("hidden, epochs, batch_size must be >= 1")
        if self.occupancy_weight < 0:
            raise ValueError("occupancy_weight must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.sgld_steps < 1 or self.sgld_step_size <= 0 or self.sgld_noise_scale < 0:
            raise ValueError("bad SGLD configuration")
        if self.replay_buffer_size < 1 or not 0 <= self.reinit_prob <= 1:
            raise ValueError("bad replay buffer configuration")


class PolicyNet:
    """One-hidden-layer tanh policy: logits(x) = W2 tanh(W1 x + b1) + b2."""

    def __init__(self, W1, b1, W2, b2):
        self.W1 = np.asarray(W1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.W2 = np.asarray(W2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)
        H, m = self.W1.shape
        A = self.W2.shape[0]
        if self.b1.shape != (H,) or self.W2.shape != (A, H) or self.b2.shape != (A,):
            raise ValueError("inconsistent parameter shapes")

    @classmethod
    def initialize(cls, n_inputs: int, n_actions: int, hidden: int,
                   rng: np.random.Generator) -> "PolicyNet":
        W1 = rng.standard_normal((hidden, n_inputs)) / np.sqrt(n_inputs)
        b1 = np.zeros(hidden)
        W2 = rng.standard_normal((n_actions, hidden)) / np.sqrt(hidden)
        b2 = np.zeros(n_actions)
        return cls(W1, b1, W2, b2)

    @property
    def n_inputs(self) -> int:
        return self.W1.shape[1]

    @property
    def n_actions(self) -> int:
        return self.W2.shape[0]

    def copy(self) -> "PolicyNet":
        return PolicyNet(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def _forward(self, X: np.ndarray):
        h = np.tanh(X @ self.W1.T + self.b1)
        return h, h @ self.W2.T + self.b2

    def logits(self, X: np.ndarray) -> np.ndarray:
        return self._forward(np.atleast_2d(X))[1]

    def log_probs(self, X: np.ndarray) -> np.ndarray:
        z = self.logits(X)
        return z - logsumexp(z, axis=1, keepdims=True)

    def probs(self, X: np.ndarray) -> np.ndarray:
        return np.exp(self.log_probs(X))

    def action_log_probs(self, X: np.ndarray, a: np.ndarray) -> np.ndarray:
        lp = self.log_probs(X)
        return lp[np.arange(lp.shape[0]), np.asarray(a, dtype=np.int64)]

    def energy(self, X: np.ndarray) -> np.ndarray:
        """State energy E(x) = -logsumexp over the action logits."""
        return -logsumexp(self.logits(X), axis=1)

    def state_energy_grad(self, X: np.ndarray) -> np.ndarray:
        """d E / d x, shape like X. Used by the SGLD sampler."""
        X = np.atleast_2d(X)
        h, z = self._forward(X)
        p = np.exp(z - logsumexp(z, axis=1, keepdims=True))
        dh = (-p) @ self.W2           # dE/dh
        dz1 = dh * (1.0 - h * h)      # through tanh
        return dz1 @ self.W1

    def param_grads_from_dlogits(self, X: np.ndarray, h: np.ndarray,
                                 dlogits: np.ndarray) -> dict:
        dW2 = dlogits.T @ h
        db2 = dlogits.sum(axis=0)
        dh = dlogits @ self.W2
        dz1 = dh * (1.0 - h * h)
        dW1 = dz1.T @ X
        db1 = dz1.sum(axis=0)
        return {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}

    def apply_step(self, grads: dict, lr: float) -> None:
        self.W1 -= lr * grads["W1"]
        self.b1 -= lr * grads["b1"]
        self.W2 -= lr * grads["W2"]
        self.b2 -= lr * grads["b2"]

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "hidden": int(self.W1.shape[0]),
            "n_inputs": int(self.W1.shape[1]),
            "n_actions": int(self.W2.shape[0]),
            "W1": self.W1.tolist(), "b1": self.b1.tolist(),
            "W2": self.W2.tolist(), "b2": self.b2.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PolicyNet":
        return cls(np.asarray(doc["W1"]), np.asarray(doc["b1"]),
                   np.asarray(doc["W2"]), np.asarray(doc["b2"]))


def bc_loss(states: np.ndarray, actions: np.ndarray, weights, net: PolicyNet) -> float:
    """Weighted mean negative log-likelihood of the demonstrated actions.

    Invariant under rescaling all weights by a positive constant; zero total
    weight is an error.
    """
    X = np.atleast_2d(np.asarray(states, dtype=np.float64))
    a = np.asarray(actions, dtype=np.int64)
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    total = float(w.sum())
    if total <= 0:
        raise ValueError("total weight is zero")
    nll = -net.action_log_probs(X, a)
    return float((w * nll).sum() / total)


def occupancy_loss(demo_states: np.ndarray, neg_states: np.ndarray, net: PolicyNet,
                   demo_weights=None) -> float:
    """Mean energy over demonstration states minus mean energy over negatives."""
    demo = np.atleast_2d(np.asarray(demo_states, dtype=np.float64))
    neg = np.atleast_2d(np.asarray(neg_states, dtype=np.float64))
    if demo_weights is None:
        demo_term = float(net.energy(demo).mean())
    else:
        w = np.asarray(demo_weights, dtype=np.float64)
        total = float(w.sum())
        if total <= 0:
            raise ValueError("total demo weight is zero")
        demo_term = float((w * net.energy(demo)).sum() / total)
    return demo_term - float(net.energy(neg).mean())


def composite_loss_and_grads(net: PolicyNet, X: np.ndarray, a: np.ndarray,
                             w: np.ndarray, alpha: float,
                             neg: np.ndarray | None) -> tuple[float, dict]:
    """Loss bc + alpha * occupancy with analytic parameter gradients.

    The negative batch is treated as a constant input (no gradient flows
    into how it was sampled).
    """
    total_w = float(w.sum())
    h, z = net._forward(X)
    lse = logsumexp(z, axis=1, keepdims=True)
    p = np.exp(z - lse)
    n = X.shape[0]
    onehot = np.zeros_like(p)
    onehot[np.arange(n), a] = 1.0
    loss = float((w * -(z - lse)[np.arange(n), a]).sum() / total_w)
    dlogits = (p - onehot) * (w / total_w)[:, None]
    grads = net.param_grads_from_dlogits(X, h, dlogits)
    if alpha > 0 and neg is not None:
        # demo side: weighted mean of E = -lse; dE/dlogits = -p
        demo_term = float((w * -lse[:, 0]).sum() / total_w)
        d_demo = (-p) * (w / total_w)[:, None]
        hn, zn = net._forward(neg)
        lsen = logsumexp(zn, axis=1, keepdims=True)
        pn = np.exp(zn - lsen)
        neg_term = float((-lsen[:, 0]).mean())
        occ = demo_term - neg_term
        loss += alpha * occ
        g_demo = net.param_grads_from_dlogits(X, h, alpha * d_demo)
        d_neg = (-pn) * (-1.0 / neg.shape[0])
        g_neg = net.param_grads_from_dlogits(neg, hn, alpha * d_neg)
        for key in grads:
            grads[key] = grads[key] + g_demo[key] + g_neg[key]
    return loss, grads


def sgld_sample(energy_model, init_states: np.ndarray, steps: int,
                step_size: float, noise_scale: float, seed) -> np.ndarray:
    """Stochastic gradient Langevin chains on the state energy.

    x <- x - (step_size / 2) * dE/dx + noise_scale * xi, xi ~ N(0, I).
    energy_model is anything exposing state_energy_grad(X). Returns the final
    states of all chains; a non-finite state raises SamplerError naming the
    step. Deterministic given the seed.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if step_size <= 0 or noise_scale < 0:
        raise ValueError("need step_size > 0 and noise_scale >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.array(np.atleast_2d(init_states), dtype=np.float64, copy=True)
    for step in range(steps):
        g = energy_model.state_energy_grad(x)
        x = x - 0.5 * step_size * g
        if noise_scale > 0:
            x = x + noise_scale * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise SamplerError(f"non-finite chain state at SGLD step {step + 1}")
    return x


@dataclass(eq=False)
class EdmResult:
    net: PolicyNet
    losses: list


def train(states: np.ndarray, actions: np.ndarray, n_actions: int, config: EdmConfig,
          weights=None, init_net: PolicyNet | None = None) -> EdmResult:
    """Mini-batch gradient descent on bc + alpha * occupancy.

    Negatives come from a persistent replay buffer seeded from demonstration
    states; each selected chain is re-initialized from a random demonstration
    state with probability reinit_prob, advanced by SGLD under the current
    net, and written back. Samples with zero weight are dropped up front.
    With alpha = 0 the sampler and buffer are never touched, so the result is
    invariant to the SGLD configuration. Deterministic given config.seed.
    """
    X = np.atleast_2d(np.asarray(states, dtype=np.float64))
    a = np.asarray(actions, dtype=np.int64)
    n_all = X.shape[0]
    w = np.ones(n_all) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n_all,) or np.any(w < 0):
        raise ValueError("weights must be non-negative with one entry per sample")
    keep = w > 0
    X, a, w = X[keep], a[keep], w[keep]
    n = X.shape[0]
    if n == 0:
        raise ValueError("no samples with positive weight")
    if np.any(a >= n_actions):
        raise ValueError("action id out of range")

    rng = np.random.default_rng(config.seed)
    net = init_net.copy() if init_net is not None else PolicyNet.initialize(
        X.shape[1], n_actions, config.hidden, rng)
    alpha = config.occupancy_weight
    p_weights = w / w.sum()

    buffer = None
    if alpha > 0:
        buffer = X[rng.choice(n, size=config.replay_buffer_size, p=p_weights)]

    losses = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            neg = None
            if alpha > 0:
                b = idx.shape[0]
                slots = rng.choice(config.replay_buffer_size, size=b)
                chains = buffer[slots].copy()
                reinit = rng.random(b) < config.reinit_prob
                n_re = int(reinit.sum())
                if n_re:
                    chains[reinit] = X[rng.choice(n, size=n_re, p=p_weights)]
                chains = sgld_sample(net, chains, config.sgld_steps,
                                     config.sgld_step_size, config.sgld_noise_scale, rng)
                buffer[slots] = chains
                neg = chains
            loss, grads = composite_loss_and_grads(net, X[idx], a[idx], w[idx], alpha, neg)
            net.apply_step(grads, config.learning_rate)
            epoch_loss += loss
            n_batches += 1
        epoch_loss /= n_batches
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"non-finite loss at epoch {epoch + 1}")
        losses.append(epoch_loss)
    for arr in (net.W1, net.b1, net.W2, net.b2):
        if not np.all(np.isfinite(arr)):
            raise TrainingError("non-finite parameters after training")
    return EdmResult(net=net, losses=losses)
