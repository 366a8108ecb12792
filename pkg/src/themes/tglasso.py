"""Sparse inverse-covariance estimation under a block-Toeplitz constraint.

Solves, for a (m*omega)-dimensional empirical covariance S:

    minimize_Theta   -log det Theta + tr(S Theta) + lam * ||Theta||_1,off

over symmetric positive-definite Theta whose omega x omega grid of m x m
blocks is block-Toeplitz (block (i, j) depends only on j - i). The l1 penalty
applies to off-diagonal entries only. The solver is ADMM with an analytic
eigendecomposition step for the log-det prox and a combined
project-and-soft-threshold consensus step over the Toeplitz equivalence
classes of entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SolverError(RuntimeError):
    """The solver produced a non-finite or non-positive-definite iterate."""


@dataclass
class ADMMSettings:
    """Knobs for the ADMM loop.

    penalty_rho is the augmented-Lagrangian weight; abs_tol/rel_tol are the
    standard primal/dual residual tolerances.
    """

    penalty_rho: float = 1.0
    max_iters: int = 1000
    abs_tol: float = 1e-6
    rel_tol: float = 1e-5

    def __post_init__(self):
        if self.penalty_rho <= 0:
            raise ValueError(f"penalty_rho must be positive, got {self.penalty_rho}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class GlassoProblem:
    """One penalized estimation instance.

    empirical_covariance is (m*omega, m*omega) symmetric PSD; sample_count is
    the (possibly weighted) number of observations behind it; lam >= 0.
    """

    empirical_covariance: np.ndarray
    sample_count: float
    lam: float
    omega: int
    m: int

    def __post_init__(self):
        S = np.asarray(self.empirical_covariance, dtype=np.float64)
        d = self.m * self.omega
        if self.omega < 1 or self.m < 1:
            raise ValueError(f"need omega >= 1 and m >= 1, got omega={self.omega}, m={self.m}")
        if S.shape != (d, d):
            raise ValueError(f"covariance shape {S.shape} does not match m*omega = {d}")
        scale = max(1.0, float(np.abs(S).max()))
        if np.abs(S - S.T).max() > 1e-8 * scale:
            raise ValueError("empirical covariance is not symmetric")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.sample_count <= 0:
            raise ValueError(f"sample_count must be positive, got {self.sample_count}")
        self.empirical_covariance = (S + S.T) / 2.0


@dataclass
class GlassoResult:
    theta: np.ndarray
    objective: float
    converged: bool
    iterations: int
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)


def toeplitz_class_ids(m: int, omega: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Equivalence classes of entries tied by symmetry + block-Toeplitz.

    Returns (class_id, counts, is_diag): class_id is an integer (d, d) matrix,
    d = m*omega; counts[c] is the class size; is_diag[c] marks the classes of
    main-diagonal entries (exempt from the l1 penalty).
    """
    d = m * omega
    keys = {}
    class_id = np.empty((d, d), dtype=np.int64)
    for I in range(d):
        i, p = divmod(I, m)
        for J in range(d):
            j, q = divmod(J, m)
            lag = j - i
            if lag > 0:
                key = (lag, p, q)
            elif lag < 0:
                key = (-lag, q, p)
            else:
                key = (0, min(p, q), max(p, q))
            class_id[I, J] = keys.setdefault(key, len(keys))
    n_classes = len(keys)
    counts = np.bincount(class_id.ravel(), minlength=n_classes).astype(np.float64)
    is_diag = np.zeros(n_classes, dtype=bool)
    for (lag, p, q), c in keys.items():
        if lag == 0 and p == q:
            is_diag[c] = True
    return class_id, counts, is_diag


def project_block_toeplitz(mat: np.ndarray, class_id: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto the symmetric block-Toeplitz subspace."""
    sums = np.bincount(class_id.ravel(), weights=mat.ravel(), minlength=counts.shape[0])
    return (sums / counts)[class_id]


def unique_blocks(theta: np.ndarray, m: int, omega: int) -> list[np.ndarray]:
    """The omega free blocks A(0)..A(omega-1): A(l) = Theta[0:m, l*m:(l+1)*m]."""
    return [theta[0:m, l * m:(l + 1) * m].copy() for l in range(omega)]


def is_block_toeplitz(theta: np.ndarray, m: int, omega: int, tol: float = 0.0) -> bool:
    """Exact (tol=0) or approximate check of the block-Toeplitz structure.

    Block (i, j) must equal the lag block A(j - i) above the block diagonal
    and A(i - j) transposed below it; the lag blocks themselves need not be
    symmetric.
    """
    for i in range(omega):
        for j in range(omega):
            ref = theta[0:m, (j - i) * m:(j - i + 1) * m] if j >= i \
                else theta[0:m, (i - j) * m:(i - j + 1) * m].T
            blk = theta[i * m:(i + 1) * m, j * m:(j + 1) * m]
            if tol == 0.0:
                if not np.array_equal(blk, ref):
                    return False
            elif np.abs(blk - ref).max() > tol:
                return False
    return True


def empirical_stats(windows, weights=None) -> tuple[np.ndarray, np.ndarray, float]:
    """Weighted mean and biased covariance of stacked windows.

    windows: (n, d) array or a list of StackedWindow. Covariance is normalized
    by the total weight (biased). Zero total weight is an error.
    """
    if isinstance(windows, np.ndarray):
        W = np.asarray(windows, dtype=np.float64)
    else:
        W = np.array([w.vector for w in windows], dtype=np.float64)
    if W.ndim != 2 or W.shape[0] < 1:
        raise ValueError("windows must be a non-empty (n, d) collection")
    n = W.shape[0]
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,):
            raise ValueError(f"weights shape {w.shape} does not match {n} windows")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
    total = float(w.sum())
    if total <= 0:
        raise ValueError("total weight is zero")
    mu = (w[:, None] * W).sum(axis=0) / total
    Y = W - mu
    S = (w[:, None] * Y).T @ Y / total
    S = (S + S.T) / 2.0
    return mu, S, total


def _objective(theta: np.ndarray, S: np.ndarray, lam: float) -> float:
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        return np.inf
    off = np.abs(theta).sum() - np.abs(np.diag(theta)).sum()
    return float(-logdet + np.tensordot(S, theta) + lam * off)


def solve(problem: GlassoProblem, settings: ADMMSettings | None = None) -> GlassoResult:
    """Run ADMM; the returned matrix is exactly block-Toeplitz and PD.

    The log-det step is the analytic prox via eigendecomposition; the
    consensus step averages each Toeplitz equivalence class and applies the
    scaled soft threshold (off-diagonal classes only). A near-singular S gets
    a ridge of 1e-6 * tr(S) / d before the loop. If the consensus iterate is
    not PD at exit, a minimal uniform diagonal load restores PD without
    leaving the Toeplitz subspace.
    """
    if settings is None:
        settings = ADMMSettings()
    m, omega = problem.m, problem.omega
    d = m * omega
    S = problem.empirical_covariance
    lam = problem.lam
    rho = settings.penalty_rho

    eigmin = float(np.linalg.eigvalsh(S).min())
    if eigmin <= 1e-12 * max(1.0, float(np.trace(S)) / d):
        S = S + (1e-6 * max(np.trace(S), d * 1e-12) / d) * np.eye(d)

    class_id, counts, is_diag = toeplitz_class_ids(m, omega)
    lam_class = np.where(is_diag, 0.0, lam)

    Z = np.eye(d)
    U = np.zeros((d, d))
    theta = np.eye(d)
    primal, dual = [], []
    converged = False
    iters = 0
    for iters in range(1, settings.max_iters + 1):
        # log-det prox: minimize -logdet X + tr(SX) + rho/2 ||X - (Z - U)||^2
        Wm = rho * (Z - U) - S
        Wm = (Wm + Wm.T) / 2.0
        evals, evecs = np.linalg.eigh(Wm)
        theta_eigs = (evals + np.sqrt(evals ** 2 + 4.0 * rho)) / (2.0 * rho)
        theta = (evecs * theta_eigs) @ evecs.T
        theta = (theta + theta.T) / 2.0

        # consensus: class-average then soft-threshold by lam/rho per class
        A = theta + U
        sums = np.bincount(class_id.ravel(), weights=A.ravel(), minlength=counts.shape[0])
        means = sums / counts
        thr = lam_class / rho
        z_class = np.sign(means) * np.maximum(np.abs(means) - thr, 0.0)
        Z_old = Z
        Z = z_class[class_id]

        U = U + theta - Z

        r_norm = float(np.linalg.norm(theta - Z))
        s_norm = float(rho * np.linalg.norm(Z - Z_old))
        primal.append(r_norm)
        dual.append(s_norm)
        eps_pri = d * settings.abs_tol + settings.rel_tol * max(
            np.linalg.norm(theta), np.linalg.norm(Z))
        eps_dual = d * settings.abs_tol + settings.rel_tol * rho * np.linalg.norm(U)
        if r_norm <= eps_pri and s_norm <= eps_dual:
            converged = True
            break

    if not np.all(np.isfinite(Z)):
        raise SolverError(f"non-finite iterate after {iters} ADMM iterations")
    evals = np.linalg.eigvalsh(Z)
    if evals[0] <= 0:
        # uniform diagonal load stays inside the Toeplitz subspace
        load = -evals[0] + 1e-8 * max(1.0, float(np.trace(Z)) / d)
        Z = Z + load * np.eye(d)
        if np.linalg.eigvalsh(Z)[0] <= 0:
            raise SolverError("failed to reach a positive-definite iterate")
    obj = _objective(Z, problem.empirical_covariance, lam)
    return GlassoResult(theta=Z, objective=obj, converged=converged, iterations=iters,
                        primal_residuals=primal, dual_residuals=dual)
