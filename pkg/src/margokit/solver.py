"""Training back-ends: a cost-sensitive dual SVM over a Gram matrix, and a
weighted dual coordinate-descent solver over explicit features.

Both minimize the bag-weighted regularized risk

    (1/N) sum_i (1/n_i) sum_j loss(f(x_ij), y_ij) + lam * ||f||^2.

Dividing by 2*lam turns this into sum_ij c_ij * loss + (1/2)||f||^2 with
per-example costs c_ij = 1 / (2 * lam * N * n_i), which is the box bound on
the dual variables.  Both solvers work on that scaled problem; reported
objectives are converted back to the original scale where noted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._seeds import child_rng
from .errors import DataError, UsageError

LOSS_KINDS = ("hinge", "eps_insensitive")

#: Relative PSD tolerance: min eigenvalue >= -PSD_RTOL * trace/M.
PSD_RTOL = 1e-8

#: Above this size, coordinate selection switches from greedy max-violation
#: to random permutation sweeps.
GREEDY_LIMIT = 2000


def costs_from_task_sizes(lam: float, task_sizes) -> np.ndarray:
    """Per-example dual box bounds c = 1/(2 lam N n_i), expanded bag by bag."""
    sizes = [int(s) for s in task_sizes]
    if not sizes or any(s < 1 for s in sizes):
        raise UsageError(f"task_sizes must be positive integers, got {task_sizes!r}")
    if not lam > 0:
        raise UsageError(f"lam must be positive, got {lam!r}")
    N = len(sizes)
    return np.concatenate([np.full(n, 1.0 / (2.0 * lam * N * n)) for n in sizes])


def loss_eval(loss_kind: str, t: float, y: float, eps: float = 0.1) -> float:
    """Pointwise loss: hinge(t, y) or the eps-insensitive tube loss."""
    if loss_kind == "hinge":
        if y not in (-1.0, 1.0, -1, 1):
            raise UsageError(f"hinge loss needs labels in {{-1,+1}}, got {y!r}")
        return max(0.0, 1.0 - y * t)
    if loss_kind == "eps_insensitive":
        if eps < 0:
            raise UsageError(f"eps must be >= 0, got {eps!r}")
        return max(0.0, abs(t - y) - eps)
    raise UsageError(f"unknown loss kind {loss_kind!r}")


def _loss_vector(loss_kind: str, t: np.ndarray, y: np.ndarray, eps: float) -> np.ndarray:
    if loss_kind == "hinge":
        return np.maximum(0.0, 1.0 - y * t)
    return np.maximum(0.0, np.abs(t - y) - eps)


@dataclass
class DualSolution:
    """Box-constrained maximizer of the SVM dual, plus bookkeeping."""

    alphas: np.ndarray
    costs: np.ndarray
    labels: np.ndarray
    objective: float
    gap: float
    converged: bool
    n_updates: int

    @property
    def coef(self) -> np.ndarray:
        """Expansion coefficients alpha_i * y_i of the predictor."""
        return self.alphas * self.labels


@dataclass
class LinearSolution:
    """Weight vector over explicit features with solve diagnostics."""

    weights: np.ndarray
    loss_kind: str
    lam: float
    eps: float
    objective: float  # original-scale regularized empirical risk
    objective_trace: list = field(default_factory=list)  # scaled dual per sweep
    gap: float = 0.0
    converged: bool = True
    n_sweeps: int = 0


def _validate_hinge_labels(labels: np.ndarray):
    if not np.all(np.isin(labels, (-1.0, 1.0))):
        bad = labels[~np.isin(labels, (-1.0, 1.0))]
        raise UsageError(f"labels must be -1/+1, found {bad[:5]!r}")


def solve_dual_svm(gram: np.ndarray, labels, costs, tol: float = 1e-6,
                   max_iter: int | None = None, seed: int = 0,
                   callback=None) -> DualSolution:
    """Maximize sum(a) - 1/2 sum a_i a_j y_i y_j K_ij over 0 <= a <= c.

    Coordinate ascent with greedy max-KKT-violation selection up to
    ``GREEDY_LIMIT`` examples and seeded permutation sweeps above.  Exits when
    the largest projected-gradient violation drops below ``tol``; otherwise
    returns with ``converged=False``.  ``callback(alphas, objective)`` runs
    once per selection round (greedy) or per sweep.
    """
    K = np.asarray(gram, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).ravel()
    c = np.asarray(costs, dtype=np.float64).ravel()
    M = y.shape[0]
    if K.shape != (M, M):
        raise UsageError(f"gram shape {K.shape} does not match {M} labels")
    if c.shape[0] != M:
        raise UsageError(f"{c.shape[0]} costs for {M} labels")
    _validate_hinge_labels(y)
    if np.any(c < 0):
        raise UsageError("costs must be nonnegative")
    if not np.all(np.isfinite(K)):
        raise DataError("gram matrix contains non-finite values")

    if M <= GREEDY_LIMIT:
        evals = np.linalg.eigvalsh(0.5 * (K + K.T))
        floor = -PSD_RTOL * max(np.trace(K) / M, np.finfo(float).tiny)
        if evals[0] < floor:
            warnings.warn(
                f"gram matrix is not PSD within tolerance (min eig {evals[0]:.3e}); "
                "adding diagonal jitter 1e-10",
                RuntimeWarning,
            )
            K = K + 1e-10 * np.eye(M)

    if max_iter is None:
        max_iter = max(10_000, 200 * M)

    alphas = np.zeros(M)
    u = np.zeros(M)  # u_i = sum_j alpha_j y_j K_ij
    Kdiag = np.diag(K).copy()
    movable = c > 0.0

    def violations() -> np.ndarray:
        G = 1.0 - y * u
        viol = np.abs(G)
        at_lo = alphas <= 0.0
        at_hi = alphas >= c
        viol[at_lo] = np.maximum(G[at_lo], 0.0)
        viol[at_hi & movable] = np.maximum(-G[at_hi & movable], 0.0)
        viol[~movable] = 0.0
        return viol

    def dual_objective() -> float:
        return float(alphas.sum() - 0.5 * (alphas * y) @ u)

    def update_coord(i: int) -> float:
        """One exact coordinate maximization; returns the violation it saw."""
        nonlocal u
        G = 1.0 - y[i] * u[i]
        a = alphas[i]
        if a <= 0.0 and G <= 0.0:
            return 0.0
        if a >= c[i] and G >= 0.0:
            return 0.0
        if Kdiag[i] > 0.0:
            a_new = min(max(a + G / Kdiag[i], 0.0), c[i])
        else:
            a_new = c[i] if G > 0.0 else 0.0
        delta = a_new - a
        if delta != 0.0:
            alphas[i] = a_new
            u += (delta * y[i]) * K[:, i]
        return abs(G)

    n_updates = 0
    converged = False
    if M <= GREEDY_LIMIT:
        while n_updates < max_iter:
            viol = violations()
            i = int(np.argmax(viol))
            if viol[i] < tol:
                converged = True
                break
            update_coord(i)
            n_updates += 1
            if callback is not None and n_updates % M == 0:
                callback(alphas.copy(), dual_objective())
    else:
        rng = child_rng(seed, "dual_svm_sweeps")
        while n_updates < max_iter:
            order = rng.permutation(M)
            sweep_viol = 0.0
            for i in order:
                if not movable[i]:
                    continue
                sweep_viol = max(sweep_viol, update_coord(int(i)))
                n_updates += 1
            if callback is not None:
                callback(alphas.copy(), dual_objective())
            if sweep_viol < tol:
                converged = True
                break

    obj = dual_objective()
    primal = float(c @ np.maximum(0.0, 1.0 - y * u) + 0.5 * (alphas * y) @ u)
    gap = max(primal - obj, 0.0)
    return DualSolution(
        alphas=alphas, costs=c, labels=y, objective=obj, gap=gap,
        converged=converged, n_updates=n_updates,
    )


def predict_dual(sol: DualSolution, kernel_row) -> float:
    """Evaluate sum_i alpha_i y_i * kernel_row[i]."""
    row = np.asarray(kernel_row, dtype=np.float64).ravel()
    if row.shape[0] != sol.alphas.shape[0]:
        raise UsageError(f"kernel_row length {row.shape[0]} != {sol.alphas.shape[0]}")
    return float(row @ sol.coef)


def solve_linear(features: np.ndarray, labels, loss_kind: str, lam: float, task_sizes,
                 tol: float = 1e-5, max_iter: int = 200, eps: float = 0.1,
                 seed: int = 0, callback=None) -> LinearSolution:
    """Dual coordinate descent for the weighted linear problem.

    ``task_sizes`` lists the bag sizes in row order (rows grouped bag by
    bag); the per-example weights 1/(N n_i) follow from it.  Sweeps run in a
    seeded random permutation order; exit requires duality gap
    < tol * (1 + |primal|), else ``converged=False`` after ``max_iter``
    sweeps of the scaled problem.
    """
    Z = np.ascontiguousarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).ravel()
    M, D = Z.shape
    if y.shape[0] != M:
        raise UsageError(f"{y.shape[0]} labels for {M} feature rows")
    if loss_kind not in LOSS_KINDS:
        raise UsageError(f"unknown loss kind {loss_kind!r}")
    if loss_kind == "hinge":
        _validate_hinge_labels(y)
    elif eps < 0:
        raise UsageError(f"eps must be >= 0, got {eps!r}")
    c = costs_from_task_sizes(lam, task_sizes)
    if c.shape[0] != M:
        raise UsageError(f"task_sizes sum to {c.shape[0]} examples, features have {M}")

    Qdiag = np.einsum("ij,ij->i", Z, Z)
    w = np.zeros(D)
    beta = np.zeros(M)  # hinge: beta = alpha (w = sum beta y z); svr: w = sum beta z
    tmp = np.empty(D)
    rng = child_rng(seed, "linear_cd_sweeps")
    hinge = loss_kind == "hinge"

    def scaled_primal() -> float:
        t = Z @ w
        return float(c @ _loss_vector(loss_kind, t, y, eps) + 0.5 * (w @ w))

    def scaled_dual() -> float:
        if hinge:
            return float(beta.sum() - 0.5 * (w @ w))
        return float(y @ beta - eps * np.abs(beta).sum() - 0.5 * (w @ w))

    trace: list[float] = []
    converged = False
    gap = math.inf
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        order = rng.permutation(M)
        for i in order:
            ci = c[i]
            if ci <= 0.0:
                continue
            zi = Z[i]
            qi = Qdiag[i]
            b = beta[i]
            wz = float(w @ zi)
            if hinge:
                G = 1.0 - y[i] * wz
                if b <= 0.0 and G <= 0.0:
                    continue
                if b >= ci and G >= 0.0:
                    continue
                if qi > 0.0:
                    b_new = min(max(b + G / qi, 0.0), ci)
                else:
                    b_new = ci if G > 0.0 else 0.0
                delta_w = (b_new - b) * y[i]
            else:
                p = y[i] - (wz - qi * b)
                if qi > 0.0:
                    t_opt = math.copysign(max(abs(p) - eps, 0.0), p) / qi
                    b_new = min(max(t_opt, -ci), ci)
                else:
                    b_new = ci if p > eps else (-ci if p < -eps else 0.0)
                delta_w = b_new - b
            if delta_w != 0.0:
                beta[i] = b_new
                np.multiply(zi, delta_w, out=tmp)
                w += tmp
        d_obj = scaled_dual()
        trace.append(d_obj)
        if callback is not None:
            callback(beta.copy(), w.copy(), d_obj)
        p_obj = scaled_primal()
        gap = max(p_obj - d_obj, 0.0)
        if gap < tol * (1.0 + abs(p_obj)):
            converged = True
            break

    objective = 2.0 * lam * scaled_primal()
    return LinearSolution(
        weights=w, loss_kind=loss_kind, lam=float(lam), eps=float(eps),
        objective=objective, objective_trace=trace, gap=gap,
        converged=converged, n_sweeps=sweeps,
    )
