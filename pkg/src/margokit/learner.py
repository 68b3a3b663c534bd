"""The marginal transfer estimator: extended-data assembly, training paths,
bag prediction, and risk evaluation.

Training minimizes the bag-weighted regularized risk over the extended
inputs (empirical marginal of the bag, point).  At prediction time a test
bag supplies its own empirical marginal; no labels from the test task are
used anywhere.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from ._seeds import child_int
from .bags import Bag, BagCollection
from .errors import DataError, UsageError
from .features import (
    NystromMap,
    ProductRffMap,
    RffMap,
    fit_nystrom,
    sample_product_rff,
    sample_rff,
)
from .kernels import EmbeddingCache, KernelSpec, base_kernel_matrix, distribution_gram, gram_matrix
from .solver import (
    DualSolution,
    _loss_vector,
    costs_from_task_sizes,
    solve_dual_svm,
    solve_linear,
)

METHODS = ("exact_dual", "rff_linear", "nystrom_linear", "pooling_exact", "pooling_linear")

_PREDICT_CHUNK = 4096


@dataclass
class DualPayload:
    """Support expansion of an exact model: coefficients alpha_i y_i > 0 in
    magnitude, their points, and the bags those points came from (dropped
    when the distribution kernel is constant)."""

    support_x: np.ndarray
    support_coef: np.ndarray
    support_bag_idx: np.ndarray
    bags: tuple[Bag, ...]


@dataclass
class LinearPayload:
    """Weight vector over an explicit feature map."""

    weights: np.ndarray
    feature_map: RffMap | ProductRffMap | NystromMap


@dataclass
class Model:
    """A trained predictor plus everything needed to reproduce its outputs."""

    method: str
    spec: KernelSpec
    lam: float
    loss_kind: str
    eps: float
    payload: DualPayload | LinearPayload
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        if isinstance(self.payload, DualPayload):
            return self.payload.support_x.shape[1]
        fmap = self.payload.feature_map
        return fmap.dim


@dataclass
class EvalReport:
    """Bag-averaged risks; bags weigh equally regardless of size."""

    per_bag_risk: dict
    mean_risk: float
    error_rate: float | None = None
    rmse: float | None = None

    def to_dict(self) -> dict:
        return {
            "per_bag_risk": dict(self.per_bag_risk),
            "mean_risk": self.mean_risk,
            "error_rate": self.error_rate,
            "rmse": self.rmse,
        }


def _as_bag_list(bags) -> list[Bag]:
    if isinstance(bags, BagCollection):
        return list(bags.bags)
    bags = list(bags)
    if not bags:
        raise DataError("need at least one bag")
    dims = {b.dim for b in bags}
    if len(dims) != 1:
        raise DataError(f"bags have inconsistent dimensions: {sorted(dims)}")
    return bags


def _check_labeled(bags: list[Bag], loss_kind: str):
    for b in bags:
        if not b.labeled:
            raise DataError(f"bag {b.task_id!r} has no labels")
        if loss_kind == "hinge" and not np.all(np.isin(b.labels, (-1.0, 1.0))):
            raise DataError(f"bag {b.task_id!r}: hinge loss needs -1/+1 labels")


def _default_eps(bags: list[Bag]) -> float:
    """Tube half-width default: 0.1 times the pooled label standard deviation."""
    y = np.concatenate([b.labels for b in bags])
    sd = float(np.std(y))
    return 0.1 * sd if sd > 0 else 0.1


def train(bags, spec: KernelSpec, lam: float, loss_kind: str = "hinge",
          method: str = "rff_linear", seed: int = 0, L: int = 2048, Q: int = 2048,
          n_landmarks: int | None = None, eps: float | None = None,
          eps_eig: float = 1e-10, tol: float | None = None,
          max_iter: int | None = None, pooling_concat: bool = False,
          linear_map: str | None = None) -> Model:
    """Fit a model on labeled bags.

    ``method`` selects the path: ``exact_dual`` / ``pooling_exact`` solve the
    dual QP over the full product-kernel Gram (hinge only), the ``*_linear``
    methods train a linear solver over approximate features.  Pooling forces
    a constant distribution kernel (exact) or drops the bag-embedding block
    (linear), so predictions ignore the test bag.  ``pooling_concat``
    switches pooling from 1/n_i example weights to plain concatenation.
    Deterministic for a fixed ``seed``.
    """
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {METHODS}")
    bags = _as_bag_list(bags)
    _check_labeled(bags, loss_kind)
    if loss_kind == "eps_insensitive" and eps is None:
        eps = _default_eps(bags)
    if eps is None:
        eps = 0.1
    if pooling_concat and not method.startswith("pooling"):
        raise UsageError("pooling_concat applies to pooling methods only")

    d = bags[0].dim
    labels = np.concatenate([b.labels for b in bags])
    sizes = [b.n for b in bags]
    task_sizes = [int(np.sum(sizes))] if pooling_concat else sizes
    metadata = {
        "seed": int(seed),
        "bag_sizes": [int(s) for s in sizes],
        "pooling_concat": bool(pooling_concat),
    }
    if "SOURCE_DATE_EPOCH" in os.environ:
        metadata["created"] = int(os.environ["SOURCE_DATE_EPOCH"])

    if method in ("exact_dual", "pooling_exact"):
        if loss_kind != "hinge":
            raise UsageError(f"{method} supports hinge loss only")
        eff_spec = spec if method == "exact_dual" else replace(
            spec, kp_kind="constant", kp_normalize=False
        )
        points = [(b, x) for b in bags for x in b.points]
        gram = gram_matrix(points, eff_spec, cache=EmbeddingCache())
        costs = costs_from_task_sizes(lam, task_sizes)
        sol = solve_dual_svm(
            gram, labels, costs,
            tol=1e-6 if tol is None else tol,
            max_iter=max_iter,
        )
        payload = _dual_payload(bags, sol, eff_spec)
        metadata["solver"] = {"converged": sol.converged, "gap": sol.gap,
                              "objective": sol.objective, "n_updates": sol.n_updates}
        return Model(method=method, spec=eff_spec, lam=float(lam), loss_kind=loss_kind,
                     eps=float(eps), payload=payload, metadata=metadata)

    feat_seed = child_int(seed, "features")
    solver_seed = child_int(seed, "solver")
    metadata["feature_seed"] = feat_seed

    if method == "rff_linear":
        if not spec.all_gaussian:
            raise UsageError("RFF path requires all-Gaussian kernels")
        fmap = sample_product_rff(feat_seed, L, Q, spec, d)
        F = np.empty((int(np.sum(sizes)), fmap.output_dim))
        row = 0
        for b in bags:
            F[row : row + b.n] = fmap.transform_bag(b.points, b.points)
            row += b.n
    elif method == "nystrom_linear" or (method == "pooling_linear" and _pooling_map_kind(spec, linear_map) == "nystrom"):
        eff_spec = spec if method == "nystrom_linear" else replace(
            spec, kp_kind="constant", kp_normalize=False
        )
        points = [(b, x) for b in bags for x in b.points]
        m = min(len(points), 256) if n_landmarks is None else n_landmarks
        fmap = fit_nystrom(points, eff_spec, m, feat_seed, eps_eig)
        spec = eff_spec
        F = np.empty((len(points), fmap.output_dim))
        row = 0
        for b in bags:
            F[row : row + b.n] = fmap.transform_bag(b.points, b.points)
            row += b.n
    else:  # pooling_linear with a plain RFF map on the point kernel
        if spec.kx_kind != "gaussian":
            raise UsageError("pooling RFF path requires a gaussian point kernel")
        fmap = sample_rff(feat_seed, L, spec.sigma_x, d)
        spec = replace(spec, kp_kind="constant", kp_normalize=False)
        F = fmap.transform(np.vstack([b.points for b in bags]))

    sol = solve_linear(
        F, labels, loss_kind, lam, task_sizes,
        tol=1e-5 if tol is None else tol,
        max_iter=200 if max_iter is None else max_iter,
        eps=eps, seed=solver_seed,
    )
    metadata["solver"] = {"converged": sol.converged, "gap": sol.gap,
                          "objective": sol.objective, "n_sweeps": sol.n_sweeps}
    payload = LinearPayload(weights=sol.weights, feature_map=fmap)
    return Model(method=method, spec=spec, lam=float(lam), loss_kind=loss_kind,
                 eps=float(eps), payload=payload, metadata=metadata)


def _pooling_map_kind(spec: KernelSpec, linear_map: str | None) -> str:
    if linear_map is None:
        return "rff" if spec.kx_kind == "gaussian" else "nystrom"
    if linear_map not in ("rff", "nystrom"):
        raise UsageError(f"linear_map must be 'rff' or 'nystrom', got {linear_map!r}")
    return linear_map


def _dual_payload(bags: list[Bag], sol: DualSolution, spec: KernelSpec) -> DualPayload:
    bag_of_row = np.concatenate([np.full(b.n, i, dtype=np.intp) for i, b in enumerate(bags)])
    X = np.vstack([b.points for b in bags])
    mask = sol.alphas > 0.0
    coef = sol.coef[mask]
    sup_x = X[mask]
    if spec.kp_kind == "constant":
        return DualPayload(
            support_x=sup_x, support_coef=coef,
            support_bag_idx=np.zeros(coef.shape[0], dtype=np.intp), bags=(),
        )
    rows = bag_of_row[mask]
    used = sorted(set(int(r) for r in rows))
    remap = {old: new for new, old in enumerate(used)}
    idx = np.array([remap[int(r)] for r in rows], dtype=np.intp)
    return DualPayload(
        support_x=sup_x, support_coef=coef, support_bag_idx=idx,
        bags=tuple(bags[i] for i in used),
    )


def predict_bag(model: Model, test_points) -> np.ndarray:
    """Margins f(P_test, x_j) for every row of ``test_points``.

    The test bag's own empirical marginal is always used; for pooling
    methods the marginal is inert and predictions are pointwise.
    """
    X = np.atleast_2d(np.asarray(test_points, dtype=np.float64))
    if X.shape[0] < 1:
        raise DataError("test bag is empty")
    if not np.all(np.isfinite(X)):
        raise DataError("test points contain non-finite values")
    if X.shape[1] != model.dim:
        raise DataError(f"dimension mismatch: model wants d={model.dim}, got {X.shape[1]}")

    # Margins are reduced row by row with a fixed pairwise order, so outputs
    # are bit-identical however the points are batched into bags or chunks.
    def row_margins(rows: np.ndarray, vec: np.ndarray) -> np.ndarray:
        return np.add.reduce(rows * vec[None, :], axis=1)

    payload = model.payload
    if isinstance(payload, DualPayload):
        if payload.support_x.shape[0] == 0:
            return np.zeros(X.shape[0])
        if model.spec.kp_kind == "constant" or not payload.bags:
            weights = payload.support_coef
        else:
            test_bag = Bag("__test__", X)
            kp = distribution_gram([test_bag], list(payload.bags), model.spec)[0]
            weights = payload.support_coef * kp[payload.support_bag_idx]
        out = np.empty(X.shape[0])
        for lo in range(0, X.shape[0], _PREDICT_CHUNK):
            chunk = X[lo : lo + _PREDICT_CHUNK]
            kx = base_kernel_matrix(model.spec.kx_kind, model.spec.sigma_x, chunk, payload.support_x)
            out[lo : lo + chunk.shape[0]] = row_margins(kx, weights)
        return out

    fmap = payload.feature_map
    w = payload.weights
    out = np.empty(X.shape[0])
    if isinstance(fmap, ProductRffMap):
        offset = fmap.bag_offset(X)
        transform, vec = (lambda chunk: fmap.transform_with_offset(offset, chunk)), w
    elif isinstance(fmap, NystromMap):
        bag_w = fmap.bag_weights(X)
        vec = (fmap.whitening.T @ w) * bag_w  # fold whitening into landmark space
        transform = lambda chunk: base_kernel_matrix(
            fmap.spec.kx_kind, fmap.spec.sigma_x, chunk, fmap.landmark_x
        )
    else:
        transform, vec = fmap.transform, w
    for lo in range(0, X.shape[0], _PREDICT_CHUNK):
        chunk = X[lo : lo + _PREDICT_CHUNK]
        out[lo : lo + chunk.shape[0]] = row_margins(transform(chunk), vec)
    return out


def evaluate(model: Model, bags) -> EvalReport:
    """Per-bag average loss, with 0/1 error (classification) or RMSE.

    sign(0) counts as +1.  ``mean_risk`` is the unweighted mean of the
    per-bag risks, mirroring the expectation over test tasks.
    """
    bags = _as_bag_list(bags)
    _check_labeled(bags, model.loss_kind)
    per_bag = {}
    errors = []
    rmses = []
    classify = model.loss_kind == "hinge"
    for b in bags:
        margins = predict_bag(model, b.points)
        losses = _loss_vector(model.loss_kind, margins, b.labels, model.eps)
        per_bag[b.task_id] = float(np.mean(losses))
        if classify:
            signs = np.where(margins >= 0.0, 1.0, -1.0)
            errors.append(float(np.mean(signs != b.labels)))
        else:
            rmses.append(float(np.sqrt(np.mean((margins - b.labels) ** 2))))
    mean_risk = float(np.mean(list(per_bag.values())))
    return EvalReport(
        per_bag_risk=per_bag,
        mean_risk=mean_risk,
        error_rate=float(np.mean(errors)) if classify else None,
        rmse=float(np.mean(rmses)) if rmses else None,
    )
