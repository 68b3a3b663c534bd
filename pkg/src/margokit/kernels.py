"""Exact kernels on points, on empirical distributions, and on their product.

The extended input is a pair (empirical distribution, point).  The kernel
between two such pairs factorizes as

    kbar((P1, x1), (P2, x2)) = k_dist(P1, P2) * k_base(x1, x2)

where ``k_dist`` compares distributions through their mean embeddings under
a second base kernel.  All embedding work reduces to double-sum averages
over bag rows, which is what :func:`embedding_inner` computes and what the
:class:`EmbeddingCache` memoizes (the O(n*n') sums dominate Gram assembly).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bags import Bag
from .errors import DataError, NumericalError, UsageError

KX_KINDS = ("gaussian", "linear")
KP_KINDS = ("gaussian_like", "exponential_inner", "linear_inner", "constant")


@dataclass(frozen=True)
class KernelSpec:
    """Declarative choice of the three kernels and their hyperparameters.

    ``kx`` acts on points in the product kernel, ``kxp`` is the embedding
    kernel whose RKHS hosts the bag means, and ``kp`` compares the embedded
    bags.  ``kp="constant"`` collapses the distribution factor to 1, which
    is the pooling baseline.  ``kp_normalize`` wraps ``linear_inner`` or
    ``exponential_inner`` in the normalized kernel k*(a,b)=k(a,b)/sqrt(k(a,a)k(b,b)).
    """

    kx_kind: str = "gaussian"
    sigma_x: float = 1.0
    kxp_kind: str = "gaussian"
    sigma_xp: float = 1.0
    kp_kind: str = "gaussian_like"
    sigma_p: float = 1.0
    kappa: float = 1.0
    kp_normalize: bool = False

    def __post_init__(self):
        if self.kx_kind not in KX_KINDS:
            raise UsageError(f"unknown kx_kind {self.kx_kind!r}; choose from {KX_KINDS}")
        if self.kxp_kind not in KX_KINDS:
            raise UsageError(f"unknown kxp_kind {self.kxp_kind!r}; choose from {KX_KINDS}")
        if self.kp_kind not in KP_KINDS:
            raise UsageError(f"unknown kp_kind {self.kp_kind!r}; choose from {KP_KINDS}")
        for name in ("sigma_x", "sigma_xp", "sigma_p", "kappa"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise UsageError(f"{name} must be a finite positive number, got {v!r}")
        if self.kp_normalize and self.kp_kind not in ("linear_inner", "exponential_inner"):
            raise UsageError(
                "kp_normalize applies only to linear_inner / exponential_inner kinds"
            )

    @property
    def all_gaussian(self) -> bool:
        """True when the random-Fourier path applies."""
        return (
            self.kx_kind == "gaussian"
            and self.kxp_kind == "gaussian"
            and self.kp_kind == "gaussian_like"
        )

    def to_dict(self) -> dict:
        return {
            "kx_kind": self.kx_kind,
            "sigma_x": self.sigma_x,
            "kxp_kind": self.kxp_kind,
            "sigma_xp": self.sigma_xp,
            "kp_kind": self.kp_kind,
            "sigma_p": self.sigma_p,
            "kappa": self.kappa,
            "kp_normalize": self.kp_normalize,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(**d)


def _check_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64).ravel()
    if arr.size == 0:
        raise DataError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def base_kernel(kind: str, bandwidth: float, x, y) -> float:
    """Evaluate a base kernel on two points.

    gaussian: exp(-||x-y||^2 / (2 sigma^2)); linear: <x, y>.
    """
    xv = _check_vector(x, "x")
    yv = _check_vector(y, "y")
    if xv.shape != yv.shape:
        raise DataError(f"dimension mismatch: {xv.shape[0]} vs {yv.shape[0]}")
    if kind == "linear":
        return float(xv @ yv)
    if kind == "gaussian":
        if not (bandwidth > 0 and math.isfinite(bandwidth)):
            raise UsageError(f"gaussian bandwidth must be positive, got {bandwidth!r}")
        d = xv - yv
        return float(np.exp(-(d @ d) / (2.0 * bandwidth * bandwidth)))
    raise UsageError(f"unknown base kernel kind {kind!r}")


def accumulate_products(A: np.ndarray, B: np.ndarray, square_difference: bool = False) -> np.ndarray:
    """Feature-by-feature accumulation of <a_i, b_j> or ||a_i - b_j||^2.

    Summing over features in a fixed order makes every entry's rounding
    independent of how the rows are batched, so predictions cannot change
    with bag grouping or chunk boundaries (a BLAS product does not give
    that guarantee).
    """
    n, d = A.shape
    m = B.shape[0]
    out = np.zeros((n, m))
    tmp = np.empty((n, m))
    for k in range(d):
        if square_difference:
            np.subtract(A[:, k, None], B[None, :, k], out=tmp)
            np.multiply(tmp, tmp, out=tmp)
        else:
            np.multiply(A[:, k, None], B[None, :, k], out=tmp)
        out += tmp
    return out


def base_kernel_matrix(kind: str, bandwidth: float, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """All-pairs base kernel between the rows of A (m x d) and B (p x d)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise DataError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if kind == "linear":
        return accumulate_products(A, B)
    if kind == "gaussian":
        if not (bandwidth > 0 and math.isfinite(bandwidth)):
            raise UsageError(f"gaussian bandwidth must be positive, got {bandwidth!r}")
        sq = accumulate_products(A, B, square_difference=True)
        return np.exp(-sq / (2.0 * bandwidth * bandwidth))
    raise UsageError(f"unknown base kernel kind {kind!r}")


class EmbeddingCache:
    """Memo table for embedding inner products, keyed by bag content.

    The key includes the embedding kernel parameters, so one cache can be
    shared across calls with different specs.
    """

    def __init__(self):
        self._table: dict = {}

    def __len__(self) -> int:
        return len(self._table)

    def inner(self, bag_a: Bag, bag_b: Bag, kxp_kind: str, sigma_xp: float) -> float:
        ka, kb = bag_a.content_key(), bag_b.content_key()
        if kb < ka:
            ka, kb = kb, ka
            bag_a, bag_b = bag_b, bag_a
        key = (ka, kb, kxp_kind, float(sigma_xp))
        hit = self._table.get(key)
        if hit is None:
            hit = embedding_inner(bag_a, bag_b, kxp_kind, sigma_xp)
            self._table[key] = hit
        return hit


def embedding_inner(bag_a: Bag, bag_b: Bag, kxp_kind: str = "gaussian", sigma_xp: float = 1.0) -> float:
    """<Psi(P_a), Psi(P_b)>: the mean of the base kernel over all row pairs.

    Invariant to row permutations and to uniform duplication of a bag's rows.
    """
    if bag_a.dim != bag_b.dim:
        raise DataError(f"dimension mismatch: {bag_a.dim} vs {bag_b.dim}")
    K = base_kernel_matrix(kxp_kind, sigma_xp, bag_a.points, bag_b.points)
    return float(np.mean(K))


def distribution_kernel(bag_a: Bag, bag_b: Bag, spec: KernelSpec, cache: EmbeddingCache | None = None) -> float:
    """Kernel between two empirical distributions via their mean embeddings."""
    kind = spec.kp_kind
    if kind == "constant":
        return 1.0

    def g(a: Bag, b: Bag) -> float:
        if cache is not None:
            return cache.inner(a, b, spec.kxp_kind, spec.sigma_xp)
        return embedding_inner(a, b, spec.kxp_kind, spec.sigma_xp)

    g_ab = g(bag_a, bag_b)
    if kind == "linear_inner":
        if not spec.kp_normalize:
            return g_ab
        g_aa, g_bb = g(bag_a, bag_a), g(bag_b, bag_b)
        denom = g_aa * g_bb
        if denom <= 0:
            raise NumericalError("normalized linear_inner undefined: nonpositive diagonal")
        return g_ab / math.sqrt(denom)
    if kind == "exponential_inner":
        if not spec.kp_normalize:
            return math.exp(spec.kappa * g_ab)
        g_aa, g_bb = g(bag_a, bag_a), g(bag_b, bag_b)
        return math.exp(spec.kappa * (g_ab - 0.5 * (g_aa + g_bb)))
    # gaussian_like on the embedding distance
    g_aa, g_bb = g(bag_a, bag_a), g(bag_b, bag_b)
    sq = max(g_aa + g_bb - 2.0 * g_ab, 0.0)
    return math.exp(-sq / (2.0 * spec.sigma_p * spec.sigma_p))


def product_kernel(pa: tuple[Bag, np.ndarray], pb: tuple[Bag, np.ndarray], spec: KernelSpec,
                   cache: EmbeddingCache | None = None) -> float:
    """kbar on two extended points (bag, x)."""
    (bag_a, xa), (bag_b, xb) = pa, pb
    return distribution_kernel(bag_a, bag_b, spec, cache) * base_kernel(
        spec.kx_kind, spec.sigma_x, xa, xb
    )


def distribution_gram(bags_a: list[Bag], bags_b: list[Bag] | None, spec: KernelSpec,
                      cache: EmbeddingCache | None = None) -> np.ndarray:
    """Distribution-kernel matrix between two bag lists (symmetric if bags_b is None)."""
    if bags_b is None:
        B = len(bags_a)
        out = np.empty((B, B))
        for i in range(B):
            for j in range(i, B):
                v = distribution_kernel(bags_a[i], bags_a[j], spec, cache)
                out[i, j] = v
                out[j, i] = v
        return out
    out = np.empty((len(bags_a), len(bags_b)))
    for i, ba in enumerate(bags_a):
        for j, bb in enumerate(bags_b):
            out[i, j] = distribution_kernel(ba, bb, spec, cache)
    return out


def gram_matrix(points: list[tuple[Bag, np.ndarray]], spec: KernelSpec,
                cache_embeddings: bool = True,
                cache: EmbeddingCache | None = None) -> np.ndarray:
    """Symmetric Gram matrix of the product kernel over extended points.

    Distribution-kernel values are computed once per *bag pair*, never once
    per point pair: points are grouped by bag content first.
    """
    if not points:
        raise DataError("gram_matrix needs at least one extended point")
    if cache is None and cache_embeddings:
        cache = EmbeddingCache()

    bag_index: dict = {}
    unique_bags: list[Bag] = []
    idx = np.empty(len(points), dtype=np.intp)
    xs = []
    for i, (bag, x) in enumerate(points):
        key = bag.content_key()
        j = bag_index.get(key)
        if j is None:
            j = len(unique_bags)
            bag_index[key] = j
            unique_bags.append(bag)
        idx[i] = j
        xs.append(_check_vector(x, f"point {i}"))

    dims = {v.shape[0] for v in xs}
    if len(dims) != 1:
        raise DataError(f"inconsistent point dimensions: {sorted(dims)}")
    X = np.vstack(xs)

    KX = base_kernel_matrix(spec.kx_kind, spec.sigma_x, X, X)
    KX = 0.5 * (KX + KX.T)
    KP = distribution_gram(unique_bags, None, spec, cache)
    return KP[np.ix_(idx, idx)] * KX
