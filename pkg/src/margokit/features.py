"""Approximate feature maps: random Fourier features and Nystrom landmarks.

Three maps live here:

* :class:`RffMap` - Monte-Carlo cosine features for a Gaussian base kernel.
* :class:`ProductRffMap` - the two-stage construction for the product kernel:
  RFF-embed each bag, rescale-concatenate the embedding with the point, then
  apply a second RFF layer to the resulting Gaussian kernel on R^(2L+d).
* :class:`NystromMap` - data-dependent landmark features for any kernel spec.

All transforms are pure; maps are immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._seeds import child_rng
from .bags import Bag
from .errors import DataError, NumericalError, UsageError
from .kernels import (
    EmbeddingCache,
    KernelSpec,
    accumulate_products,
    base_kernel_matrix,
    distribution_gram,
    gram_matrix,
    product_kernel,
)


def _interleaved_cos_sin(angles: np.ndarray, scale: float) -> np.ndarray:
    """[cos a1, sin a1, cos a2, sin a2, ...] rows, times ``scale``."""
    n, L = angles.shape
    out = np.empty((n, 2 * L))
    np.cos(angles, out=out[:, 0::2])
    np.sin(angles, out=out[:, 1::2])
    out *= scale
    return out


@dataclass(frozen=True)
class RffMap:
    """Frequencies approximating one Gaussian kernel with 2L cosine/sine features."""

    frequencies: np.ndarray  # L x d
    sigma: float
    seed: int

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 1:
            raise UsageError(f"frequencies must be L x d with L >= 1, got shape {f.shape}")
        f.setflags(write=False)
        object.__setattr__(self, "frequencies", f)

    @property
    def n_frequencies(self) -> int:
        return self.frequencies.shape[0]

    @property
    def dim(self) -> int:
        return self.frequencies.shape[1]

    @property
    def output_dim(self) -> int:
        return 2 * self.frequencies.shape[0]

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Map rows of X (n x d) to (n x 2L) unit-norm feature rows."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DataError(f"dimension mismatch: map wants d={self.dim}, got {X.shape[1]}")
        L = self.n_frequencies
        angles = accumulate_products(X, self.frequencies)
        return _interleaved_cos_sin(angles, 1.0 / math.sqrt(L))

    def embed_bag(self, bag_points: np.ndarray, chunk: int = 8192) -> np.ndarray:
        """Mean feature row of a bag: the RFF image of its empirical measure.

        Processes rows in chunks so huge bags never materialize an n x 2L block.
        """
        pts = np.atleast_2d(np.asarray(bag_points, dtype=np.float64))
        n = pts.shape[0]
        if n < 1:
            raise DataError("cannot embed an empty bag")
        if n <= chunk:
            return self.transform(pts).mean(axis=0)
        acc = np.zeros(self.output_dim)
        for lo in range(0, n, chunk):
            acc += self.transform(pts[lo : lo + chunk]).sum(axis=0)
        return acc / n


def sample_rff(seed: int, L: int, sigma: float, d: int) -> RffMap:
    """Draw L frequencies i.i.d. Normal(0, 1/sigma^2) per entry."""
    if L < 1 or d < 1:
        raise UsageError(f"L and d must be >= 1, got L={L}, d={d}")
    if not sigma > 0:
        raise UsageError(f"sigma must be positive, got {sigma!r}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    freqs = rng.normal(0.0, 1.0 / sigma, size=(L, d))
    return RffMap(frequencies=freqs, sigma=float(sigma), seed=int(seed))


def rff_transform(rmap: RffMap, x) -> np.ndarray:
    """Feature vector of a single point."""
    return rmap.transform(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]


def embed_bag_rff(rmap: RffMap, bag: Bag) -> np.ndarray:
    """Feature-space mean embedding of a bag."""
    return rmap.embed_bag(bag.points)


@dataclass(frozen=True)
class ProductRffMap:
    """Two-stage random features for the all-Gaussian product kernel.

    The first stage embeds a bag through ``inner`` (bandwidth sigma_xp); the
    second stage applies frequencies ``outer`` (Q x (2L+d), entries
    Normal(0, 1/(sigma_p*sigma_x)^2)) to u = (sigma_x * Z_P, sigma_p * x).
    """

    inner: RffMap
    outer: np.ndarray  # Q x (2L + d)
    sigma_x: float
    sigma_p: float
    seed: int

    def __post_init__(self):
        o = np.asarray(self.outer, dtype=np.float64)
        expected = self.inner.output_dim + self.inner.dim
        if o.ndim != 2 or o.shape[1] != expected:
            raise UsageError(
                f"outer frequencies must be Q x {expected}, got shape {o.shape}"
            )
        o.setflags(write=False)
        object.__setattr__(self, "outer", o)

    @property
    def dim(self) -> int:
        return self.inner.dim

    @property
    def n_outer(self) -> int:
        return self.outer.shape[0]

    @property
    def output_dim(self) -> int:
        return 2 * self.outer.shape[0]

    def bag_offset(self, bag_points: np.ndarray) -> np.ndarray:
        """Per-bag part of the outer angles (constant across the bag's points)."""
        zp = self.inner.embed_bag(bag_points)
        return self.outer[:, : self.inner.output_dim] @ (self.sigma_x * zp)

    def transform_with_offset(self, offset: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Features of rows X under a precomputed per-bag angle offset."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DataError(f"dimension mismatch: map wants d={self.dim}, got {X.shape[1]}")
        angles = accumulate_products(self.sigma_p * X, self.outer[:, self.inner.output_dim :])
        angles += offset[None, :]
        return _interleaved_cos_sin(angles, 1.0 / math.sqrt(self.n_outer))

    def transform_bag(self, bag_points: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Features of rows X, all carrying the empirical measure of ``bag_points``."""
        return self.transform_with_offset(self.bag_offset(bag_points), X)


def sample_product_rff(seed: int, L: int, Q: int, spec: KernelSpec, d: int) -> ProductRffMap:
    """Draw the two frequency blocks for an all-Gaussian kernel spec."""
    if not spec.all_gaussian:
        raise UsageError("RFF path requires all-Gaussian kernels")
    if Q < 1:
        raise UsageError(f"Q must be >= 1, got {Q}")
    inner = sample_rff(
        int(child_rng(seed, "product_rff", "inner_seed").integers(2**63)),
        L,
        spec.sigma_xp,
        d,
    )
    outer_sigma = spec.sigma_p * spec.sigma_x
    rng = child_rng(seed, "product_rff", "outer")
    outer = rng.normal(0.0, 1.0 / outer_sigma, size=(Q, 2 * L + d))
    return ProductRffMap(
        inner=inner, outer=outer, sigma_x=float(spec.sigma_x), sigma_p=float(spec.sigma_p), seed=int(seed)
    )


def product_feature(pmap: ProductRffMap, bag: Bag, x) -> np.ndarray:
    """Feature vector of one extended point (bag, x)."""
    return pmap.transform_bag(bag.points, np.asarray(x, dtype=np.float64).reshape(1, -1))[0]


@dataclass(frozen=True)
class NystromMap:
    """Landmark features z(p) = whitening @ [kbar(p, landmark_1..m)].

    ``landmark_bags`` holds the distinct bags the landmarks reference;
    ``landmark_bag_idx[i]`` points the i-th landmark into that list.  With a
    constant distribution kernel the bag side is inert and ``landmark_bags``
    may be empty.
    """

    landmark_x: np.ndarray  # m x d
    landmark_bag_idx: np.ndarray  # m ints
    landmark_bags: tuple
    whitening: np.ndarray  # r x m
    spec: KernelSpec
    seed: int
    eig_threshold: float = 1e-10
    _cache: EmbeddingCache = field(default_factory=EmbeddingCache, repr=False, compare=False)

    @property
    def n_landmarks(self) -> int:
        return self.landmark_x.shape[0]

    @property
    def dim(self) -> int:
        return self.landmark_x.shape[1]

    @property
    def output_dim(self) -> int:
        return self.whitening.shape[0]

    def bag_weights(self, bag_points: np.ndarray) -> np.ndarray:
        """Per-landmark distribution-kernel multipliers for one query bag."""
        if self.spec.kp_kind == "constant" or not self.landmark_bags:
            return np.ones(self.n_landmarks)
        bag = Bag(task_id="__query__", points=np.atleast_2d(np.asarray(bag_points, dtype=np.float64)))
        kp_row = distribution_gram([bag], list(self.landmark_bags), self.spec, self._cache)[0]
        return kp_row[self.landmark_bag_idx]

    def transform_points(self, weights: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Features of rows X under precomputed per-landmark bag weights."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        kx = base_kernel_matrix(self.spec.kx_kind, self.spec.sigma_x, X, self.landmark_x)
        return (kx * weights[None, :]) @ self.whitening.T

    def transform_bag(self, bag_points: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Features of rows X, all carrying the empirical measure of ``bag_points``."""
        return self.transform_points(self.bag_weights(bag_points), X)


def fit_nystrom(points: list[tuple[Bag, np.ndarray]], spec: KernelSpec, m: int, seed: int,
                eps_eig: float = 1e-10) -> NystromMap:
    """Sample m landmarks without replacement and whiten their Gram.

    Eigenpairs at or below ``eps_eig`` times the top eigenvalue are dropped,
    so the output dimension can be smaller than m.
    """
    M = len(points)
    if not 1 <= m <= M:
        raise UsageError(f"need 1 <= m <= {M}, got m={m}")
    if eps_eig < 0:
        raise UsageError(f"eps_eig must be >= 0, got {eps_eig}")
    rng = child_rng(seed, "nystrom", "landmarks")
    chosen = np.sort(rng.choice(M, size=m, replace=False))
    landmarks = [points[i] for i in chosen]

    cache = EmbeddingCache()
    K_hat = gram_matrix(landmarks, spec, cache=cache)
    evals, evecs = np.linalg.eigh(K_hat)
    top = evals[-1]
    if not top > 0:
        raise NumericalError("landmark Gram has no positive eigenvalues")
    keep = evals > eps_eig * top
    if not np.any(keep):
        raise NumericalError("all landmark eigenvalues fall below the threshold")
    whitening = (evecs[:, keep] / np.sqrt(evals[keep])).T

    bag_index: dict = {}
    unique_bags: list[Bag] = []
    idx = np.empty(m, dtype=np.intp)
    for i, (bag, _) in enumerate(landmarks):
        key = bag.content_key()
        j = bag_index.get(key)
        if j is None:
            j = len(unique_bags)
            bag_index[key] = j
            unique_bags.append(bag)
        idx[i] = j
    lm_x = np.vstack([np.asarray(x, dtype=np.float64).ravel() for _, x in landmarks])
    if spec.kp_kind == "constant":
        unique_bags = []
        idx = np.zeros(m, dtype=np.intp)
    return NystromMap(
        landmark_x=lm_x,
        landmark_bag_idx=idx,
        landmark_bags=tuple(unique_bags),
        whitening=whitening,
        spec=spec,
        seed=int(seed),
        eig_threshold=float(eps_eig),
        _cache=cache,
    )


def theorem_bound(L: int, Q: int, eps_l: float, eps_q: float, sigma_p: float,
                  n1: int, n2: int) -> float:
    """Upper bound on P(|kbar - approx| >= eps_l + eps_q) for fixed inputs.

    2 exp(-Q eps_q^2 / 2) + 6 n1 n2 exp(-L eps^2 / 2) with
    eps = (sigma_p^2 / 2) log(1 + eps_l).
    """
    if min(L, Q, n1, n2) < 1 or eps_l <= 0 or eps_q <= 0:
        raise UsageError("L, Q, n1, n2 must be >= 1 and eps_l, eps_q positive")
    eps = 0.5 * sigma_p * sigma_p * math.log1p(eps_l)
    return 2.0 * math.exp(-Q * eps_q * eps_q / 2.0) + 6.0 * n1 * n2 * math.exp(-L * eps * eps / 2.0)


@dataclass(frozen=True)
class ApproxErrorRow:
    """One repeat of the approximation diagnostic."""

    repeat: int
    max_abs_err: float
    mean_abs_err: float
    n_exceed: int


@dataclass(frozen=True)
class ApproxErrorReport:
    """Empirical approximation errors of the two-stage map against exact kbar."""

    L: int
    Q: int
    eps_l: float
    eps_q: float
    bag_size: int
    dim: int
    n_pairs: int
    rows: tuple[ApproxErrorRow, ...]
    bound: float

    @property
    def exceed_frac(self) -> float:
        total = sum(r.n_exceed for r in self.rows)
        return total / (self.n_pairs * len(self.rows))

    @property
    def median_max_err(self) -> float:
        return float(np.median([r.max_abs_err for r in self.rows]))

    @property
    def mean_abs_err(self) -> float:
        return float(np.mean([r.mean_abs_err for r in self.rows]))


def approx_error_stats(spec: KernelSpec, L: int, Q: int, n_pairs: int, n_repeats: int,
                       seed: int, bag_size: int = 10, dim: int = 3,
                       eps_l: float = 0.2, eps_q: float = 0.1) -> ApproxErrorReport:
    """Measure |kbar - zbar^T zbar'| over random unit-cube pairs, fresh maps per repeat.

    The pair set is drawn once and held fixed; each repeat redraws the map,
    matching the probability statement the bound makes (randomness over the
    frequency draw).
    """
    if min(n_pairs, n_repeats, bag_size, dim) < 1:
        raise UsageError("n_pairs, n_repeats, bag_size, dim must all be >= 1")
    if not spec.all_gaussian:
        raise UsageError("RFF path requires all-Gaussian kernels")

    pair_rng = child_rng(seed, "approx_stats", "pairs")
    pairs = []
    exact = np.empty(n_pairs)
    for i in range(n_pairs):
        bag_a = Bag(f"a{i}", pair_rng.uniform(size=(bag_size, dim)))
        bag_b = Bag(f"b{i}", pair_rng.uniform(size=(bag_size, dim)))
        xa = pair_rng.uniform(size=dim)
        xb = pair_rng.uniform(size=dim)
        pairs.append((bag_a, xa, bag_b, xb))
        exact[i] = product_kernel((bag_a, xa), (bag_b, xb), spec)

    threshold = eps_l + eps_q
    rows = []
    for r in range(n_repeats):
        map_seed = int(child_rng(seed, "approx_stats", "map", r).integers(2**63))
        pmap = sample_product_rff(map_seed, L, Q, spec, dim)
        errs = np.empty(n_pairs)
        for i, (bag_a, xa, bag_b, xb) in enumerate(pairs):
            za = pmap.transform_bag(bag_a.points, xa.reshape(1, -1))[0]
            zb = pmap.transform_bag(bag_b.points, xb.reshape(1, -1))[0]
            errs[i] = abs(exact[i] - float(za @ zb))
        rows.append(
            ApproxErrorRow(
                repeat=r,
                max_abs_err=float(errs.max()),
                mean_abs_err=float(errs.mean()),
                n_exceed=int(np.sum(errs >= threshold)),
            )
        )

    bound = theorem_bound(L, Q, eps_l, eps_q, spec.sigma_p, bag_size, bag_size)
    return ApproxErrorReport(
        L=L, Q=Q, eps_l=eps_l, eps_q=eps_q, bag_size=bag_size, dim=dim,
        n_pairs=n_pairs, rows=tuple(rows), bound=bound,
    )
