"""Bags: finite samples standing in for one task's marginal distribution.

A bag is the unit the whole library works on.  Its rows are an i.i.d.
sample from one task, so everything downstream (embeddings, kernels,
training) must treat it as an unordered empirical measure.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise DataError(f"points must be a nonempty 2-D array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise DataError("points contain non-finite values")
    return pts


@dataclass(frozen=True)
class Bag:
    """One task's sample: an n x d point matrix plus optional labels."""

    task_id: str
    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = _as_points(self.points)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.float64).ravel()
            if lab.shape[0] != pts.shape[0]:
                raise DataError(
                    f"bag {self.task_id!r}: {lab.shape[0]} labels for {pts.shape[0]} points"
                )
            if not np.all(np.isfinite(lab)):
                raise DataError(f"bag {self.task_id!r}: labels contain non-finite values")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def content_key(self) -> tuple[str, str]:
        """(task_id, sha1-of-points) key identifying the empirical measure."""
        h = hashlib.sha1()
        h.update(str(self.points.shape).encode())
        h.update(np.ascontiguousarray(self.points).tobytes())
        return (self.task_id, h.hexdigest())


@dataclass
class BagCollection:
    """A list of bags sharing one feature dimension, with provenance.

    May be empty (e.g. the test side of a degenerate split); most consumers
    require at least one bag and say so themselves.
    """

    bags: list[Bag]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = {b.dim for b in self.bags}
        if len(dims) > 1:
            raise DataError(f"bags have inconsistent dimensions: {sorted(dims)}")
        ids = [b.task_id for b in self.bags]
        if len(set(ids)) != len(ids):
            dupes = sorted({t for t in ids if ids.count(t) > 1})
            raise DataError(f"duplicate task_ids: {dupes}")

    @property
    def dim(self) -> int:
        if not self.bags:
            raise DataError("collection is empty")
        return self.bags[0].dim

    @property
    def labeled(self) -> bool:
        return all(b.labeled for b in self.bags)

    def __len__(self) -> int:
        return len(self.bags)

    def __iter__(self):
        return iter(self.bags)

    def __getitem__(self, i) -> Bag:
        return self.bags[i]


def bags_from_arrays(X, y=None, groups=None) -> list[Bag]:
    """Build bags from flat (X, y, groups) arrays.

    ``groups`` assigns each row to a task; with ``groups=None`` all rows form
    a single bag.  Bags are ordered by first appearance of their group.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"X must be 2-D, got shape {X.shape}")
    n = X.shape[0]
    if groups is None:
        groups = np.zeros(n, dtype=np.int64)
    groups = np.asarray(groups).ravel()
    if groups.shape[0] != n:
        raise DataError(f"{groups.shape[0]} group entries for {n} rows")
    if y is not None:
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.shape[0] != n:
            raise DataError(f"{y.shape[0]} labels for {n} rows")
    bags = []
    seen: dict = {}
    for g in groups:
        key = g.item() if isinstance(g, np.generic) else g
        if key not in seen:
            seen[key] = None
    for key in seen:
        mask = np.array([((g.item() if isinstance(g, np.generic) else g) == key) for g in groups])
        bags.append(
            Bag(
                task_id=str(key),
                points=X[mask],
                labels=None if y is None else y[mask],
            )
        )
    return bags
