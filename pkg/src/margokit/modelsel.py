"""Hyperparameter selection: repeated k-fold cross-validation over log grids,
with grid recentering when a selected value lands on a boundary.

Folding is by bag, never by point: a validation bag is predicted through its
own empirical marginal, exactly as at deployment time.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._seeds import child_int, child_rng
from .bags import BagCollection
from .errors import UsageError
from .kernels import KernelSpec
from .learner import evaluate, train

GRID_PARAMS = ("sigma_x", "sigma_xp", "sigma_p", "lambda")


@dataclass(frozen=True)
class GridAxis:
    """One parameter's candidate range: count points from low to high."""

    low: float
    high: float
    count: int
    log: bool = True

    def __post_init__(self):
        if self.count < 1:
            raise UsageError(f"count must be >= 1, got {self.count}")
        if self.count == 1:
            if self.low != self.high:
                raise UsageError("a single-point axis needs low == high")
        elif not self.low < self.high:
            raise UsageError(f"need low < high, got [{self.low}, {self.high}]")
        if self.log and self.low <= 0:
            raise UsageError("log-spaced axes need positive bounds")

    def values(self) -> np.ndarray:
        if self.count == 1:
            return np.array([self.low])
        if self.log:
            return np.exp(np.linspace(math.log(self.low), math.log(self.high), self.count))
        return np.linspace(self.low, self.high, self.count)


@dataclass(frozen=True)
class GridSpec:
    """The whole search: axes (in declaration order), folds, repeats, seed."""

    axes: tuple[tuple[str, GridAxis], ...]
    folds: int = 5
    repeats: int = 5
    max_recenter: int = 3
    seed: int = 0

    def __post_init__(self):
        names = [n for n, _ in self.axes]
        if len(set(names)) != len(names):
            raise UsageError(f"duplicate grid parameters: {names}")
        for n in names:
            if n not in GRID_PARAMS:
                raise UsageError(f"unknown grid parameter {n!r}; choose from {GRID_PARAMS}")
        if self.folds < 2:
            raise UsageError(f"folds must be >= 2, got {self.folds}")
        if self.repeats < 1:
            raise UsageError(f"repeats must be >= 1, got {self.repeats}")
        if self.max_recenter < 0:
            raise UsageError(f"max_recenter must be >= 0, got {self.max_recenter}")

    @classmethod
    def from_dict(cls, axes: dict[str, GridAxis], **kw) -> "GridSpec":
        return cls(axes=tuple(axes.items()), **kw)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.axes)

    def points(self) -> list[dict]:
        """All candidates in enumeration order (last axis varies fastest)."""
        names = self.names
        grids = [axis.values() for _, axis in self.axes]
        return [
            {name: float(v) for name, v in zip(names, combo)}
            for combo in itertools.product(*grids)
        ]


@dataclass(frozen=True)
class ScoreRow:
    params: dict
    repeat: int
    fold: int
    risk: float
    zero_one: float | None


@dataclass
class CvResult:
    """Selected parameters plus the full audit table."""

    best_params: dict
    best_risk: float
    rows: list[ScoreRow] = field(default_factory=list)
    aggregates: list[tuple[dict, float, float | None]] = field(default_factory=list)


def _fold_assignments(n_bags: int, folds: int, repeats: int, seed: int) -> list[list[np.ndarray]]:
    """Per repeat, a partition of bag indices into ``folds`` blocks."""
    out = []
    for r in range(repeats):
        perm = child_rng(seed, "folds", r).permutation(n_bags)
        out.append([np.sort(part) for part in np.array_split(perm, folds)])
    return out


def _apply_params(spec: KernelSpec, params: dict) -> tuple[KernelSpec, float | None]:
    updates = {k: v for k, v in params.items() if k in ("sigma_x", "sigma_xp", "sigma_p")}
    lam = params.get("lambda")
    return (replace(spec, **updates) if updates else spec), lam


def cross_validate(bags, spec_template: KernelSpec, grid: GridSpec,
                   method: str = "exact_dual", loss_kind: str = "hinge",
                   lam: float = 1e-3, **train_kw) -> CvResult:
    """Score every grid point on repeated bag-level folds; pick the argmin.

    Rows accumulate in grid-enumeration order so the reported table is
    identical however evaluations might be scheduled.  Ties break to the
    first candidate in enumeration order.
    """
    bag_list = list(bags.bags) if isinstance(bags, BagCollection) else list(bags)
    if len(bag_list) < grid.folds:
        raise UsageError(f"{len(bag_list)} bags cannot fill {grid.folds} folds")
    assignments = _fold_assignments(len(bag_list), grid.folds, grid.repeats, grid.seed)

    result = CvResult(best_params={}, best_risk=math.inf)
    for params in grid.points():
        spec, cand_lam = _apply_params(spec_template, params)
        use_lam = lam if cand_lam is None else cand_lam
        risks, zero_ones = [], []
        for r, folds in enumerate(assignments):
            for f, val_idx in enumerate(folds):
                val_set = set(int(i) for i in val_idx)
                train_bags = [b for i, b in enumerate(bag_list) if i not in val_set]
                val_bags = [b for i, b in enumerate(bag_list) if i in val_set]
                model = train(
                    train_bags, spec, use_lam, loss_kind=loss_kind, method=method,
                    seed=child_int(grid.seed, "train", r, f), **train_kw,
                )
                report = evaluate(model, val_bags)
                row = ScoreRow(
                    params=dict(params), repeat=r, fold=f,
                    risk=report.mean_risk, zero_one=report.error_rate,
                )
                result.rows.append(row)
                risks.append(row.risk)
                zero_ones.append(row.zero_one)
        mean_risk = float(np.mean(risks))
        mean_zero = float(np.mean(zero_ones)) if zero_ones[0] is not None else None
        result.aggregates.append((dict(params), mean_risk, mean_zero))
        if mean_risk < result.best_risk:
            result.best_risk = mean_risk
            result.best_params = dict(params)
    return result


def recenter_grid(grid: GridSpec, selected: dict) -> GridSpec:
    """Recenter any axis whose selected value sits on its boundary.

    The new axis keeps the count and the (log-)span, centered at the
    selected value.  Returns the input unchanged when the selection is
    interior everywhere.
    """
    new_axes = []
    changed = False
    for name, axis in grid.axes:
        if name not in selected:
            raise UsageError(f"selected parameters missing {name!r}")
        v = float(selected[name])
        vals = axis.values()
        if not np.any(vals == v):
            raise UsageError(f"selected {name}={v!r} does not lie on the grid")
        at_boundary = v == vals[0] or v == vals[-1]
        if not at_boundary or axis.count == 1:
            new_axes.append((name, axis))
            continue
        changed = True
        if axis.log:
            half = 0.5 * (math.log(axis.high) - math.log(axis.low))
            new_axis = GridAxis(
                low=math.exp(math.log(v) - half), high=math.exp(math.log(v) + half),
                count=axis.count, log=True,
            )
        else:
            half = 0.5 * (axis.high - axis.low)
            new_axis = GridAxis(low=v - half, high=v + half, count=axis.count, log=False)
        new_axes.append((name, new_axis))
    if not changed:
        return grid
    return GridSpec(
        axes=tuple(new_axes), folds=grid.folds, repeats=grid.repeats,
        max_recenter=grid.max_recenter, seed=grid.seed,
    )


def run_model_selection(bags, spec_template: KernelSpec, grid: GridSpec,
                        method: str = "exact_dual", loss_kind: str = "hinge",
                        lam: float = 1e-3, **train_kw) -> tuple[dict, list[CvResult]]:
    """Drive cross_validate with boundary recentering, at most max_recenter extra rounds."""
    rounds = []
    for _ in range(grid.max_recenter + 1):
        result = cross_validate(
            bags, spec_template, grid, method=method, loss_kind=loss_kind, lam=lam, **train_kw
        )
        rounds.append(result)
        new_grid = recenter_grid(grid, result.best_params)
        if new_grid is grid:
            break
        grid = new_grid
    return rounds[-1].best_params, rounds


def write_score_csv(rounds: list[CvResult], names: tuple[str, ...], path):
    """Audit table: one row per (round, grid point, repeat, fold) plus aggregates."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", *names, "repeat", "fold", "risk", "zero_one"])
        for rnd, result in enumerate(rounds):
            for row in result.rows:
                writer.writerow([
                    rnd, *[repr(row.params[n]) for n in names],
                    row.repeat, row.fold, repr(row.risk),
                    "" if row.zero_one is None else repr(row.zero_one),
                ])
            for params, mean_risk, mean_zero in result.aggregates:
                writer.writerow([
                    rnd, *[repr(params[n]) for n in names],
                    "mean", "", repr(mean_risk),
                    "" if mean_zero is None else repr(mean_zero),
                ])
