"""Synthetic task generation, bag CSV ingestion/emission, and splitting.

The synthetic generator draws, per task, a rotation angle uniform in
[pi/4, 3pi/4], places points uniformly (in the curve parameter) on a
rotated ellipse centered at the origin, and labels each point by the side
of the major axis it falls on.  Every task therefore shares the same mean,
so only distribution shape carries task identity.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass

import numpy as np

from ._seeds import child_int, child_rng
from .bags import Bag, BagCollection
from .errors import ParseError, UsageError

ROTATION_LOW = math.pi / 4
ROTATION_HIGH = 3 * math.pi / 4


@dataclass(frozen=True)
class EllipseTaskParams:
    """One synthetic task: ellipse axes, rotation, sample size, seed."""

    rotation: float
    n: int
    seed: int
    semi_major: float = 1.0
    semi_minor: float = 0.5

    def __post_init__(self):
        if not self.semi_major > self.semi_minor > 0:
            raise UsageError(
                f"need semi_major > semi_minor > 0, got a={self.semi_major}, b={self.semi_minor}"
            )
        if not ROTATION_LOW <= self.rotation <= ROTATION_HIGH:
            raise UsageError(f"rotation {self.rotation} outside [pi/4, 3pi/4]")
        if self.n < 1:
            raise UsageError(f"n must be >= 1, got {self.n}")


def gen_ellipse_task(params: EllipseTaskParams, task_id: str = "task0") -> Bag:
    """Sample one labeled bag on the rotated ellipse boundary.

    Points on the curve t -> R(alpha) (a cos t, b sin t) with t uniform in
    [0, 2pi); label +1 iff <p, (-sin alpha, cos alpha)> > 0 (the left of the
    major axis), ties labeled -1.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(params.seed)))
    t = rng.uniform(0.0, 2.0 * math.pi, size=params.n)
    base = np.column_stack([params.semi_major * np.cos(t), params.semi_minor * np.sin(t)])
    ca, sa = math.cos(params.rotation), math.sin(params.rotation)
    rot = np.array([[ca, -sa], [sa, ca]])
    points = base @ rot.T
    normal = np.array([-sa, ca])
    labels = np.where(points @ normal > 0.0, 1.0, -1.0)
    return Bag(task_id=task_id, points=points, labels=labels)


def gen_collection(N: int, n: int, seed: int = 0, semi_major: float = 1.0,
                   semi_minor: float = 0.5) -> BagCollection:
    """N independent ellipse tasks with n points each, child-seeded by index."""
    if N < 1 or n < 1:
        raise UsageError(f"N and n must be >= 1, got N={N}, n={n}")
    bags = []
    rotations = []
    for i in range(N):
        alpha = float(child_rng(seed, "rotation", i).uniform(ROTATION_LOW, ROTATION_HIGH))
        rotations.append(alpha)
        params = EllipseTaskParams(
            rotation=alpha, n=n, seed=child_int(seed, "points", i),
            semi_major=semi_major, semi_minor=semi_minor,
        )
        bags.append(gen_ellipse_task(params, task_id=f"task{i:05d}"))
    return BagCollection(
        bags=bags,
        provenance={"generator": "ellipse", "seed": int(seed), "N": N, "n": n,
                    "semi_major": semi_major, "semi_minor": semi_minor,
                    "rotations": rotations},
    )


_FEATURE_COL = re.compile(r"^f(\d+)$")


def write_bags(collection: BagCollection, path):
    """Emit the collection as CSV: header ``task_id,y,f1..fd`` (y only when labeled).

    Floats use the shortest representation that round-trips exactly.
    """
    bags = list(collection.bags)
    if not bags:
        raise UsageError("cannot write an empty collection")
    labeled = [b.labeled for b in bags]
    if any(labeled) and not all(labeled):
        raise UsageError("cannot write a mix of labeled and unlabeled bags")
    has_y = all(labeled)
    d = collection.dim
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["task_id"] + (["y"] if has_y else []) + [f"f{j + 1}" for j in range(d)]
        writer.writerow(header)
        for bag in bags:
            for j in range(bag.n):
                row = [bag.task_id]
                if has_y:
                    row.append(repr(float(bag.labels[j])))
                row.extend(repr(float(v)) for v in bag.points[j])
                writer.writerow(row)


def read_bags(path) -> BagCollection:
    """Parse a bag CSV; every malformed construct reports its line number.

    Rows of one task must form a contiguous block (the writer emits them
    that way); a task_id reappearing after its block closed is an error.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise ParseError("missing header", line=1)
    header = rows[0]
    if header[0] != "task_id":
        raise ParseError(f"header must start with 'task_id', got {header[0]!r}", line=1)
    has_y = len(header) > 1 and header[1] == "y"
    feature_cols = header[2:] if has_y else header[1:]
    if not feature_cols:
        raise ParseError("header declares no feature columns", line=1)
    for j, name in enumerate(feature_cols):
        m = _FEATURE_COL.match(name)
        if not m or int(m.group(1)) != j + 1:
            raise ParseError(f"expected feature column 'f{j + 1}', got {name!r}", line=1)
    width = len(header)
    d = len(feature_cols)

    bags: list[Bag] = []
    closed: set[str] = set()
    current_id: str | None = None
    cur_points: list[list[float]] = []
    cur_labels: list[float] = []

    def flush():
        nonlocal current_id, cur_points, cur_labels
        if current_id is not None:
            bags.append(
                Bag(
                    task_id=current_id,
                    points=np.array(cur_points, dtype=np.float64),
                    labels=np.array(cur_labels, dtype=np.float64) if has_y else None,
                )
            )
            closed.add(current_id)
        current_id, cur_points, cur_labels = None, [], []

    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise ParseError(f"expected {width} fields, got {len(row)}", line=lineno)
        task_id = row[0]
        if task_id != current_id:
            if task_id in closed:
                raise ParseError(
                    f"rows for task {task_id!r} must be contiguous", line=lineno
                )
            flush()
            current_id = task_id
        offset = 2 if has_y else 1
        try:
            feats = [float(v) for v in row[offset:]]
        except ValueError:
            raise ParseError(f"non-numeric feature value in {row[offset:]!r}", line=lineno)
        if not all(math.isfinite(v) for v in feats):
            raise ParseError("non-finite feature value", line=lineno)
        if has_y:
            try:
                label = float(row[1])
            except ValueError:
                raise ParseError(f"non-numeric label {row[1]!r}", line=lineno)
            if not math.isfinite(label):
                raise ParseError("non-finite label", line=lineno)
            cur_labels.append(label)
        cur_points.append(feats)
    flush()
    if not bags:
        raise ParseError("file contains no data rows", line=2)
    return BagCollection(bags=bags, provenance={"source": str(path), "dim": d})


def split_collection(collection: BagCollection, n_test_bags: int,
                     per_bag_subsample: int | None = None,
                     seed: int = 0) -> tuple[BagCollection, BagCollection]:
    """Bag-level train/test split; optionally subsample each *training* bag.

    Bags are never split across the two sides.  Subsampling draws
    ``per_bag_subsample`` rows without replacement (original row order kept).
    """
    bags = list(collection.bags)
    if not 0 <= n_test_bags < len(bags):
        raise UsageError(f"n_test_bags must be in [0, {len(bags) - 1}], got {n_test_bags}")
    rng = child_rng(seed, "split")
    perm = rng.permutation(len(bags))
    test_idx = set(int(i) for i in perm[:n_test_bags])
    train, test = [], []
    for i, bag in enumerate(bags):
        if i in test_idx:
            test.append(bag)
            continue
        if per_bag_subsample is not None:
            if per_bag_subsample > bag.n:
                raise UsageError(
                    f"subsample size {per_bag_subsample} exceeds bag {bag.task_id!r} size {bag.n}"
                )
            keep = np.sort(child_rng(seed, "subsample", bag.task_id).choice(
                bag.n, size=per_bag_subsample, replace=False
            ))
            bag = Bag(
                task_id=bag.task_id,
                points=bag.points[keep],
                labels=None if bag.labels is None else bag.labels[keep],
            )
        train.append(bag)
    prov = dict(collection.provenance)
    prov["split"] = {"n_test_bags": n_test_bags, "seed": int(seed),
                     "per_bag_subsample": per_bag_subsample}
    return (
        BagCollection(bags=train, provenance=prov),
        BagCollection(bags=test, provenance=prov),
    )
