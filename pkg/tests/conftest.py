import numpy as np
import pytest

from margokit import Bag


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_bag(rng, n, d, task_id="t", scale=1.0):
    return Bag(task_id=task_id, points=scale * rng.normal(size=(n, d)))


def random_extended_points(rng, n_bags, points_per_bag, d, bag_size=6):
    """Extended points spread over a few random bags."""
    bags = [random_bag(rng, bag_size, d, task_id=f"b{i}") for i in range(n_bags)]
    out = []
    for i in range(n_bags):
        for _ in range(points_per_bag):
            out.append((bags[i], rng.normal(size=d)))
    return out
