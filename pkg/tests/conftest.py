import numpy as np
import pytest

from cflab.data.dataset import build_dataset, kcore_filter, split
from cflab.data.sampler import Batch
from cflab.models.state import ModelState
from cflab.optim.adam import init_params


def write_tsv(path, rows):
    path.write_text("".join("\t".join(str(v) for v in row) + "\n" for row in rows), encoding="utf-8")
    return path


def generate_mock_interactions(num_users=40, num_items=30, per_user=12, seed=0):
    """Every user sees `per_user` distinct items with increasing timestamps."""
    rng = np.random.default_rng(seed)
    users, items, stamps = [], [], []
    for u in range(num_users):
        chosen = rng.choice(num_items, size=per_user, replace=False)
        users.extend([u] * per_user)
        items.extend(chosen.tolist())
        stamps.extend((u * 1000 + np.arange(per_user)).tolist())
    return np.array(users), np.array(items), np.array(stamps)


@pytest.fixture
def small_dataset():
    users, items, stamps = generate_mock_interactions()
    ds = build_dataset(users, items, stamps)
    return split(kcore_filter(ds, 2), (7, 1, 2), seed=0)


@pytest.fixture
def random_state():
    """Generic point: random rows, nonzero margins and boundary projection."""
    rng = np.random.default_rng(7)
    state = ModelState.create(6, 9, 5, user_pop=[1, 2, 3, 5, 8, 13], item_pop=[1, 1, 2, 3, 4, 6, 9, 12, 20])
    for name, value in state.params.items():
        value[...] = rng.normal(scale=0.5, size=value.shape)
    return state


@pytest.fixture
def uniform_batch():
    """Four pairs with three private negatives each; no negative equals its own positive."""
    return Batch.from_lists(
        [(0, 0), (1, 2), (2, 4), (3, 6)],
        [[1, 3, 5], [0, 7, 8], [1, 6, 8], [2, 5, 7]],
    )


@pytest.fixture
def single_negative_batch():
    return Batch.from_lists(
        [(0, 0), (1, 2), (4, 4), (5, 6)],
        [[3], [7], [1], [8]],
    )


@pytest.fixture
def initialized_state(small_dataset):
    return init_params(ModelState.from_dataset(small_dataset, 8), 0)
