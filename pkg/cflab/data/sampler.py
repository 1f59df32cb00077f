import logging
from dataclasses import dataclass

import numpy as np

from cflab.core.errors import ConfigError, SamplingError
from cflab.data.dataset import InteractionDataset

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    """Positive (user, item) pairs with a padded negative matrix.

    `negatives[p, k]` is only meaningful where `neg_mask[p, k]` is set. For
    in-batch batches the row of pair p lists the positives of every other pair;
    entries that collide with p's own positive are masked out.
    """

    users: np.ndarray
    pos_items: np.ndarray
    negatives: np.ndarray
    neg_mask: np.ndarray
    in_batch: bool = False

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.pos_items = np.asarray(self.pos_items, dtype=np.int64)
        self.negatives = np.asarray(self.negatives, dtype=np.int64).reshape(len(self.users), -1)
        self.neg_mask = np.asarray(self.neg_mask, dtype=bool).reshape(self.negatives.shape)

    def __len__(self) -> int:
        return len(self.users)

    @property
    def size(self) -> int:
        return len(self.users)

    @property
    def num_negatives(self) -> int:
        return self.negatives.shape[1]

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [(int(u), int(i)) for u, i in zip(self.users, self.pos_items)]

    def negatives_of(self, p: int) -> list[int]:
        return [int(j) for j in self.negatives[p][self.neg_mask[p]]]

    def permuted(self, order) -> "Batch":
        order = np.asarray(order)
        if self.in_batch:
            return InBatchSampler.build(self.users[order], self.pos_items[order])
        return Batch(self.users[order], self.pos_items[order], self.negatives[order], self.neg_mask[order])

    @classmethod
    def from_lists(cls, pairs, negatives) -> "Batch":
        """Build from (user, item) pairs and ragged per-pair negative lists."""
        users = [u for u, _ in pairs]
        items = [i for _, i in pairs]
        width = max((len(n) for n in negatives), default=0)
        padded = np.zeros((len(pairs), width), dtype=np.int64)
        mask = np.zeros((len(pairs), width), dtype=bool)
        for p, row in enumerate(negatives):
            padded[p, :len(row)] = row
            mask[p, :len(row)] = True
        return cls(users, items, padded, mask)

    @classmethod
    def positives_only(cls, users, items) -> "Batch":
        users = np.asarray(users, dtype=np.int64)
        empty = np.zeros((len(users), 0), dtype=np.int64)
        return cls(users, items, empty, empty.astype(bool))


class UniformSampler:
    """Draws negatives uniformly from I minus the pair's own positive."""

    def __init__(self, num_items: int, rng: np.random.Generator):
        if num_items < 2:
            raise SamplingError(f"Cannot sample negatives from {num_items} item(s)")
        self.num_items = num_items
        self.rng = rng

    def sample(self, users, pos_items, n: int | None = None) -> Batch:
        if n is None or n < 1:
            raise SamplingError(f"Uniform sampling needs n >= 1, got {n}")
        pos_items = np.asarray(pos_items, dtype=np.int64)
        draws = self.rng.integers(0, self.num_items - 1, size=(len(pos_items), n))
        negatives = draws + (draws >= pos_items[:, None])
        return Batch(users, pos_items, negatives, np.ones(negatives.shape, dtype=bool))


class InBatchSampler:
    """Uses the positives of the other pairs in the batch as negatives."""

    def __init__(self, num_items: int, rng: np.random.Generator | None = None):
        if num_items < 2:
            raise SamplingError(f"Cannot sample negatives from {num_items} item(s)")
        self.num_items = num_items
        self.rng = rng

    @staticmethod
    def build(users, pos_items) -> Batch:
        pos_items = np.asarray(pos_items, dtype=np.int64)
        size = len(pos_items)
        others = ~np.eye(size, dtype=bool)
        negatives = np.broadcast_to(pos_items, (size, size))[others].reshape(size, size - 1)
        mask = negatives != pos_items[:, None]
        return Batch(users, pos_items, negatives, mask, in_batch=True)

    def sample(self, users, pos_items, n: int | None = None) -> Batch:
        return self.build(users, pos_items)


NEGATIVE_SAMPLERS = {
    "uniform": UniformSampler,
    "in_batch": InBatchSampler,
}


def get_sampler(mode: str, num_items: int, rng: np.random.Generator):
    if mode not in NEGATIVE_SAMPLERS:
        raise ConfigError(f"Unknown negative sampling mode '{mode}', try {sorted(NEGATIVE_SAMPLERS)}")
    return NEGATIVE_SAMPLERS[mode](num_items, rng)


def sample_negatives(ds: InteractionDataset, pairs, n: int, mode: str = "uniform", seed: int = 0) -> Batch:
    """One-shot sampling over explicit (user, item) pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    sampler = get_sampler(mode, ds.num_items, np.random.default_rng(seed))
    return sampler.sample(pairs[:, 0], pairs[:, 1], n)
