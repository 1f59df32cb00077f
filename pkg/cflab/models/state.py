import logging
from dataclasses import dataclass

import numpy as np

from cflab.core.errors import ConfigError
from cflab.data.dataset import InteractionDataset

logger = logging.getLogger(__name__)

PARAM_NAMES = (
    "user_emb",
    "item_emb",
    "user_margin",
    "item_margin",
    "boundary_proj",
    "pop_user_emb",
    "pop_item_emb",
)
TABLE_NAMES = ("user_emb", "item_emb", "pop_user_emb", "pop_item_emb")
MARGIN_NAMES = ("user_margin", "item_margin")


def popularity_buckets(popularity) -> np.ndarray:
    """floor(log2(p)) buckets; popularity 0 shares bucket 0 with popularity 1."""
    popularity = np.asarray(popularity, dtype=np.float64)
    return np.floor(np.log2(np.maximum(popularity, 1.0))).astype(np.int64)


@dataclass
class ModelState:
    """Trainable tensors plus the fixed train popularity they are indexed by.

    Margins are stored unconstrained; losses map them through softplus.
    """

    params: dict[str, np.ndarray]
    user_pop: np.ndarray
    item_pop: np.ndarray
    user_bucket: np.ndarray
    item_bucket: np.ndarray

    @classmethod
    def create(cls, num_users: int, num_items: int, dim: int, user_pop=None, item_pop=None) -> "ModelState":
        if dim < 1:
            raise ConfigError(f"Embedding dimension must be >= 1, got {dim}")
        user_pop = np.ones(num_users, dtype=np.int64) if user_pop is None else np.asarray(user_pop, dtype=np.int64)
        item_pop = np.ones(num_items, dtype=np.int64) if item_pop is None else np.asarray(item_pop, dtype=np.int64)
        if len(user_pop) != num_users or len(item_pop) != num_items:
            raise ConfigError("Popularity vectors must match the number of users and items")

        user_bucket = popularity_buckets(user_pop)
        item_bucket = popularity_buckets(item_pop)
        params = {
            "user_emb": np.zeros((num_users, dim)),
            "item_emb": np.zeros((num_items, dim)),
            "user_margin": np.zeros(num_users),
            "item_margin": np.zeros(num_items),
            "boundary_proj": np.zeros(dim),
            "pop_user_emb": np.zeros((int(user_bucket.max(initial=0)) + 1, dim)),
            "pop_item_emb": np.zeros((int(item_bucket.max(initial=0)) + 1, dim)),
        }
        return cls(params, user_pop, item_pop, user_bucket, item_bucket)

    @classmethod
    def from_dataset(cls, ds: InteractionDataset, dim: int) -> "ModelState":
        return cls.create(ds.num_users, ds.num_items, dim, ds.user_pop, ds.item_pop)

    @property
    def num_users(self) -> int:
        return self.params["user_emb"].shape[0]

    @property
    def num_items(self) -> int:
        return self.params["item_emb"].shape[0]

    @property
    def dim(self) -> int:
        return self.params["user_emb"].shape[1]

    @property
    def user_emb(self) -> np.ndarray:
        return self.params["user_emb"]

    @property
    def item_emb(self) -> np.ndarray:
        return self.params["item_emb"]

    def is_finite(self) -> bool:
        return all(np.isfinite(value).all() for value in self.params.values())

    def copy(self) -> "ModelState":
        return ModelState(
            {name: value.copy() for name, value in self.params.items()},
            self.user_pop.copy(),
            self.item_pop.copy(),
            self.user_bucket.copy(),
            self.item_bucket.copy(),
        )

    def assign(self, params: dict[str, np.ndarray]):
        """Overwrite parameters in place, keeping shapes."""
        for name, value in params.items():
            if name not in self.params:
                raise KeyError(f"Unknown parameter '{name}'")
            if self.params[name].shape != value.shape:
                raise ValueError(f"Shape mismatch for '{name}': {self.params[name].shape} vs {value.shape}")
            self.params[name][...] = value
