import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from cflab.core.config import TrainConfig
from cflab.data.dataset import InteractionDataset
from cflab.models.state import ModelState

logger = logging.getLogger(__name__)


@dataclass
class Representations:
    """Encoder output: one row per user and per item."""

    user: np.ndarray
    item: np.ndarray


def _check_ids(ids, bound: int, kind: str) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= bound):
        raise IndexError(f"{kind} id out of range [0, {bound})")
    return ids


def mf_forward(state: ModelState, users, items) -> tuple[np.ndarray, np.ndarray]:
    """Plain table lookup."""
    users = _check_ids(users, state.num_users, "user")
    items = _check_ids(items, state.num_items, "item")
    return state.user_emb[users], state.item_emb[items]


class NormalizedAdjacency:
    """Symmetric D^-1/2 A D^-1/2 over the user-item bipartite graph, no self loops.

    Nodes 0..|U|-1 are users, |U|..|U|+|I|-1 are items. Degree-0 nodes get a
    normalization factor of 0.
    """

    def __init__(self, matrix: sps.csr_matrix, num_users: int, num_items: int):
        self.matrix = matrix
        self.num_users = num_users
        self.num_items = num_items

    @classmethod
    def from_interactions(cls, users, items, num_users: int, num_items: int) -> "NormalizedAdjacency":
        pairs = np.unique(np.stack([np.asarray(users, dtype=np.int64), np.asarray(items, dtype=np.int64)], axis=1), axis=0)
        ones = np.ones(len(pairs))
        R = sps.coo_matrix((ones, (pairs[:, 0], pairs[:, 1])), shape=(num_users, num_items))

        zero_uu = sps.csr_matrix((num_users, num_users))
        zero_ii = sps.csr_matrix((num_items, num_items))
        A = sps.bmat([[zero_uu, R], [R.T, zero_ii]], format="coo")

        degree = np.asarray(A.sum(axis=1)).ravel()
        inv_sqrt = np.zeros_like(degree)
        connected = degree > 0
        inv_sqrt[connected] = 1.0 / np.sqrt(degree[connected])

        # Elementwise product keeps (u, i) and (i, u) bit-identical.
        data = inv_sqrt[A.row] * inv_sqrt[A.col]
        matrix = sps.csr_matrix((data, (A.row, A.col)), shape=A.shape)

        isolated = int((~connected).sum())
        if isolated:
            logger.debug(f"Adjacency has {isolated} isolated node(s)")
        return cls(matrix, num_users, num_items)

    @classmethod
    def from_dataset(cls, ds: InteractionDataset) -> "NormalizedAdjacency":
        users, items = ds.pairs("train")
        return cls.from_interactions(users, items, ds.num_users, ds.num_items)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def propagate(self, stacked: np.ndarray, layers: int) -> np.ndarray:
        """mean(E, AE, ..., A^L E); A is symmetric so this is also the backward map."""
        current = stacked
        total = stacked.copy()
        for _ in range(layers):
            current = self.matrix @ current
            total += current
        return total / (layers + 1)


def lightgcn_forward(state: ModelState, adj: NormalizedAdjacency, layers: int) -> tuple[np.ndarray, np.ndarray]:
    if layers < 0:
        raise ValueError(f"layers must be >= 0, got {layers}")
    stacked = np.vstack([state.user_emb, state.item_emb])
    out = adj.propagate(stacked, layers)
    return out[:state.num_users], out[state.num_users:]


def lightgcn_backward(adj: NormalizedAdjacency, layers: int, grad_user: np.ndarray, grad_item: np.ndarray):
    out = adj.propagate(np.vstack([grad_user, grad_item]), layers)
    return out[:adj.num_users], out[adj.num_users:]


class MFEncoder:
    name = "MF"

    def forward(self, state: ModelState) -> Representations:
        return Representations(state.user_emb, state.item_emb)

    def backward(self, grad_user: np.ndarray, grad_item: np.ndarray):
        return grad_user, grad_item

    @property
    def dense_backward(self) -> bool:
        return False


class LightGCNEncoder:
    name = "LightGCN"

    def __init__(self, adj: NormalizedAdjacency, layers: int = 2):
        self.adj = adj
        self.layers = layers

    def forward(self, state: ModelState) -> Representations:
        user, item = lightgcn_forward(state, self.adj, self.layers)
        return Representations(user, item)

    def backward(self, grad_user: np.ndarray, grad_item: np.ndarray):
        return lightgcn_backward(self.adj, self.layers, grad_user, grad_item)

    @property
    def dense_backward(self) -> bool:
        return self.layers > 0


def build_encoder(config: TrainConfig, ds: InteractionDataset):
    if config.encoder == "LightGCN":
        adj = NormalizedAdjacency.from_dataset(ds)
        logger.info(f"LightGCN encoder: {config.layers} layers, {adj.matrix.nnz} adjacency nonzeros")
        return LightGCNEncoder(adj, config.layers)
    return MFEncoder()
