import logging

import numpy as np
import scipy.sparse as sps

from cflab.core.errors import ConfigError, StatisticError
from cflab.data.dataset import InteractionDataset
from cflab.evaluation.report import MetricsReport, group_report
from cflab.models.encoders import MFEncoder
from cflab.models.state import ModelState

logger = logging.getLogger(__name__)

CUTOFFS = (10, 20, 50)


def _check_relevant(relevant) -> set:
    relevant = set(int(i) for i in relevant)
    if not relevant:
        raise StatisticError("Metric undefined for an empty relevant set")
    return relevant


def recall_at_n(ranked, relevant, n: int) -> float:
    relevant = _check_relevant(relevant)
    hits = sum(1 for item in list(ranked)[:n] if int(item) in relevant)
    return hits / len(relevant)


def ndcg_at_n(ranked, relevant, n: int) -> float:
    """Binary relevance, 1 / log2(rank + 1) discount."""
    relevant = _check_relevant(relevant)
    dcg = sum(1.0 / np.log2(rank + 2) for rank, item in enumerate(list(ranked)[:n]) if int(item) in relevant)
    idcg = sum(1.0 / np.log2(rank + 2) for rank in range(min(len(relevant), n)))
    return dcg / idcg


def _split_matrix(ds: InteractionDataset, mask: np.ndarray) -> sps.csr_matrix:
    users, items = ds.users[mask], ds.items[mask]
    return sps.csr_matrix((np.ones(len(users), dtype=bool), (users, items)), shape=(ds.num_users, ds.num_items))


class Evaluator:
    """Full ranking over all items for one evaluation split.

    Items of the other splits are scored -inf; ties rank by item id.
    """

    def __init__(self, ds: InteractionDataset, label: str = "valid", cutoffs=CUTOFFS, batch_users: int = 1024):
        if label not in ("valid", "test"):
            raise ConfigError(f"Evaluation split must be 'valid' or 'test', got '{label}'")
        if not ds.is_split:
            raise ConfigError("Dataset has no train/valid/test split")
        self.ds = ds
        self.label = label
        self.cutoffs = tuple(sorted(cutoffs))
        self.batch_users = batch_users
        target = ds.mask(label)
        self.relevant = _split_matrix(ds, target)
        self.excluded = _split_matrix(ds, ~target)
        counts = np.diff(self.relevant.indptr)
        self.users = np.flatnonzero(counts > 0)
        self.skipped = int(ds.num_users - len(self.users))

    def rank(self, user_rep: np.ndarray, item_rep: np.ndarray, users: np.ndarray, depth: int) -> np.ndarray:
        scores = user_rep[users] @ item_rep.T
        blocked = self.excluded[users].toarray()
        scores[blocked] = -np.inf
        return np.argsort(-scores, axis=1, kind="stable")[:, :depth]

    def evaluate(self, state: ModelState, encoder=None, seed: int | None = None) -> MetricsReport:
        reps = (encoder or MFEncoder()).forward(state)
        depth = self.cutoffs[-1]
        names = [f"{m}@{n}" for m in ("recall", "ndcg") for n in self.cutoffs]
        per_user = {name: np.zeros(len(self.users)) for name in names}

        for start in range(0, len(self.users), self.batch_users):
            chunk = self.users[start:start + self.batch_users]
            ranked = self.rank(reps.user, reps.item, chunk, depth)
            for offset, user in enumerate(chunk):
                relevant = self.relevant.indices[self.relevant.indptr[user]:self.relevant.indptr[user + 1]]
                row = start + offset
                for n in self.cutoffs:
                    per_user[f"recall@{n}"][row] = recall_at_n(ranked[offset], relevant, n)
                    per_user[f"ndcg@{n}"][row] = ndcg_at_n(ranked[offset], relevant, n)

        if self.skipped:
            logger.debug(f"{self.skipped} user(s) without {self.label} items skipped")
        metrics = {name: float(values.mean()) if len(values) else 0.0 for name, values in per_user.items()}
        report = MetricsReport(metrics, num_users=len(self.users), skipped_users=self.skipped,
                               seeds=[] if seed is None else [seed], users=self.users, per_user=per_user)
        return group_report(self.ds, report)
