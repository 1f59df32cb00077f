import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from cflab.data.dataset import InteractionDataset
from cflab.losses.margins import effective_margins
from cflab.models.state import ModelState

logger = logging.getLogger(__name__)

GROUP_NAMES = ("Pop", "Unpop")


@dataclass
class MetricsReport:
    """Mean ranking metrics over evaluated users, optionally split into popularity groups.

    `per_user` holds one array per metric aligned with `users`; it is not serialized.
    """

    metrics: dict[str, float]
    groups: dict[str, dict[str, float]] = field(default_factory=dict)
    group_sizes: dict[str, int] = field(default_factory=dict)
    num_users: int = 0
    skipped_users: int = 0
    seeds: list[int] = field(default_factory=list)
    users: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    per_user: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, metric: str) -> float:
        return self.metrics[metric]

    def to_dict(self) -> dict:
        return {
            "metrics": {k: float(v) for k, v in self.metrics.items()},
            "groups": {g: {k: float(v) for k, v in m.items()} for g, m in self.groups.items()},
            "group_sizes": {g: int(n) for g, n in self.group_sizes.items()},
            "num_users": int(self.num_users),
            "skipped_users": int(self.skipped_users),
            "seeds": [int(s) for s in self.seeds],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(
            metrics=dict(data.get("metrics", {})),
            groups={g: dict(m) for g, m in data.get("groups", {}).items()},
            group_sizes=dict(data.get("group_sizes", {})),
            num_users=int(data.get("num_users", 0)),
            skipped_users=int(data.get("skipped_users", 0)),
            seeds=list(data.get("seeds", [])),
        )

    @classmethod
    def mean(cls, reports: list["MetricsReport"]) -> "MetricsReport":
        """Per-seed average of metrics and group metrics."""
        if not reports:
            raise ValueError("Cannot average an empty list of reports")
        metrics = {k: float(np.mean([r.metrics[k] for r in reports])) for k in reports[0].metrics}
        groups = {
            g: {k: float(np.mean([r.groups[g][k] for r in reports])) for k in reports[0].groups[g]}
            for g in reports[0].groups
        }
        seeds = [s for r in reports for s in r.seeds]
        return cls(metrics, groups, dict(reports[0].group_sizes), reports[0].num_users,
                   reports[0].skipped_users, seeds)


def group_report(ds: InteractionDataset, report: MetricsReport, split_ratio: tuple[int, int] = (2, 8)) -> MetricsReport:
    """Split evaluated users into Pop / Unpop by train popularity, ties broken by user id."""
    users = report.users
    n = len(users)
    popularity = ds.user_pop[users]
    order = np.lexsort((users, -popularity))
    n_pop = int(np.floor(n * split_ratio[0] / sum(split_ratio) + 0.5))

    members = {"Pop": order[:n_pop], "Unpop": order[n_pop:]}
    groups, sizes = {}, {}
    for name in GROUP_NAMES:
        index = members[name]
        sizes[name] = int(len(index))
        groups[name] = {
            metric: float(values[index].mean()) if len(index) else 0.0
            for metric, values in report.per_user.items()
        }
    logger.debug(f"Popularity groups: {sizes}")
    return MetricsReport(report.metrics, groups, sizes, report.num_users, report.skipped_users,
                         list(report.seeds), users, report.per_user)


@dataclass
class MarginProfile:
    frame: pd.DataFrame
    user_spearman: float
    item_spearman: float

    def to_dict(self) -> dict:
        return {"user_spearman": self.user_spearman, "item_spearman": self.item_spearman}


def _spearman(popularity: np.ndarray, margin: np.ndarray) -> float:
    if len(popularity) < 2:
        return 0.0
    rho, _ = spearmanr(popularity, margin)
    # Constant vectors have no rank correlation.
    return 0.0 if np.isnan(rho) else float(rho)


def margin_popularity_profile(state: ModelState, ds: Optional[InteractionDataset] = None,
                              path: Optional[str | Path] = None) -> MarginProfile:
    """(popularity, softplus margin) per id and the Spearman correlation, users and items separately."""
    user_margin, item_margin = effective_margins(state)
    user_pop = ds.user_pop if ds is not None else state.user_pop
    item_pop = ds.item_pop if ds is not None else state.item_pop

    frame = pd.concat([
        pd.DataFrame({"kind": "user", "id": np.arange(len(user_pop)), "popularity": user_pop, "margin": user_margin}),
        pd.DataFrame({"kind": "item", "id": np.arange(len(item_pop)), "popularity": item_pop, "margin": item_margin}),
    ], ignore_index=True)
    profile = MarginProfile(frame, _spearman(user_pop, user_margin), _spearman(item_pop, item_margin))

    if path is not None:
        frame.to_csv(path, index=False, float_format="%.10g")
    logger.info(f"Margin/popularity Spearman: users={profile.user_spearman:.4f} items={profile.item_spearman:.4f}")
    return profile


def relative_gain(base: float, other: float) -> Optional[float]:
    if base == 0:
        return None
    return (other - base) / base


def compare_reports(base: MetricsReport, other: MetricsReport, metric: str = "ndcg@20") -> dict:
    result = {
        "base": float(base.metrics[metric]),
        "other": float(other.metrics[metric]),
        "relative_gain": relative_gain(base.metrics[metric], other.metrics[metric]),
    }
    for group in GROUP_NAMES:
        if group in base.groups and group in other.groups:
            result[group] = relative_gain(base.groups[group][metric], other.groups[group][metric])
    return result
