import logging

import numpy as np

from cflab.core.errors import StatisticError
from cflab.data.dataset import InteractionDataset

logger = logging.getLogger(__name__)

# Gini_item / Gini_user after preprocessing, as published for the benchmark datasets.
REFERENCE_GINI_RATIOS = {
    "beauty": 2.096,
    "gowalla": 0.518,
    "yelp2018": 1.090,
}


def gini_index(counts) -> float:
    """G = sum_i (2i - n - 1) x_i / (n sum x) over ascending counts, i 1-based."""
    x = np.sort(np.asarray(counts, dtype=np.float64).ravel())
    if x.size == 0:
        raise StatisticError("Gini index of an empty count vector is undefined")
    if np.any(x < 0):
        raise StatisticError("Gini index needs nonnegative counts")
    total = x.sum()
    if total <= 0:
        raise StatisticError("Gini index of all-zero counts is undefined")
    n = x.size
    index = np.arange(1, n + 1, dtype=np.float64)
    return float(np.sum((2.0 * index - n - 1.0) * x) / (n * total))


def dataset_stats(ds: InteractionDataset) -> dict:
    """Statistics of the prepared dataset over all its interactions."""
    user_counts = np.bincount(ds.users, minlength=ds.num_users)
    item_counts = np.bincount(ds.items, minlength=ds.num_items)
    n = len(ds)
    cells = ds.num_users * ds.num_items

    gini_user = gini_index(user_counts) if n else None
    gini_item = gini_index(item_counts) if n else None
    if gini_user:
        gini_ratio = gini_item / gini_user
    else:
        gini_ratio = None
        if n:
            logger.warning("User Gini index is 0; gini_ratio left undefined")

    return {
        "num_users": int(ds.num_users),
        "num_items": int(ds.num_items),
        "num_interactions": int(n),
        "density": float(n / cells) if cells else 0.0,
        "gini_user": gini_user,
        "gini_item": gini_item,
        "gini_ratio": gini_ratio,
    }


def suggest_gamma_ratio(stats: dict) -> float | None:
    """gamma1 / gamma2 heuristic: item-skewed data wants the user uniformity weighted up."""
    return stats.get("gini_ratio")


def compare_to_reference(stats: dict, name: str, band: float = 0.10) -> dict | None:
    """Informational check of a computed Gini ratio against the published value."""
    reference = REFERENCE_GINI_RATIOS.get(name.lower())
    if reference is None or stats.get("gini_ratio") is None:
        return None
    ratio = stats["gini_ratio"]
    deviation = abs(ratio - reference) / reference
    within = deviation <= band
    if not within:
        logger.warning(f"{name}: Gini ratio {ratio:.3f} differs from reference {reference:.3f} by {deviation:.1%}")
    return {"dataset": name, "gini_ratio": ratio, "reference": reference, "deviation": deviation, "within_band": within}
