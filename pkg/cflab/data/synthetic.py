import logging
from dataclasses import dataclass, fields

import numpy as np

from cflab.core.errors import ConfigError
from cflab.data.dataset import InteractionDataset, build_dataset

logger = logging.getLogger(__name__)


@dataclass
class SyntheticSpec:
    """Zipf-popularity, latent-factor interaction generator settings."""

    exponent: float = 1.0
    users: int = 1000
    items: int = 1500
    interactions: int = 100_000
    factors: int = 8
    user_exponent: float = 0.5
    affinity: float = 2.0
    min_per_user: int = 15

    def label(self) -> str:
        return f"zipf:{self.exponent},users={self.users},items={self.items},interactions={self.interactions}"


def parse_synthetic_spec(text: str) -> SyntheticSpec:
    """Parse `zipf:1.0,users=1000,items=1500[,key=value...]`."""
    head, _, rest = text.partition(",")
    family, _, exponent = head.partition(":")
    if family.strip().lower() != "zipf" or not exponent:
        raise ConfigError(f"Synthetic spec must start with 'zipf:<exponent>', got '{text}'")

    known = {f.name: f.type for f in fields(SyntheticSpec)}
    values = {"exponent": float(exponent)}
    for part in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep or key not in known or key == "exponent":
            raise ConfigError(f"Unknown synthetic option '{part}' in '{text}'")
        try:
            values[key] = float(value) if known[key] in (float, "float") else int(value)
        except ValueError:
            raise ConfigError(f"Bad value for synthetic option '{key}': {value}")

    spec = SyntheticSpec(**values)
    if spec.users < 1 or spec.items < 2 or spec.factors < 1:
        raise ConfigError(f"Synthetic spec needs users >= 1, items >= 2, factors >= 1: {spec}")
    return spec


def _user_activity(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    cap = max(1, spec.items // 2)
    floor = min(spec.min_per_user, cap)
    rank = rng.permutation(spec.users) + 1.0
    weight = rank ** -spec.user_exponent
    spare = max(spec.interactions - floor * spec.users, 0)
    counts = floor + np.floor(spare * weight / weight.sum()).astype(np.int64)
    return np.minimum(counts, cap)


def generate_synthetic(spec: SyntheticSpec | str, seed: int = 0) -> InteractionDataset:
    """Sample a skewed implicit-feedback dataset.

    Item popularity follows a Zipf law, user activity a milder one. Each user
    draws items without replacement (Gumbel top-k) with logits
    log(popularity) + affinity * p_u.q_i. Timestamps increase per user.
    """
    if isinstance(spec, str):
        spec = parse_synthetic_spec(spec)
    rng = np.random.default_rng(seed)

    item_rank = rng.permutation(spec.items) + 1.0
    log_pop = -spec.exponent * np.log(item_rank)
    counts = _user_activity(spec, rng)

    user_factors = rng.normal(size=(spec.users, spec.factors)) / np.sqrt(spec.factors)
    item_factors = rng.normal(size=(spec.items, spec.factors))

    users, items, stamps = [], [], []
    clock = 0
    for u in range(spec.users):
        n_u = int(counts[u])
        keys = log_pop + spec.affinity * (item_factors @ user_factors[u]) + rng.gumbel(size=spec.items)
        chosen = np.argpartition(-keys, n_u - 1)[:n_u]
        chosen = chosen[rng.permutation(n_u)]
        gaps = rng.integers(1, 3600, size=n_u)
        users.append(np.full(n_u, u, dtype=np.int64))
        items.append(chosen.astype(np.int64))
        stamps.append(clock + np.cumsum(gaps))
        clock += int(gaps.sum())

    ds = build_dataset(
        np.concatenate(users),
        np.concatenate(items),
        np.concatenate(stamps),
        meta={"source": spec.label(), "seed": int(seed)},
    )
    logger.info(f"Generated synthetic dataset {spec.label()}: {len(ds)} interactions")
    return ds
