import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from cflab.core.errors import ConfigError, DataFormatError, EmptyDatasetError

logger = logging.getLogger(__name__)

SPLIT_LABELS = ("train", "valid", "test")
TRAIN, VALID, TEST = 0, 1, 2
DATASET_VERSION = 1


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    timestamp: int = 0


@dataclass
class InteractionDataset:
    """Implicit-feedback interactions with compact ids and per-row split codes.

    `frame` holds one row per (user, item) pair with columns user, item,
    timestamp and split (0 train, 1 valid, 2 test). `user_ids` / `item_ids`
    map compact ids back to the labels found in the source file.
    """

    num_users: int
    num_items: int
    frame: pd.DataFrame
    user_ids: np.ndarray
    item_ids: np.ndarray
    is_split: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def users(self) -> np.ndarray:
        return self.frame["user"].to_numpy(dtype=np.int64)

    @property
    def items(self) -> np.ndarray:
        return self.frame["item"].to_numpy(dtype=np.int64)

    @property
    def timestamps(self) -> np.ndarray:
        return self.frame["timestamp"].to_numpy(dtype=np.int64)

    @property
    def split_codes(self) -> np.ndarray:
        return self.frame["split"].to_numpy(dtype=np.int8)

    @property
    def interactions(self) -> list[Interaction]:
        return [Interaction(int(u), int(i), int(t)) for u, i, t in zip(self.users, self.items, self.timestamps)]

    @property
    def split(self) -> list[str]:
        return [SPLIT_LABELS[c] for c in self.split_codes]

    def mask(self, label: str) -> np.ndarray:
        return self.split_codes == SPLIT_LABELS.index(label)

    def pairs(self, label: str = "train") -> tuple[np.ndarray, np.ndarray]:
        selected = self.mask(label)
        return self.users[selected], self.items[selected]

    @property
    def user_pop(self) -> np.ndarray:
        users, _ = self.pairs("train")
        return np.bincount(users, minlength=self.num_users).astype(np.int64)

    @property
    def item_pop(self) -> np.ndarray:
        _, items = self.pairs("train")
        return np.bincount(items, minlength=self.num_items).astype(np.int64)

    def with_frame(self, frame: pd.DataFrame, is_split: bool) -> "InteractionDataset":
        return InteractionDataset(
            num_users=self.num_users,
            num_items=self.num_items,
            frame=frame.reset_index(drop=True),
            user_ids=self.user_ids,
            item_ids=self.item_ids,
            is_split=is_split,
            meta=dict(self.meta),
        )


def build_dataset(raw_users, raw_items, timestamps=None, meta: dict | None = None) -> InteractionDataset:
    """Compact ids by first appearance and collapse duplicate pairs to their last interaction."""
    raw_users = np.asarray(raw_users, dtype=np.int64)
    raw_items = np.asarray(raw_items, dtype=np.int64)
    if timestamps is None:
        timestamps = np.zeros(len(raw_users), dtype=np.int64)
    timestamps = np.asarray(timestamps, dtype=np.int64)

    if len(raw_users) == 0:
        raise EmptyDatasetError("no interactions to build a dataset from")

    user_codes, user_ids = pd.factorize(raw_users, sort=False)
    item_codes, item_ids = pd.factorize(raw_items, sort=False)

    frame = pd.DataFrame({
        "user": user_codes.astype(np.int64),
        "item": item_codes.astype(np.int64),
        "timestamp": timestamps,
        "row": np.arange(len(raw_users)),
    })

    # Largest timestamp wins; equal timestamps keep the later line.
    ordered = frame.sort_values(["timestamp", "row"], kind="mergesort")
    kept = ordered.drop_duplicates(["user", "item"], keep="last").sort_values("row", kind="mergesort")
    dropped = len(frame) - len(kept)
    if dropped:
        logger.info(f"Collapsed {dropped} duplicate (user, item) records")

    kept = kept.drop(columns="row")
    kept["split"] = np.int8(TRAIN)

    return InteractionDataset(
        num_users=len(user_ids),
        num_items=len(item_ids),
        frame=kept.reset_index(drop=True),
        user_ids=np.asarray(user_ids, dtype=np.int64),
        item_ids=np.asarray(item_ids, dtype=np.int64),
        meta=dict(meta or {}),
    )


def ingest(path, format: str = "tsv") -> InteractionDataset:
    """Read a `user \\t item [\\t timestamp]` log; `#` lines and blank lines are skipped."""
    if format != "tsv":
        raise ConfigError(f"Unsupported interaction format: {format}")

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Interaction file not found: {path}")

    rows = []
    with open(path, "rb") as f:
        for lineno, chunk in enumerate(f, start=1):
            try:
                text = chunk.decode("utf-8").strip()
            except UnicodeDecodeError as e:
                raise DataFormatError(path, lineno, f"invalid UTF-8 at byte {e.start}")
            if not text or text.startswith("#"):
                continue
            fields = text.split("\t")
            if len(fields) not in (2, 3):
                raise DataFormatError(path, lineno, f"expected 2 or 3 tab-separated fields, got {len(fields)}")
            try:
                values = [int(value) for value in fields]
            except ValueError:
                raise DataFormatError(path, lineno, f"non-integer field in '{text}'")
            if values[0] < 0 or values[1] < 0:
                raise DataFormatError(path, lineno, "negative user or item id")
            if len(values) == 2:
                values.append(0)
            rows.append(values)

    if not rows:
        raise EmptyDatasetError(f"{path}: no interactions")

    raw = np.asarray(rows, dtype=np.int64)
    ds = build_dataset(raw[:, 0], raw[:, 1], raw[:, 2], meta={"source": str(path)})
    logger.info(f"Ingested {len(ds)} interactions ({ds.num_users} users, {ds.num_items} items) from {path}")
    return ds


def _recompact(ds: InteractionDataset, frame: pd.DataFrame) -> InteractionDataset:
    old_users, user_codes = np.unique(frame["user"].to_numpy(), return_inverse=True)
    old_items, item_codes = np.unique(frame["item"].to_numpy(), return_inverse=True)
    frame = frame.assign(user=user_codes.astype(np.int64), item=item_codes.astype(np.int64))
    return InteractionDataset(
        num_users=len(old_users),
        num_items=len(old_items),
        frame=frame.reset_index(drop=True),
        user_ids=ds.user_ids[old_users],
        item_ids=ds.item_ids[old_items],
        is_split=False,
        meta=dict(ds.meta),
    )


def kcore_filter(ds: InteractionDataset, k: int) -> InteractionDataset:
    """Peel users/items with fewer than k interactions until nothing changes.

    Split labels are reset; run `split` afterwards.
    """
    if k < 1:
        raise ConfigError(f"k-core needs k >= 1, got {k}")

    frame = ds.frame[["user", "item", "timestamp"]]
    rounds = 0
    while len(frame):
        user_deg = frame["user"].map(frame["user"].value_counts())
        item_deg = frame["item"].map(frame["item"].value_counts())
        keep = (user_deg >= k) & (item_deg >= k)
        if keep.all():
            break
        frame = frame[keep]
        rounds += 1

    frame = frame.assign(split=np.int8(TRAIN))
    result = _recompact(ds, frame)
    result.meta["k_core"] = int(k)

    if len(result) == 0:
        logger.warning(f"{k}-core filtering left an empty dataset")
    else:
        logger.info(
            f"{k}-core: {len(ds)} -> {len(result)} interactions, "
            f"{result.num_users} users, {result.num_items} items ({rounds} peeling rounds)"
        )
    return result


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(values + 0.5).astype(np.int64)


def split(ds: InteractionDataset, ratio: tuple[int, int, int] = (7, 1, 2), seed: int = 0) -> InteractionDataset:
    """Per-user chronological train/valid/test split.

    Users with fewer than 3 interactions keep everything in train. The seed
    only orders interactions that share a timestamp.
    """
    total = float(sum(ratio))
    if total <= 0 or any(part < 0 for part in ratio):
        raise ConfigError(f"Invalid split ratio: {ratio}")
    if len(ds) == 0:
        return ds.with_frame(ds.frame, is_split=True)

    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(len(ds))

    frame = ds.frame[["user", "item", "timestamp"]].copy()
    order = np.lexsort((tiebreak, frame["timestamp"].to_numpy(), frame["user"].to_numpy()))
    frame = frame.iloc[order].reset_index(drop=True)

    by_user = frame.groupby("user", sort=False)
    position = by_user.cumcount().to_numpy()
    count = by_user["item"].transform("size").to_numpy()

    n_valid = _round_half_up(count * ratio[1] / total) if ratio[1] > 0 else np.zeros_like(count)
    n_test = _round_half_up(count * ratio[2] / total) if ratio[2] > 0 else np.zeros_like(count)
    if ratio[1] > 0:
        n_valid = np.maximum(n_valid, 1)
    if ratio[2] > 0:
        n_test = np.maximum(n_test, 1)
    # Leave at least one train interaction per user.
    n_test = np.minimum(n_test, np.maximum(count - n_valid - 1, 0))
    n_valid = np.minimum(n_valid, count - n_test - 1)
    n_train = count - n_valid - n_test

    codes = np.full(len(frame), TRAIN, dtype=np.int8)
    codes[position >= n_train] = VALID
    codes[position >= n_train + n_valid] = TEST
    codes[count < 3] = TRAIN
    frame["split"] = codes

    result = ds.with_frame(frame, is_split=True)
    result.meta.update({"split_ratio": list(ratio), "split_seed": int(seed)})

    sizes = np.bincount(codes, minlength=3)
    logger.info(f"Split {len(frame)} interactions: train={sizes[TRAIN]}, valid={sizes[VALID]}, test={sizes[TEST]}")
    return result


def save_dataset(ds: InteractionDataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": DATASET_VERSION,
        "num_users": ds.num_users,
        "num_items": ds.num_items,
        "is_split": ds.is_split,
        "extra": ds.meta,
    }
    with open(path, "wb") as f:
        np.savez(
            f,
            user=ds.users,
            item=ds.items,
            timestamp=ds.timestamps,
            split=ds.split_codes,
            user_ids=ds.user_ids,
            item_ids=ds.item_ids,
            meta=np.array(json.dumps(meta, sort_keys=True)),
        )
    return path


def load_dataset(path) -> InteractionDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset artifact not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        if meta.get("version") != DATASET_VERSION:
            raise DataFormatError(path, 0, f"unsupported dataset version {meta.get('version')}")
        frame = pd.DataFrame({
            "user": archive["user"].astype(np.int64),
            "item": archive["item"].astype(np.int64),
            "timestamp": archive["timestamp"].astype(np.int64),
            "split": archive["split"].astype(np.int8),
        })
        return InteractionDataset(
            num_users=int(meta["num_users"]),
            num_items=int(meta["num_items"]),
            frame=frame,
            user_ids=archive["user_ids"].astype(np.int64),
            item_ids=archive["item_ids"].astype(np.int64),
            is_split=bool(meta["is_split"]),
            meta=meta.get("extra", {}),
        )
