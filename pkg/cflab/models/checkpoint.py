import json
import logging
import os
from pathlib import Path

import numpy as np

from cflab.core.errors import DataFormatError
from cflab.models.state import ModelState

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
_SEP = "__"


def save_checkpoint(path, groups: dict[str, dict[str, np.ndarray]], meta: dict) -> Path:
    """Write named groups of arrays plus a JSON meta record to one .npz file.

    The file is written next to its target and moved into place.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        f"{group}{_SEP}{name}": np.ascontiguousarray(value)
        for group, tensors in groups.items()
        for name, value in tensors.items()
    }
    record = dict(meta)
    record["version"] = CHECKPOINT_VERSION
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        np.savez(f, meta=np.array(json.dumps(record, sort_keys=True)), **arrays)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    groups: dict[str, dict[str, np.ndarray]] = {}
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise DataFormatError(path, 0, f"unsupported checkpoint version {meta.get('version')}")
        for key in archive.files:
            if key == "meta":
                continue
            group, _, name = key.partition(_SEP)
            groups.setdefault(group, {})[name] = archive[key].copy()
    return groups, meta


def state_groups(state: ModelState, prefix: str = "params") -> dict[str, dict[str, np.ndarray]]:
    return {
        prefix: dict(state.params),
        "popularity": {
            "user_pop": state.user_pop,
            "item_pop": state.item_pop,
            "user_bucket": state.user_bucket,
            "item_bucket": state.item_bucket,
        },
    }


def state_from_groups(groups: dict, prefix: str = "params") -> ModelState:
    pop = groups["popularity"]
    return ModelState(
        {name: value.astype(np.float64) for name, value in groups[prefix].items()},
        pop["user_pop"],
        pop["item_pop"],
        pop["user_bucket"],
        pop["item_bucket"],
    )


def save_state(path, state: ModelState, meta: dict | None = None) -> Path:
    return save_checkpoint(path, state_groups(state), meta or {})


def load_state(path) -> ModelState:
    groups, _ = load_checkpoint(path)
    return state_from_groups(groups)
