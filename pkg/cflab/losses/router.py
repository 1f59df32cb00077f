import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from cflab.core.config import LossConfig, TrainConfig
from cflab.core.errors import ConfigError
from cflab.data.sampler import Batch
from cflab.losses.alignment import directau, mawu
from cflab.losses.base import LossEvaluation
from cflab.losses.pairwise import bpr, cml, sml
from cflab.losses.pointwise import bce, mcl, uib
from cflab.losses.setwise import bc, ccl, ssm
from cflab.models.encoders import MFEncoder
from cflab.models.state import ModelState

logger = logging.getLogger(__name__)

LOSS_FUNCTIONS = {
    "BCE": bce,
    "MCL": mcl,
    "UIB": uib,
    "BPR": bpr,
    "CML": cml,
    "SML": sml,
    "CCL": ccl,
    "SSM": ssm,
    "BC": bc,
    "DirectAU": directau,
    "MAWU": mawu,
}

LOSS_FAMILIES = {
    "BCE": "pointwise",
    "MCL": "pointwise",
    "UIB": "pointwise",
    "BPR": "pairwise",
    "CML": "pairwise",
    "SML": "pairwise",
    "CCL": "setwise",
    "SSM": "setwise",
    "BC": "setwise",
    "DirectAU": "alignment_uniformity",
    "MAWU": "alignment_uniformity",
}

# Losses whose default negatives are the other positives of the batch.
IN_BATCH_DEFAULT = {"SSM", "BC"}


@dataclass(frozen=True)
class NegativePlan:
    """How the trainer should fill a batch: mode None means positives only."""

    mode: Optional[str]
    count: int = 0


class LossRouter:
    """
    Loss router that:
    - Dispatches a batch to the loss named by LossConfig.kind
    - Knows each loss family and the negatives it needs
    - Maps encoder-output gradients back onto the parameter tables
    """

    def __init__(self, config: LossConfig, encoder=None):
        if config.kind not in LOSS_FUNCTIONS:
            raise ConfigError(f"Unknown loss kind '{config.kind}', try {sorted(LOSS_FUNCTIONS)}")
        self.config = config
        self.encoder = encoder if encoder is not None else MFEncoder()
        self.loss_fn = LOSS_FUNCTIONS[config.kind]

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def family(self) -> str:
        return LOSS_FAMILIES[self.config.kind]

    def negative_plan(self, train_config: TrainConfig | None = None) -> NegativePlan:
        train_config = train_config or TrainConfig()
        family = self.family
        if family == "alignment_uniformity":
            return NegativePlan(None)
        if family == "pairwise":
            if train_config.negative_mode == "in_batch":
                logger.warning(f"{self.kind} is pairwise; ignoring negative_mode=in_batch")
            return NegativePlan("uniform", 1)

        mode = train_config.negative_mode
        if mode == "auto":
            mode = "in_batch" if self.kind in IN_BATCH_DEFAULT else "uniform"
        return NegativePlan(mode, train_config.num_negatives if mode == "uniform" else 0)

    def evaluate(self, state: ModelState, batch: Batch) -> LossEvaluation:
        reps = self.encoder.forward(state)
        evaluation = self.loss_fn(state, batch, self.config, reps)
        if isinstance(self.encoder, MFEncoder):
            return evaluation

        grads = evaluation.grads
        if "user_emb" not in grads and "item_emb" not in grads:
            return evaluation
        grad_user = grads.get("user_emb", np.zeros_like(reps.user))
        grad_item = grads.get("item_emb", np.zeros_like(reps.item))
        grads["user_emb"], grads["item_emb"] = self.encoder.backward(grad_user, grad_item)
        if self.encoder.dense_backward:
            evaluation.rows["user_emb"] = None
            evaluation.rows["item_emb"] = None
        else:
            for name in ("user_emb", "item_emb"):
                evaluation.rows.setdefault(name, np.zeros(0, dtype=np.int64))
        return evaluation

    def value(self, state: ModelState, batch: Batch) -> float:
        return self.evaluate(state, batch).value


def compute_loss(config: LossConfig, state: ModelState, batch: Batch, encoder=None) -> LossEvaluation:
    return LossRouter(config, encoder).evaluate(state, batch)
