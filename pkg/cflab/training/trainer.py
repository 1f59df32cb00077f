import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from tqdm import tqdm

from cflab.core.config import TrainConfig
from cflab.core.errors import ConfigError, DivergenceError, EmptyDatasetError, OptimizerError
from cflab.data.dataset import InteractionDataset
from cflab.data.sampler import Batch, get_sampler
from cflab.evaluation.metrics import Evaluator
from cflab.losses.router import LossRouter
from cflab.models.checkpoint import load_checkpoint, save_checkpoint, state_groups
from cflab.models.encoders import MFEncoder, build_encoder
from cflab.models.state import ModelState
from cflab.optim.adam import Adam, init_params

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    best_state: ModelState
    history: list[dict]
    best_epoch: int
    best_metric: float
    initial_metric: float
    diverged: bool = False
    stopped_reason: str = "max_epochs"
    final_state: Optional[ModelState] = field(default=None, repr=False)

    def summary(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "best_metric": self.best_metric,
            "initial_metric": self.initial_metric,
            "epochs": len(self.history),
            "diverged": self.diverged,
            "stopped_reason": self.stopped_reason,
        }


def score(state: ModelState, user: int, encoder=None) -> np.ndarray:
    """Raw inner products f(u).f(i) over all items; margins play no part."""
    if not 0 <= user < state.num_users:
        raise IndexError(f"user id {user} out of range [0, {state.num_users})")
    reps = (encoder or MFEncoder()).forward(state)
    return reps.item @ reps.user[user]


class Trainer:
    """
    Mini-batch trainer that:
    - Shuffles the train pairs each epoch and batches them by positive pair
    - Fills batches with the negatives the loss router asks for
    - Tracks validation NDCG@20 (or eval_metric) with patience-based early stopping
    - Checkpoints every epoch so a run can resume where it stopped
    """

    def __init__(self, ds: InteractionDataset, config: TrainConfig, encoder=None,
                 checkpoint_path: Optional[str | Path] = None, history_path: Optional[str | Path] = None):
        if not ds.is_split:
            raise ConfigError("Training needs a split dataset")
        self.ds = ds
        self.config = config
        self.train_users, self.train_items = ds.pairs("train")
        if len(self.train_users) == 0:
            raise EmptyDatasetError("Dataset has no train interactions")

        self.encoder = encoder if encoder is not None else build_encoder(config, ds)
        self.router = LossRouter(config.loss, self.encoder)
        self.plan = self.router.negative_plan(config)

        init_seq, shuffle_seq, sample_seq = np.random.SeedSequence(config.seed).spawn(3)
        self.state = init_params(ModelState.from_dataset(ds, config.dim), init_seq, config.loss.margin_init)
        self.shuffle_rng = np.random.default_rng(shuffle_seq)
        self.sample_rng = np.random.default_rng(sample_seq)
        self.sampler = get_sampler(self.plan.mode, ds.num_items, self.sample_rng) if self.plan.mode else None

        self.adam = Adam(self.state, config.lr, config.weight_decay, config.adam_mode)
        self.evaluator = Evaluator(ds, "valid", batch_users=config.eval_batch_users)
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
        self.history_path = Path(history_path) if history_path else None

        self.epoch = 0
        self.history: list[dict] = []
        self.best_state = self.state.copy()
        self.best_metric = -np.inf
        self.best_epoch = 0
        self.bad_epochs = 0
        self.initial_metric = float("nan")
        self.finished = False
        self.diverged = False
        self.stopped_reason = "max_epochs"

        logger.info(
            f"Trainer ready: loss={config.loss.kind} ({self.router.family}), encoder={self.encoder.name}, "
            f"negatives={self.plan.mode or 'none'}:{self.plan.count}, train pairs={len(self.train_users)}, "
            f"seed={config.seed}"
        )

    # ----- batching -----

    def _batch_bounds(self, n: int) -> list[tuple[int, int]]:
        size = self.config.batch_size
        bounds = [(start, min(start + size, n)) for start in range(0, n, size)]
        # A lone trailing pair has no in-batch negatives; fold it into the previous batch.
        if self.plan.mode == "in_batch" and len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] == 1:
            bounds[-2] = (bounds[-2][0], n)
            bounds.pop()
        return bounds

    def make_batch(self, users: np.ndarray, items: np.ndarray) -> Batch:
        if self.sampler is None:
            return Batch.positives_only(users, items)
        return self.sampler.sample(users, items, self.plan.count or None)

    def run_epoch(self) -> float:
        order = self.shuffle_rng.permutation(len(self.train_users))
        users, items = self.train_users[order], self.train_items[order]
        bounds = self._batch_bounds(len(order))
        disable = not self.config.progress or not sys.stdout.isatty()

        total, flags = 0.0, 0
        for start, stop in tqdm(bounds, desc=f"Epoch {self.epoch + 1}", leave=False, disable=disable):
            batch = self.make_batch(users[start:stop], items[start:stop])
            evaluation = self.router.evaluate(self.state, batch)
            if not np.isfinite(evaluation.value):
                raise DivergenceError(f"non-finite loss {evaluation.value} at epoch {self.epoch + 1}")
            self.adam.step(evaluation)
            total += evaluation.value * len(batch)
            flags += len(evaluation.flags)

        if flags:
            logger.warning(f"Epoch {self.epoch + 1}: {flags} uniformity term(s) skipped on small batches")
        if not self.state.is_finite():
            raise DivergenceError(f"parameters became non-finite at epoch {self.epoch + 1}")
        return total / len(order)

    # ----- persistence -----

    def _write_history(self, mode: str = "a", records: Optional[list[dict]] = None):
        if self.history_path is None:
            return
        self.history_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.history_path, mode, encoding="utf-8") as f:
            for record in records or []:
                f.write(json.dumps(record, sort_keys=True) + "\n")

    def save_checkpoint(self):
        if self.checkpoint_path is None:
            return
        groups = state_groups(self.state)
        groups["best"] = dict(self.best_state.params)
        groups.update(self.adam.moment_groups())
        meta = {
            "epoch": self.epoch,
            "step": self.adam.step_count,
            "best_metric": None if not np.isfinite(self.best_metric) else float(self.best_metric),
            "best_epoch": self.best_epoch,
            "bad_epochs": self.bad_epochs,
            "initial_metric": self.initial_metric,
            "history": self.history,
            "finished": self.finished,
            "diverged": self.diverged,
            "stopped_reason": self.stopped_reason,
            "seed": self.config.seed,
            "loss": self.config.loss.kind,
            "rng": {
                "shuffle": self.shuffle_rng.bit_generator.state,
                "sample": self.sample_rng.bit_generator.state,
            },
        }
        save_checkpoint(self.checkpoint_path, groups, meta)

    def resume(self) -> bool:
        """Restore progress from the checkpoint file; False when there is none."""
        if self.checkpoint_path is None or not self.checkpoint_path.exists():
            return False
        groups, meta = load_checkpoint(self.checkpoint_path)
        if meta.get("seed") != self.config.seed or meta.get("loss") != self.config.loss.kind:
            raise ConfigError(
                f"Checkpoint {self.checkpoint_path} belongs to loss={meta.get('loss')} seed={meta.get('seed')}"
            )
        self.state.assign(groups["params"])
        self.best_state.assign(groups["best"])
        self.adam.restore(groups, meta["step"])
        self.shuffle_rng.bit_generator.state = meta["rng"]["shuffle"]
        self.sample_rng.bit_generator.state = meta["rng"]["sample"]

        self.epoch = int(meta["epoch"])
        self.history = list(meta["history"])
        self.best_metric = -np.inf if meta["best_metric"] is None else float(meta["best_metric"])
        self.best_epoch = int(meta["best_epoch"])
        self.bad_epochs = int(meta["bad_epochs"])
        self.initial_metric = float(meta["initial_metric"])
        self.finished = bool(meta["finished"])
        self.diverged = bool(meta["diverged"])
        self.stopped_reason = meta["stopped_reason"]
        self._write_history("w", self.history)
        logger.info(f"Resumed from {self.checkpoint_path} at epoch {self.epoch} (finished={self.finished})")
        return True

    # ----- loop -----

    def _result(self) -> TrainResult:
        return TrainResult(
            best_state=self.best_state,
            history=list(self.history),
            best_epoch=self.best_epoch,
            best_metric=float(self.best_metric),
            initial_metric=self.initial_metric,
            diverged=self.diverged,
            stopped_reason=self.stopped_reason,
            final_state=self.state,
        )

    def train(self, resume: bool = False) -> TrainResult:
        resumed = resume and self.resume()
        if resumed and self.finished:
            return self._result()
        if not resumed:
            self.initial_metric = float(self.evaluator.evaluate(self.state, self.encoder).metrics[self.config.eval_metric])
            self._write_history("w")
            logger.info(f"Initial valid {self.config.eval_metric}: {self.initial_metric:.5f}")

        while self.epoch < self.config.max_epochs:
            started = time.perf_counter()
            try:
                train_loss = self.run_epoch()
            except (DivergenceError, OptimizerError) as e:
                logger.warning(f"Training diverged at epoch {self.epoch + 1}: {e}; keeping the last finite best state")
                self.diverged = True
                self.stopped_reason = "diverged"
                break

            self.epoch += 1
            report = self.evaluator.evaluate(self.state, self.encoder)
            metric = report.metrics[self.config.eval_metric]
            elapsed_ms = int((time.perf_counter() - started) * 1000) if self.config.record_timing else 0
            record = {
                "epoch": self.epoch,
                "train_loss": float(train_loss),
                "valid_ndcg20": float(report.metrics["ndcg@20"]),
                "elapsed_ms": elapsed_ms,
            }
            self.history.append(record)
            self._write_history("a", [record])

            if metric > self.best_metric:
                self.best_metric = float(metric)
                self.best_epoch = self.epoch
                self.best_state = self.state.copy()
                self.bad_epochs = 0
            else:
                self.bad_epochs += 1

            logger.info(
                f"Epoch {self.epoch}: loss={train_loss:.5f} valid {self.config.eval_metric}={metric:.5f} "
                f"best={self.best_metric:.5f}@{self.best_epoch} patience={self.bad_epochs}/{self.config.patience}"
            )
            if self.bad_epochs >= self.config.patience:
                self.stopped_reason = "early_stopping"
                break
            self.save_checkpoint()

        self.finished = True
        self.save_checkpoint()
        logger.info(f"Training stopped ({self.stopped_reason}) after {self.epoch} epoch(s); best epoch {self.best_epoch}")
        return self._result()


def train(ds: InteractionDataset, config: TrainConfig, encoder=None, **kwargs) -> TrainResult:
    return Trainer(ds, config, encoder, **kwargs).train()
