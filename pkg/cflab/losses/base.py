import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from cflab.core.config import LossConfig
from cflab.core.errors import ConfigError
from cflab.data.sampler import Batch
from cflab.models.encoders import Representations
from cflab.models.state import ModelState

logger = logging.getLogger(__name__)

NORM_FLOOR = 1e-12
PROB_CLAMP = 1e-12
ARCCOS_CLAMP = 1e-7


@dataclass
class LossEvaluation:
    """Loss value plus gradients for every parameter tensor the batch touched.

    `rows[name]` lists the touched rows of a table (lazy optimizer updates);
    None marks a dense gradient.
    """

    value: float
    grads: dict[str, np.ndarray]
    rows: dict[str, np.ndarray | None]
    flags: list[str] = field(default_factory=list)


def softplus(x):
    return np.logaddexp(0.0, x)


class UnitRows:
    """L2-normalized copies of raw rows with the normalization backward map."""

    def __init__(self, raw: np.ndarray):
        self.raw = raw
        self.norm = np.maximum(np.linalg.norm(raw, axis=-1, keepdims=True), NORM_FLOOR)
        self.unit = raw / self.norm

    def backward(self, grad_unit: np.ndarray) -> np.ndarray:
        radial = np.sum(grad_unit * self.unit, axis=-1, keepdims=True)
        return (grad_unit - self.unit * radial) / self.norm


class GradientBuffer:
    """Scatter-adds gradients into full-shape tensors.

    `user_emb` / `item_emb` are taken with respect to the encoder output;
    the router maps them back through the encoder.
    """

    def __init__(self, state: ModelState, reps: Representations):
        self._shapes = {name: value.shape for name, value in state.params.items()}
        self._shapes["user_emb"] = reps.user.shape
        self._shapes["item_emb"] = reps.item.shape
        self.grads: dict[str, np.ndarray] = {}
        self._rows: dict[str, list[np.ndarray]] = {}
        self._dense: set[str] = set()

    def _grad(self, name: str) -> np.ndarray:
        if name not in self.grads:
            self.grads[name] = np.zeros(self._shapes[name])
        return self.grads[name]

    def add_rows(self, name: str, index, values: np.ndarray):
        index = np.asarray(index, dtype=np.int64).ravel()
        grad = self._grad(name)
        np.add.at(grad, index, np.reshape(values, (len(index),) + grad.shape[1:]))
        self._rows.setdefault(name, []).append(index)

    def add_dense(self, name: str, values: np.ndarray):
        self._grad(name)
        self.grads[name] += values
        self._dense.add(name)

    def finish(self, value: float, flags: list[str]) -> LossEvaluation:
        rows = {}
        for name in self.grads:
            if name in self._dense:
                rows[name] = None
            else:
                rows[name] = np.unique(np.concatenate(self._rows[name]))
        return LossEvaluation(float(value), self.grads, rows, list(flags))


class SampledNegatives:
    """Explicit negative ids gathered into a (B, K, d) block."""

    def __init__(self, reps: Representations, batch: Batch):
        self.index = batch.negatives
        self.mask = batch.neg_mask
        self.rows = UnitRows(reps.item[batch.negatives])
        self._grad_unit = np.zeros_like(self.rows.unit)

    def scores(self, query: np.ndarray) -> np.ndarray:
        return np.einsum("bd,bkd->bk", query, self.rows.unit)

    def backward(self, grad: np.ndarray, query: np.ndarray) -> np.ndarray:
        self._grad_unit += grad[:, :, None] * query[:, None, :]
        return np.einsum("bk,bkd->bd", grad, self.rows.unit)

    def flush(self, buffer: GradientBuffer):
        if self.index.size:
            dim = self.rows.unit.shape[-1]
            buffer.add_rows("item_emb", self.index.ravel(), self.rows.backward(self._grad_unit).reshape(-1, dim))


class InBatchNegatives:
    """The other pairs' positives as negatives, scored with one B x B product.

    Column q of pair p is pair q's positive; the diagonal and same-item
    columns are masked.
    """

    def __init__(self, view: "PairView"):
        self.view = view
        pos = view.batch.pos_items
        self.mask = ~np.eye(len(pos), dtype=bool) & (pos[None, :] != pos[:, None])

    def scores(self, query: np.ndarray) -> np.ndarray:
        return query @ self.view.pos.unit.T

    def backward(self, grad: np.ndarray, query: np.ndarray) -> np.ndarray:
        self.view.g_pos += grad.T @ query
        return grad @ self.view.pos.unit

    def flush(self, buffer: GradientBuffer):
        pass


class PairView:
    """Normalized user / positive rows of a batch with unit-space gradient sums."""

    def __init__(self, reps: Representations, batch: Batch, in_batch_matrix: bool = True):
        self.reps = reps
        self.batch = batch
        self.user = UnitRows(reps.user[batch.users])
        self.pos = UnitRows(reps.item[batch.pos_items])
        self.g_user = np.zeros_like(self.user.unit)
        self.g_pos = np.zeros_like(self.pos.unit)
        self.s_pos = np.sum(self.user.unit * self.pos.unit, axis=1)
        self._in_batch_matrix = in_batch_matrix
        self._neg = None

    @property
    def neg(self):
        if self._neg is None:
            if self.batch.in_batch and self._in_batch_matrix:
                self._neg = InBatchNegatives(self)
            else:
                self._neg = SampledNegatives(self.reps, self.batch)
        return self._neg

    def add_pos(self, g_s):
        g_s = np.broadcast_to(g_s, self.s_pos.shape)[:, None]
        self.g_user += g_s * self.pos.unit
        self.g_pos += g_s * self.user.unit

    def add_neg(self, g_s):
        self.g_user += self.neg.backward(np.asarray(g_s, dtype=np.float64), self.user.unit)

    def flush(self, buffer: GradientBuffer):
        buffer.add_rows("user_emb", self.batch.users, self.user.backward(self.g_user))
        buffer.add_rows("item_emb", self.batch.pos_items, self.pos.backward(self.g_pos))
        if self._neg is not None:
            self._neg.flush(buffer)


class LossContext:
    """Per-call scratch space: representations, batch view, gradient buffer, flags."""

    def __init__(self, state: ModelState, batch: Batch, reps: Representations | None = None,
                 in_batch_matrix: bool = True):
        if len(batch) == 0:
            raise ConfigError("Loss evaluation needs a non-empty batch")
        self.state = state
        self.batch = batch
        self.reps = reps if reps is not None else Representations(state.user_emb, state.item_emb)
        self.buffer = GradientBuffer(state, self.reps)
        self.view = PairView(self.reps, batch, in_batch_matrix)
        self.flags: list[str] = []

    @property
    def size(self) -> int:
        return len(self.batch)

    def finish(self, value: float) -> LossEvaluation:
        self.view.flush(self.buffer)
        return self.buffer.finish(value, self.flags)


def resolve_config(config: LossConfig | None, kind: str) -> LossConfig:
    if config is None:
        return LossConfig(kind=kind)
    return config


def require_single_negative(batch: Batch, kind: str):
    if batch.num_negatives != 1 or not batch.neg_mask.all():
        raise ConfigError(f"{kind} needs exactly one negative per pair, got {batch.num_negatives}")


def softmax_cross_entropy(pos_logits: np.ndarray, neg_logits: np.ndarray, mask: np.ndarray):
    """Per-row -log softmax of the positive over {pos} + valid negatives.

    Returns (per_row_loss, probabilities) with probabilities[:, 0] for the positive.
    """
    logits = np.concatenate([pos_logits[:, None], np.where(mask, neg_logits, -np.inf)], axis=1)
    lse = logsumexp(logits, axis=1)
    prob = np.exp(logits - lse[:, None])
    return lse - pos_logits, prob


def margin_cosine(s: np.ndarray, margin: np.ndarray):
    """cos(clamp(arccos(s) + margin, 0, pi)) with derivatives in s and margin.

    Written as s cos M - sin(theta) sin M so a zero margin returns s exactly.
    Derivatives are zero wherever the clamp is active.
    """
    clipped = np.clip(s, -1.0 + ARCCOS_CLAMP, 1.0 - ARCCOS_CLAMP)
    theta = np.arccos(clipped)
    sin_theta = np.sqrt(1.0 - clipped * clipped)
    total = theta + margin
    inside = (total >= 0.0) & (total <= np.pi)

    cos_m, sin_m = np.cos(margin), np.sin(margin)
    value = np.where(inside, s * cos_m - sin_theta * sin_m, np.where(total > np.pi, -1.0, 1.0))

    d_sin = np.where(clipped == s, -clipped / sin_theta, 0.0)
    d_s = np.where(inside, cos_m - sin_m * d_sin, 0.0)
    d_margin = np.where(inside, -(s * sin_m + sin_theta * cos_m), 0.0)
    return value, d_s, d_margin


def uniformity(unit: np.ndarray):
    """log mean over distinct unordered pairs of exp(-2 ||x_a - x_b||^2) on unit rows.

    Returns (value, gradient w.r.t. the unit rows).
    """
    n = len(unit)
    # Ordered off-diagonal pairs count each unordered pair twice; the mean is unchanged.
    weight = unit @ unit.T
    weight *= 4.0
    weight -= 4.0
    np.fill_diagonal(weight, -np.inf)
    shift = weight.max()
    weight -= shift
    np.exp(weight, out=weight)
    total = weight.sum()
    value = shift + np.log(total) - np.log(n * (n - 1))
    return float(value), (8.0 / total) * (weight @ unit)


def add_uniformity(ctx: LossContext, table: np.ndarray, name: str, ids: np.ndarray, scale: float) -> float:
    """Weighted uniformity of the distinct ids in a batch; skipped (flagged) below 2 ids."""
    unique = np.unique(ids)
    if len(unique) < 2:
        ctx.flags.append(f"{name}_uniformity_skipped")
        logger.debug(f"Uniformity over {name} skipped: {len(unique)} distinct id(s) in batch")
        return 0.0
    rows = UnitRows(table[unique])
    value, grad_unit = uniformity(rows.unit)
    if scale != 0.0:
        ctx.buffer.add_rows(name, unique, rows.backward(scale * grad_unit))
    return scale * value
