"""Setwise losses: one positive against a set of negatives per pair."""

import numpy as np

from cflab.core.config import LossConfig
from cflab.core.errors import ConfigError
from cflab.data.sampler import Batch
from cflab.losses.base import LossContext, LossEvaluation, margin_cosine, resolve_config, softmax_cross_entropy
from cflab.losses.margins import MarginModel
from cflab.models.encoders import Representations
from cflab.models.state import ModelState


def _require_negatives(batch: Batch, kind: str):
    if batch.num_negatives == 0:
        raise ConfigError(f"{kind} needs at least one negative per pair")


def ccl(state: ModelState, batch: Batch, config: LossConfig | None = None,
        reps: Representations | None = None) -> LossEvaluation:
    """1 - s(u,i) + w/|N_u| * sum_j [s(u,j) - M]+ averaged over pairs."""
    config = resolve_config(config, "CCL")
    _require_negatives(batch, "CCL")
    ctx = LossContext(state, batch, reps)
    view = ctx.view
    neg = view.neg

    s_neg = neg.scores(view.user.unit)
    active = neg.mask & (s_neg > config.margin_const)
    per_row = np.maximum(neg.mask.sum(axis=1), 1)[:, None]
    weight = config.ccl_weight / per_row

    per_pair = 1.0 - view.s_pos + np.sum(np.where(active, weight * (s_neg - config.margin_const), 0.0), axis=1)
    value = np.mean(per_pair)

    view.add_pos(-1.0 / ctx.size)
    view.add_neg(np.where(active, weight, 0.0) / ctx.size)
    return ctx.finish(value)


def ssm(state: ModelState, batch: Batch, config: LossConfig | None = None,
        reps: Representations | None = None) -> LossEvaluation:
    """Sampled softmax cross-entropy with temperature tau."""
    config = resolve_config(config, "SSM")
    _require_negatives(batch, "SSM")
    tau = config.tau
    ctx = LossContext(state, batch, reps)
    view = ctx.view
    neg = view.neg

    s_neg = neg.scores(view.user.unit)
    per_pair, prob = softmax_cross_entropy(view.s_pos / tau, s_neg / tau, neg.mask)
    value = np.mean(per_pair)

    view.add_pos((prob[:, 0] - 1.0) / (ctx.size * tau))
    view.add_neg(prob[:, 1:] / (ctx.size * tau))
    return ctx.finish(value)


def bc(state: ModelState, batch: Batch, config: LossConfig | None = None,
       reps: Representations | None = None) -> LossEvaluation:
    """Sampled softmax whose positive logit is cos(theta + M_ui) / tau.

    M_ui = M_u + M_i from the configured margin mode; negatives carry no margin.
    """
    config = resolve_config(config, "BC")
    _require_negatives(batch, "BC")
    tau = config.tau
    ctx = LossContext(state, batch, reps)
    view = ctx.view
    neg = view.neg

    margins = MarginModel(config.margin_mode, state, ctx.reps, batch.users, batch.pos_items)
    cosine, d_s, d_margin = margin_cosine(view.s_pos, margins.user + margins.item)

    s_neg = neg.scores(view.user.unit)
    per_pair, prob = softmax_cross_entropy(cosine / tau, s_neg / tau, neg.mask)
    value = np.mean(per_pair)

    g_cos = (prob[:, 0] - 1.0) / (ctx.size * tau)
    view.add_pos(g_cos * d_s)
    view.add_neg(prob[:, 1:] / (ctx.size * tau))
    margins.backward(g_cos * d_margin, g_cos * d_margin, ctx.buffer)
    return ctx.finish(value)
