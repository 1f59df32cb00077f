"""Pairwise losses over (user, positive, one negative) triplets."""

import numpy as np
from scipy.special import expit

from cflab.core.config import LossConfig
from cflab.data.sampler import Batch
from cflab.losses.base import LossContext, LossEvaluation, require_single_negative, resolve_config, softplus
from cflab.models.encoders import Representations
from cflab.models.state import ModelState


def bpr(state: ModelState, batch: Batch, config: LossConfig | None = None,
        reps: Representations | None = None) -> LossEvaluation:
    resolve_config(config, "BPR")
    require_single_negative(batch, "BPR")
    ctx = LossContext(state, batch, reps, in_batch_matrix=False)
    view = ctx.view

    s_neg = view.neg.scores(view.user.unit)[:, 0]
    gap = view.s_pos - s_neg
    value = np.mean(np.logaddexp(0.0, -gap))

    g_gap = (expit(gap) - 1.0) / ctx.size
    view.add_pos(g_gap)
    view.add_neg(-g_gap[:, None])
    return ctx.finish(value)


def cml(state: ModelState, batch: Batch, config: LossConfig | None = None,
        reps: Representations | None = None) -> LossEvaluation:
    """[d(u,i) - d(u,j) + M]+ on squared unit-sphere distances; subgradient 0 at the kink."""
    config = resolve_config(config, "CML")
    require_single_negative(batch, "CML")
    ctx = LossContext(state, batch, reps, in_batch_matrix=False)
    view = ctx.view

    s_neg = view.neg.scores(view.user.unit)[:, 0]
    hinge = (2.0 - 2.0 * view.s_pos) - (2.0 - 2.0 * s_neg) + config.margin_const
    value = np.mean(np.maximum(hinge, 0.0))

    g_hinge = (hinge > 0.0) / ctx.size
    view.add_pos(-2.0 * g_hinge)
    view.add_neg((2.0 * g_hinge)[:, None])
    return ctx.finish(value)


def sml(state: ModelState, batch: Batch, config: LossConfig | None = None,
        reps: Representations | None = None) -> LossEvaluation:
    """User- and item-centric hinges with learned margins, minus a margin-expansion term.

    M_u, M_i are softplus images of the stored margins; the expansion term
    is -(mean M_u + mean M_i) over the batch, weighted by sml_lambda.
    """
    config = resolve_config(config, "SML")
    require_single_negative(batch, "SML")
    lam = config.sml_lambda
    ctx = LossContext(state, batch, reps, in_batch_matrix=False)
    view = ctx.view
    neg = view.neg
    size = ctx.size

    raw_user = state.params["user_margin"][batch.users]
    raw_item = state.params["item_margin"][batch.pos_items]
    margin_user = softplus(raw_user)
    margin_item = softplus(raw_item)

    s_uj = neg.scores(view.user.unit)[:, 0]
    s_ij = neg.scores(view.pos.unit)[:, 0]
    d_ui = 2.0 - 2.0 * view.s_pos
    user_hinge = d_ui - (2.0 - 2.0 * s_uj) + margin_user
    item_hinge = d_ui - (2.0 - 2.0 * s_ij) + margin_item

    value = np.mean(np.maximum(user_hinge, 0.0) + np.maximum(item_hinge, 0.0))
    value -= lam * (margin_user.mean() + margin_item.mean())

    a_user = (user_hinge > 0.0) / size
    a_item = (item_hinge > 0.0) / size
    view.add_pos(-2.0 * (a_user + a_item))
    view.add_neg((2.0 * a_user)[:, None])
    view.g_pos += neg.backward((2.0 * a_item)[:, None], view.pos.unit)

    ctx.buffer.add_rows("user_margin", batch.users, (a_user - lam / size) * expit(raw_user))
    ctx.buffer.add_rows("item_margin", batch.pos_items, (a_item - lam / size) * expit(raw_item))
    return ctx.finish(value)
