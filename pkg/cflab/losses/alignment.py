"""Alignment/uniformity losses. Batch negatives are ignored."""

import numpy as np

from cflab.core.config import LossConfig
from cflab.data.sampler import Batch
from cflab.losses.base import LossContext, LossEvaluation, add_uniformity, margin_cosine, resolve_config
from cflab.losses.margins import MarginModel
from cflab.models.encoders import Representations
from cflab.models.state import ModelState


def directau(state: ModelState, batch: Batch, config: LossConfig | None = None,
             reps: Representations | None = None) -> LossEvaluation:
    """mean ||u - i||^2 over positive pairs + gamma * (user uniformity + item uniformity)."""
    config = resolve_config(config, "DirectAU")
    ctx = LossContext(state, batch, reps)
    view = ctx.view

    value = np.mean(2.0 - 2.0 * view.s_pos)
    view.add_pos(-2.0 / ctx.size)

    value += add_uniformity(ctx, ctx.reps.user, "user_emb", batch.users, config.gamma)
    value += add_uniformity(ctx, ctx.reps.item, "item_emb", batch.pos_items, config.gamma)
    return ctx.finish(value)


def mawu(state: ModelState, batch: Batch, config: LossConfig | None = None,
         reps: Representations | None = None) -> LossEvaluation:
    """Margin-aware alignment plus separately weighted user / item uniformity.

    L_MA = -mean cos(clamp(theta_ui + M_u + M_i, 0, pi)) with margins from
    margin_mode; L_WU = gamma1 * user uniformity + gamma2 * item uniformity.
    """
    config = resolve_config(config, "MAWU")
    ctx = LossContext(state, batch, reps)
    view = ctx.view

    margins = MarginModel(config.margin_mode, state, ctx.reps, batch.users, batch.pos_items)
    cosine, d_s, d_margin = margin_cosine(view.s_pos, margins.user + margins.item)
    value = -np.mean(cosine)

    view.add_pos(-d_s / ctx.size)
    g_margin = -d_margin / ctx.size
    margins.backward(g_margin, g_margin, ctx.buffer)

    value += add_uniformity(ctx, ctx.reps.user, "user_emb", batch.users, config.gamma1)
    value += add_uniformity(ctx, ctx.reps.item, "item_emb", batch.pos_items, config.gamma2)
    return ctx.finish(value)
