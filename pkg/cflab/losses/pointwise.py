"""Pointwise losses: every (user, item) pair is scored on its own."""

import numpy as np
from scipy.special import expit, logsumexp, softmax

from cflab.core.config import LossConfig
from cflab.data.sampler import Batch
from cflab.losses.base import PROB_CLAMP, LossContext, LossEvaluation, resolve_config, softplus
from cflab.models.encoders import Representations
from cflab.models.state import ModelState


def bce(state: ModelState, batch: Batch, config: LossConfig | None = None,
        reps: Representations | None = None) -> LossEvaluation:
    """Binary cross-entropy on cosine scores, averaged over positive and negative terms."""
    resolve_config(config, "BCE")
    ctx = LossContext(state, batch, reps)
    view = ctx.view
    neg = view.neg
    s_neg = neg.scores(view.user.unit)

    p_pos = np.clip(expit(view.s_pos), PROB_CLAMP, 1.0 - PROB_CLAMP)
    p_neg = np.clip(expit(s_neg), PROB_CLAMP, 1.0 - PROB_CLAMP)
    count = ctx.size + int(neg.mask.sum())

    total = -np.log(p_pos).sum() - np.where(neg.mask, np.log(1.0 - p_neg), 0.0).sum()

    view.add_pos((expit(view.s_pos) - 1.0) / count)
    view.add_neg(np.where(neg.mask, expit(s_neg), 0.0) / count)
    return ctx.finish(total / count)


def mcl(state: ModelState, batch: Batch, config: LossConfig | None = None,
        reps: Representations | None = None) -> LossEvaluation:
    """Multi-similarity style contrastive loss on squared unit-sphere distances.

    (1/a) log(1 + mean_pos e^{a(d+lp)}) + (1/b) log(1 + mean_neg e^{-b(d+ln)})
    """
    config = resolve_config(config, "MCL")
    alpha, beta, lam_pos, lam_neg = config.mcl_params
    ctx = LossContext(state, batch, reps)
    view = ctx.view

    d_pos = 2.0 - 2.0 * view.s_pos
    a = alpha * (d_pos + lam_pos)
    t_pos = logsumexp(a) - np.log(ctx.size)
    value = softplus(t_pos) / alpha
    g_d_pos = expit(t_pos) * softmax(a)
    view.add_pos(-2.0 * g_d_pos)

    neg = view.neg
    valid = int(neg.mask.sum())
    if valid:
        d_neg = 2.0 - 2.0 * neg.scores(view.user.unit)
        b = np.where(neg.mask, -beta * (d_neg + lam_neg), -np.inf)
        t_neg = logsumexp(b) - np.log(valid)
        value += softplus(t_neg) / beta
        g_d_neg = -expit(t_neg) * softmax(b, axis=None)
        view.add_neg(-2.0 * g_d_neg)

    return ctx.finish(value)


def uib(state: ModelState, batch: Batch, config: LossConfig | None = None,
        reps: Representations | None = None) -> LossEvaluation:
    """Boundary loss: positives above b_u = w.f(u), negatives below, alpha-weighted.

    b_u uses the raw (unnormalized) user representation.
    """
    config = resolve_config(config, "UIB")
    alpha = config.uib_alpha
    ctx = LossContext(state, batch, reps)
    view = ctx.view
    neg = view.neg

    w = state.params["boundary_proj"]
    user_raw = view.user.raw
    boundary = user_raw @ w
    s_neg = neg.scores(view.user.unit)
    count = ctx.size + int(neg.mask.sum())

    z = view.s_pos - boundary
    y = boundary[:, None] - s_neg
    total = softplus(-z).sum() + alpha * np.where(neg.mask, softplus(-y), 0.0).sum()

    g_z = (expit(z) - 1.0) / count
    g_y = np.where(neg.mask, alpha * (expit(y) - 1.0), 0.0) / count
    view.add_pos(g_z)
    view.add_neg(-g_y)

    g_boundary = -g_z + g_y.sum(axis=1)
    ctx.buffer.add_dense("boundary_proj", g_boundary @ user_raw)
    ctx.buffer.add_rows("user_emb", batch.users, g_boundary[:, None] * w)
    return ctx.finish(total / count)
