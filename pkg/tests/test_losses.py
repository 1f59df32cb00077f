import math

import numpy as np
import pytest

from cflab.core.config import LOSS_KINDS, LossConfig, TrainConfig
from cflab.core.errors import ConfigError
from cflab.data.sampler import Batch, InBatchSampler
from cflab.losses import LOSS_FAMILIES, LossRouter, bc, bce, bpr, ccl, cml, compute_loss, directau, mawu, mcl, sml, ssm, uib
from cflab.losses.margins import inverse_popularity_margins, margin_value
from cflab.models.encoders import LightGCNEncoder, NormalizedAdjacency
from cflab.models.state import ModelState

LN2 = math.log(2.0)


def _planar_state(user_angles, item_angles) -> ModelState:
    state = ModelState.create(len(user_angles), len(item_angles), 2)
    state.params["user_emb"][...] = [[math.cos(a), math.sin(a)] for a in user_angles]
    state.params["item_emb"][...] = [[math.cos(a), math.sin(a)] for a in item_angles]
    return state


def _inverse_softplus(y: float) -> float:
    return math.log(math.expm1(y))


def _unit(x):
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x)


def _cos(state, u, i, user_side=True):
    left = state.user_emb[u] if user_side else state.item_emb[u]
    return float(_unit(left) @ _unit(state.item_emb[i]))


def _softplus(x):
    return math.log1p(math.exp(-abs(x))) + max(x, 0.0)


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def _uniformity(rows):
    rows = [_unit(r) for r in rows]
    terms = [
        math.exp(-2.0 * float(np.sum((rows[a] - rows[b]) ** 2)))
        for a in range(len(rows)) for b in range(a + 1, len(rows))
    ]
    return math.log(sum(terms) / len(terms))


# ----- pointwise -----

def test_bce_at_zero_similarity_is_ln2():
    state = _planar_state([0.0], [math.pi / 2, 0.0])
    assert bce(state, Batch.positives_only([0], [0])).value == pytest.approx(LN2, abs=1e-12)
    # Positive and negative both at s = 0.
    flipped = _planar_state([0.0], [math.pi / 2, -math.pi / 2])
    assert bce(flipped, Batch.from_lists([(0, 0)], [[1]])).value == pytest.approx(LN2, abs=1e-12)


def test_bce_matches_direct_formula(random_state, uniform_batch):
    terms = []
    for p, (u, i) in enumerate(uniform_batch.pairs):
        terms.append(-math.log(_sigmoid(_cos(random_state, u, i))))
        for j in uniform_batch.negatives_of(p):
            terms.append(-math.log(1.0 - _sigmoid(_cos(random_state, u, j))))
    assert bce(random_state, uniform_batch).value == pytest.approx(np.mean(terms), abs=1e-12)


def test_mcl_exponent_zero_and_empty_negatives():
    state = _planar_state([0.3], [0.3])
    config = LossConfig(kind="MCL", mcl_params=(2.0, 1.0, 0.0, 0.0))
    assert mcl(state, Batch.positives_only([0], [0]), config).value == pytest.approx(LN2 / 2.0, abs=1e-12)


def test_mcl_matches_direct_formula(random_state, uniform_batch):
    alpha, beta, lam_p, lam_n = 1.5, 2.0, 0.1, -0.2
    config = LossConfig(kind="MCL", mcl_params=(alpha, beta, lam_p, lam_n))
    pos, neg = [], []
    for p, (u, i) in enumerate(uniform_batch.pairs):
        pos.append(math.exp(alpha * (2 - 2 * _cos(random_state, u, i) + lam_p)))
        for j in uniform_batch.negatives_of(p):
            neg.append(math.exp(-beta * (2 - 2 * _cos(random_state, u, j) + lam_n)))
    expected = math.log(1 + np.mean(pos)) / alpha + math.log(1 + np.mean(neg)) / beta
    assert mcl(random_state, uniform_batch, config).value == pytest.approx(expected, abs=1e-10)


def test_uib_boundary_at_positive_similarity_is_ln2():
    state = _planar_state([0.0], [math.acos(0.6)])
    state.params["boundary_proj"][...] = [0.6, 0.0]
    value = uib(state, Batch.positives_only([0], [0]), LossConfig(kind="UIB")).value
    assert value == pytest.approx(LN2, abs=1e-12)


def test_uib_matches_direct_formula(random_state, uniform_batch):
    alpha = 0.7
    w = random_state.params["boundary_proj"]
    total, count = 0.0, 0
    for p, (u, i) in enumerate(uniform_batch.pairs):
        b_u = float(random_state.user_emb[u] @ w)
        total -= math.log(_sigmoid(_cos(random_state, u, i) - b_u))
        count += 1
        for j in uniform_batch.negatives_of(p):
            total -= alpha * math.log(_sigmoid(b_u - _cos(random_state, u, j)))
            count += 1
    value = uib(random_state, uniform_batch, LossConfig(kind="UIB", uib_alpha=alpha)).value
    assert value == pytest.approx(total / count, abs=1e-12)


# ----- pairwise -----

def test_bpr_tie_is_ln2():
    state = _planar_state([0.0], [0.4, -0.4])
    assert bpr(state, Batch.from_lists([(0, 0)], [[1]])).value == pytest.approx(LN2, abs=1e-12)


def test_bpr_matches_direct_formula(random_state, single_negative_batch):
    expected = np.mean([
        -math.log(_sigmoid(_cos(random_state, u, i) - _cos(random_state, u, j)))
        for (u, i), j in zip(single_negative_batch.pairs, single_negative_batch.negatives[:, 0])
    ])
    assert bpr(random_state, single_negative_batch).value == pytest.approx(expected, abs=1e-12)


def test_pairwise_losses_need_exactly_one_negative(random_state, uniform_batch):
    for loss in (bpr, cml, sml):
        with pytest.raises(ConfigError):
            loss(random_state, uniform_batch)


def test_cml_hinge_examples():
    equal = _planar_state([0.0], [0.5, -0.5])
    assert cml(equal, Batch.from_lists([(0, 0)], [[1]]), LossConfig(kind="CML", margin_const=0.0)).value == 0.0

    # d(u,i) = 0.2, d(u,j) = 0.5, M = 0.1 on squared unit distances.
    state = _planar_state([0.0], [math.acos(0.9), math.acos(0.75)])
    value = cml(state, Batch.from_lists([(0, 0)], [[1]]), LossConfig(kind="CML", margin_const=0.1)).value
    assert value == 0.0


def test_cml_rejects_negative_margin():
    with pytest.raises(ValueError):
        LossConfig(kind="CML", margin_const=-0.1)


def test_sml_matches_term_by_term(random_state, single_negative_batch):
    lam = 0.05
    hinge, m_user, m_item = [], [], []
    for (u, i), j in zip(single_negative_batch.pairs, single_negative_batch.negatives[:, 0]):
        mu = _softplus(random_state.params["user_margin"][u])
        mi = _softplus(random_state.params["item_margin"][i])
        d_ui = 2 - 2 * _cos(random_state, u, i)
        d_uj = 2 - 2 * _cos(random_state, u, j)
        d_ij = 2 - 2 * _cos(random_state, i, j, user_side=False)
        hinge.append(max(d_ui - d_uj + mu, 0.0) + max(d_ui - d_ij + mi, 0.0))
        m_user.append(mu)
        m_item.append(mi)
    expected = np.mean(hinge) - lam * (np.mean(m_user) + np.mean(m_item))
    value = sml(random_state, single_negative_batch, LossConfig(kind="SML", sml_lambda=lam)).value
    assert value == pytest.approx(expected, abs=1e-12)


def test_sml_is_zero_inside_both_hinges():
    state = _planar_state([0.0], [0.0, math.pi])
    state.params["user_margin"][...] = -60.0
    state.params["item_margin"][...] = -60.0
    value = sml(state, Batch.from_lists([(0, 0)], [[1]]), LossConfig(kind="SML", sml_lambda=0.0)).value
    assert value == pytest.approx(0.0, abs=1e-20)


# ----- setwise -----

def test_ccl_examples():
    state = _planar_state([0.0], [0.0, math.pi / 2, -math.pi / 2])
    batch = Batch.from_lists([(0, 0)], [[1, 2]])
    assert ccl(state, batch, LossConfig(kind="CCL", margin_const=0.5)).value == pytest.approx(0.0, abs=1e-15)

    tilted = _planar_state([0.0], [0.7, 1.9])
    one = Batch.from_lists([(0, 0)], [[1]])
    s_pos, s_neg = math.cos(0.7), math.cos(1.9)
    value = ccl(tilted, one, LossConfig(kind="CCL", margin_const=-1.0, ccl_weight=1.0)).value
    assert value == pytest.approx(1 - s_pos + s_neg + 1, abs=1e-12)


def test_ccl_matches_direct_formula(random_state, uniform_batch):
    w, margin = 2.0, 0.1
    per_pair = []
    for p, (u, i) in enumerate(uniform_batch.pairs):
        negs = uniform_batch.negatives_of(p)
        hinge = sum(max(_cos(random_state, u, j) - margin, 0.0) for j in negs)
        per_pair.append(1 - _cos(random_state, u, i) + w / len(negs) * hinge)
    value = ccl(random_state, uniform_batch, LossConfig(kind="CCL", ccl_weight=w, margin_const=margin)).value
    assert value == pytest.approx(np.mean(per_pair), abs=1e-12)


def _softmax_oracle(pos_logit, neg_logits):
    logits = [pos_logit] + list(neg_logits)
    top = max(logits)
    return -(pos_logit - top - math.log(sum(math.exp(x - top) for x in logits)))


def test_ssm_matches_log_sum_exp_oracle():
    rng = np.random.default_rng(3)
    state = ModelState.create(4, 40, 6)
    state.params["user_emb"][...] = rng.normal(size=(4, 6))
    state.params["item_emb"][...] = rng.normal(size=(40, 6))
    pairs = [(u, u) for u in range(4)]
    negatives = [[j for j in rng.permutation(40)[:31] if j != u][:30] for u in range(4)]
    batch = Batch.from_lists(pairs, negatives)

    tau = 0.2
    expected = np.mean([
        _softmax_oracle(_cos(state, u, i) / tau, [_cos(state, u, j) / tau for j in negatives[p]])
        for p, (u, i) in enumerate(pairs)
    ])
    assert ssm(state, batch, LossConfig(kind="SSM", tau=tau)).value == pytest.approx(expected, abs=1e-10)


def test_ssm_saturates_when_positive_dominates():
    tau = 0.05
    state = _planar_state([0.0], [0.0, math.acos(1 - 10 * tau - 0.01)])
    value = ssm(state, Batch.from_lists([(0, 0)], [[1]]), LossConfig(kind="SSM", tau=tau)).value
    assert value < 1e-3


def test_in_batch_ssm_matches_explicit_negatives(random_state):
    users, items = [0, 1, 2, 3], [1, 3, 5, 3]
    in_batch = InBatchSampler(random_state.num_items).sample(users, items)
    explicit = Batch.from_lists(list(zip(users, items)), [in_batch.negatives_of(p) for p in range(4)])
    config = LossConfig(kind="SSM", tau=0.3)

    a = ssm(random_state, in_batch, config)
    b = ssm(random_state, explicit, config)
    assert a.value == pytest.approx(b.value, abs=1e-12)
    for name in ("user_emb", "item_emb"):
        assert np.allclose(a.grads[name], b.grads[name], atol=1e-12)


def test_bc_zero_margin_equals_ssm(random_state, uniform_batch):
    for tau in (0.1, 1.0):
        left = bc(random_state, uniform_batch, LossConfig(kind="BC", tau=tau, margin_mode="zero")).value
        right = ssm(random_state, uniform_batch, LossConfig(kind="SSM", tau=tau)).value
        assert abs(left - right) <= 1e-12


def test_bc_positive_logit_at_pi():
    tau = 0.5
    state = _planar_state([0.0], [math.pi / 2, 2.0])
    state.params["user_margin"][...] = _inverse_softplus(math.pi / 4)
    state.params["item_margin"][...] = _inverse_softplus(math.pi / 4)
    value = bc(state, Batch.from_lists([(0, 0)], [[1]]), LossConfig(kind="BC", tau=tau, margin_mode="learned")).value
    assert value == pytest.approx(_softmax_oracle(-1.0 / tau, [math.cos(2.0) / tau]), abs=1e-9)


def test_bc_matches_composed_formula(random_state, uniform_batch):
    tau = 0.2
    expected = []
    for p, (u, i) in enumerate(uniform_batch.pairs):
        theta = math.acos(_cos(random_state, u, i))
        margin = _softplus(random_state.params["user_margin"][u]) + _softplus(random_state.params["item_margin"][i])
        pos = math.cos(min(max(theta + margin, 0.0), math.pi)) / tau
        expected.append(_softmax_oracle(pos, [_cos(random_state, u, j) / tau for j in uniform_batch.negatives_of(p)]))
    value = bc(random_state, uniform_batch, LossConfig(kind="BC", tau=tau, margin_mode="learned")).value
    assert value == pytest.approx(np.mean(expected), abs=1e-10)


# ----- alignment / uniformity -----

def test_directau_collapsed_rows_are_zero():
    state = _planar_state([0.2, 0.2], [0.2, 0.2])
    value = directau(state, Batch.positives_only([0, 1], [0, 1]), LossConfig(kind="DirectAU", gamma=1.0)).value
    assert value == pytest.approx(0.0, abs=1e-12)


def test_directau_matches_pairwise_oracle(random_state):
    users, items = [0, 1, 2, 3, 4, 5, 0, 1], [0, 1, 2, 3, 4, 5, 6, 7]
    gamma = 0.8
    align = np.mean([2 - 2 * _cos(random_state, u, i) for u, i in zip(users, items)])
    unif_u = _uniformity([random_state.user_emb[u] for u in sorted(set(users))])
    unif_i = _uniformity([random_state.item_emb[i] for i in sorted(set(items))])
    value = directau(random_state, Batch.positives_only(users, items), LossConfig(kind="DirectAU", gamma=gamma)).value
    assert value == pytest.approx(align + gamma * (unif_u + unif_i), abs=1e-10)


def test_directau_flags_single_user_batches(random_state):
    result = directau(random_state, Batch.positives_only([2, 2], [0, 1]), LossConfig(kind="DirectAU"))
    assert result.flags == ["user_emb_uniformity_skipped"]


def test_mawu_alignment_examples():
    zero = LossConfig(kind="MAWU", margin_mode="zero", gamma1=0.0, gamma2=0.0)
    same = _planar_state([0.4], [0.4])
    assert mawu(same, Batch.positives_only([0], [0]), zero).value == pytest.approx(-1.0, abs=1e-12)

    learned = LossConfig(kind="MAWU", margin_mode="learned", gamma1=0.0, gamma2=0.0)
    third = _planar_state([0.0], [math.pi / 3])
    third.params["user_margin"][...] = _inverse_softplus(math.pi / 6)
    third.params["item_margin"][...] = _inverse_softplus(math.pi / 6)
    assert mawu(third, Batch.positives_only([0], [0]), learned).value == pytest.approx(0.5, abs=1e-12)


def test_mawu_clamp_gives_plus_one_and_no_margin_gradient():
    state = _planar_state([0.0], [2.5])
    state.params["user_margin"][...] = _inverse_softplus(0.5)
    state.params["item_margin"][...] = _inverse_softplus(0.5)
    config = LossConfig(kind="MAWU", margin_mode="learned", gamma1=0.0, gamma2=0.0)
    result = mawu(state, Batch.positives_only([0], [0]), config)
    assert result.value == pytest.approx(1.0, abs=1e-12)
    assert not result.grads["user_margin"].any()
    assert not result.grads["item_margin"].any()


def test_mawu_matches_composed_formula(random_state):
    users, items = [0, 1, 2, 3, 4, 5], [8, 7, 6, 5, 4, 3]
    g1, g2 = 1.3, 0.4
    align = -np.mean([
        math.cos(min(max(
            math.acos(_cos(random_state, u, i))
            + _softplus(random_state.params["user_margin"][u])
            + _softplus(random_state.params["item_margin"][i]), 0.0), math.pi))
        for u, i in zip(users, items)
    ])
    expected = (align + g1 * _uniformity([random_state.user_emb[u] for u in sorted(users)])
                + g2 * _uniformity([random_state.item_emb[i] for i in sorted(items)]))
    config = LossConfig(kind="MAWU", gamma1=g1, gamma2=g2, margin_mode="learned")
    assert mawu(random_state, Batch.positives_only(users, items), config).value == pytest.approx(expected, abs=1e-10)


def test_mawu_ignores_batch_negatives(random_state, uniform_batch):
    config = LossConfig(kind="MAWU")
    plain = Batch.positives_only(uniform_batch.users, uniform_batch.pos_items)
    assert mawu(random_state, uniform_batch, config).value == mawu(random_state, plain, config).value


def test_mawu_rises_with_the_margin_below_the_clamp():
    config = LossConfig(kind="MAWU", margin_mode="learned", gamma1=0.0, gamma2=0.0)
    state = _planar_state([0.0], [0.6])
    batch = Batch.positives_only([0], [0])
    values = []
    for margin in np.linspace(0.02, 1.0, 12):
        state.params["user_margin"][...] = _inverse_softplus(margin)
        state.params["item_margin"][...] = _inverse_softplus(margin)
        result = mawu(state, batch, config)
        values.append(result.value)
        # 0.6 + 2 * margin stays in (0, pi), so sin > 0 and the raw-margin gradient is positive.
        assert result.grads["user_margin"][0] > 0.0
        assert result.grads["item_margin"][0] > 0.0
    assert np.all(np.diff(values) > 0.0)

    state.params["user_margin"][...] = _inverse_softplus(0.3)
    step = 1e-6
    low = mawu(state, batch, config).value
    state.params["user_margin"][...] += step
    assert mawu(state, batch, config).value > low


@pytest.mark.parametrize("kind", LOSS_KINDS)
def test_loss_is_invariant_to_batch_order(kind, random_state, uniform_batch, single_negative_batch):
    batch = single_negative_batch if LOSS_FAMILIES[kind] == "pairwise" else uniform_batch
    config = LossConfig(kind=kind)
    order = [2, 0, 3, 1]
    base = compute_loss(config, random_state, batch)
    shuffled = compute_loss(config, random_state, batch.permuted(order))
    assert shuffled.value == pytest.approx(base.value, rel=1e-12, abs=1e-12)
    assert sorted(shuffled.grads) == sorted(base.grads)
    for name, grad in base.grads.items():
        assert np.allclose(shuffled.grads[name], grad, rtol=1e-10, atol=1e-12), name


@pytest.mark.parametrize("kind", ["SSM", "BC"])
def test_in_batch_loss_is_invariant_to_batch_order(kind, random_state):
    batch = InBatchSampler.build([0, 1, 2, 3, 4], [0, 2, 4, 6, 2])
    config = LossConfig(kind=kind)
    base = compute_loss(config, random_state, batch)
    shuffled = compute_loss(config, random_state, batch.permuted([4, 1, 3, 0, 2]))
    assert shuffled.value == pytest.approx(base.value, rel=1e-12, abs=1e-12)
    for name, grad in base.grads.items():
        assert np.allclose(shuffled.grads[name], grad, rtol=1e-10, atol=1e-12), name


# ----- margins -----

def test_inverse_popularity_margins_range():
    margins = inverse_popularity_margins([1, 2, 4])
    assert margins == pytest.approx([math.pi / 4, math.pi / 12, 0.0])
    assert inverse_popularity_margins([3, 3]).tolist() == [0.0, 0.0]


def test_margin_value_modes(random_state):
    assert margin_value(random_state, None, "zero", 1, 2) == (0.0, 0.0)

    fresh = ModelState.create(3, 3, 2, user_pop=[1, 5, 2], item_pop=[9, 1, 3])
    assert margin_value(fresh, None, "learned", 0, 0) == pytest.approx((LN2, LN2))
    user_m, item_m = margin_value(fresh, None, "inverse_popularity", 1, 0)
    assert user_m == 0.0 and item_m == 0.0
    assert margin_value(fresh, None, "inverse_popularity", 0, 1) == pytest.approx((math.pi / 4, math.pi / 4))

    with pytest.raises(IndexError):
        margin_value(fresh, None, "zero", 3, 0)


def test_bc_fashion_margin_splits_the_angle():
    state = ModelState.create(1, 1, 2, user_pop=[1], item_pop=[1])
    state.params["pop_user_emb"][...] = [[1.0, 0.0]]
    state.params["pop_item_emb"][...] = [[0.0, 2.0]]
    assert margin_value(state, None, "bc_fashion", 0, 0) == pytest.approx((math.pi / 4, math.pi / 4))


# ----- router -----

def test_router_negative_plans():
    train = TrainConfig()
    assert LossRouter(LossConfig(kind="BPR")).negative_plan(train).mode == "uniform"
    assert LossRouter(LossConfig(kind="BPR")).negative_plan(train).count == 1
    assert LossRouter(LossConfig(kind="SSM")).negative_plan(train).mode == "in_batch"
    assert LossRouter(LossConfig(kind="CCL")).negative_plan(train).count == train.num_negatives
    assert LossRouter(LossConfig(kind="MAWU")).negative_plan(train).mode is None
    forced = TrainConfig(negative_mode="uniform", num_negatives=5)
    plan = LossRouter(LossConfig(kind="BC")).negative_plan(forced)
    assert (plan.mode, plan.count) == ("uniform", 5)


def test_router_families():
    families = {kind: LossRouter(LossConfig(kind=kind)).family for kind in ("UIB", "SML", "BC", "DAU")}
    assert families == {"UIB": "pointwise", "SML": "pairwise", "BC": "setwise", "DAU": "alignment_uniformity"}


def test_router_maps_lightgcn_gradients_densely(random_state, uniform_batch):
    adj = NormalizedAdjacency.from_interactions([0, 1, 2, 3, 4, 5], [0, 2, 4, 6, 8, 1], 6, 9)
    result = LossRouter(LossConfig(kind="SSM"), LightGCNEncoder(adj, 2)).evaluate(random_state, uniform_batch)
    assert result.rows["user_emb"] is None and result.rows["item_emb"] is None
    assert result.grads["user_emb"].shape == random_state.user_emb.shape


def test_compute_loss_goes_through_the_router(random_state, uniform_batch):
    config = LossConfig(kind="CCL", margin_const=0.3)
    via_router = LossRouter(config).evaluate(random_state, uniform_batch)
    direct = compute_loss(config, random_state, uniform_batch)
    assert direct.value == via_router.value
    np.testing.assert_array_equal(direct.grads["user_emb"], via_router.grads["user_emb"])
