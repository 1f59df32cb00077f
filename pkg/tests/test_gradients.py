import numpy as np
import pytest

from cflab.core.config import LOSS_KINDS, MARGIN_MODES, LossConfig
from cflab.core.errors import ConfigError, GradientCheckError
from cflab.data.sampler import Batch, InBatchSampler
from cflab.losses.gradcheck import grad_check, relative_error
from cflab.losses.router import LOSS_FAMILIES
from cflab.models.encoders import LightGCNEncoder, NormalizedAdjacency

TOLERANCE = 1e-4

LOSS_SETTINGS = {
    "BCE": {},
    "MCL": {"mcl_params": (1.5, 2.0, 0.1, -0.2)},
    "UIB": {"uib_alpha": 0.7},
    "BPR": {},
    "CML": {"margin_const": 0.3},
    "SML": {"sml_lambda": 0.05},
    "CCL": {"margin_const": 0.1, "ccl_weight": 2.0},
    "SSM": {"tau": 0.2},
    "BC": {"tau": 0.2, "margin_mode": "learned"},
    "DirectAU": {"gamma": 0.8},
    "MAWU": {"gamma1": 1.3, "gamma2": 0.4, "margin_mode": "learned"},
}


def _lightgcn():
    adj = NormalizedAdjacency.from_interactions([0, 1, 2, 3, 4, 5, 0, 2], [0, 2, 4, 6, 8, 1, 3, 7], 6, 9)
    return LightGCNEncoder(adj, layers=2)


def _batch_for(kind, uniform_batch, single_negative_batch):
    return single_negative_batch if LOSS_FAMILIES[kind] == "pairwise" else uniform_batch


@pytest.mark.parametrize("kind", LOSS_KINDS)
@pytest.mark.parametrize("encoder_name", ["MF", "LightGCN"])
def test_analytic_gradients_match_central_differences(kind, encoder_name, random_state, uniform_batch,
                                                      single_negative_batch):
    encoder = _lightgcn() if encoder_name == "LightGCN" else None
    config = LossConfig(kind=kind, **LOSS_SETTINGS[kind])
    batch = _batch_for(kind, uniform_batch, single_negative_batch)

    result = grad_check(config, random_state, batch, eps=1e-5, encoder=encoder)
    assert result.checked > 0
    assert result.passed(TOLERANCE), f"{kind}/{encoder_name}: worst {result.worst}"


@pytest.mark.parametrize("kind", ["SSM", "BC", "CCL", "BCE"])
def test_in_batch_gradients(kind, random_state):
    batch = InBatchSampler(random_state.num_items).sample([0, 1, 2, 3, 4], [1, 3, 5, 3, 8])
    config = LossConfig(kind=kind, **LOSS_SETTINGS[kind])
    assert grad_check(config, random_state, batch).passed(TOLERANCE)


@pytest.mark.parametrize("mode", MARGIN_MODES)
@pytest.mark.parametrize("kind", ["MAWU", "BC"])
def test_margin_mode_gradients(kind, mode, random_state, uniform_batch):
    config = LossConfig(kind=kind, margin_mode=mode)
    assert grad_check(config, random_state, uniform_batch).passed(TOLERANCE)
    assert grad_check(config, random_state, uniform_batch, encoder=_lightgcn()).passed(TOLERANCE)


def test_stiff_temperature_still_checks(random_state, uniform_batch):
    config = LossConfig(kind="SSM", tau=0.05)
    assert grad_check(config, random_state, uniform_batch).max_rel_error < 1e-3


def test_clamped_margins_report_zero_gradient(random_state):
    # theta = 2.5 plus 1.0 of margin sits past pi.
    state = random_state.copy()
    state.params["user_emb"][0] = [1.0, 0.0, 0.0, 0.0, 0.0]
    state.params["item_emb"][0] = [np.cos(2.5), np.sin(2.5), 0.0, 0.0, 0.0]
    state.params["user_margin"][0] = np.log(np.expm1(0.5))
    state.params["item_margin"][0] = np.log(np.expm1(0.5))

    config = LossConfig(kind="MAWU", gamma1=0.0, gamma2=0.0)
    result = grad_check(config, state, Batch.positives_only([0], [0]))
    assert result.errors[("user_margin", 0)] == 0.0
    assert result.errors[("item_margin", 0)] == 0.0


def test_subsampling_limits_checked_coordinates(random_state, uniform_batch):
    result = grad_check(LossConfig(kind="SSM"), random_state, uniform_batch, encoder=_lightgcn(), max_coords=20)
    assert result.checked == 20


def test_grad_check_leaves_the_state_untouched(random_state, uniform_batch):
    before = random_state.copy()
    grad_check(LossConfig(kind="CCL"), random_state, uniform_batch)
    for name, value in before.params.items():
        assert np.array_equal(random_state.params[name], value)


def test_eps_outside_range_is_rejected(random_state, uniform_batch):
    with pytest.raises(ConfigError):
        grad_check(LossConfig(kind="SSM"), random_state, uniform_batch, eps=1e-3)


def test_non_finite_loss_aborts(random_state, single_negative_batch):
    state = random_state.copy()
    state.params["user_emb"][0] = np.inf
    with pytest.raises(GradientCheckError):
        grad_check(LossConfig(kind="BPR"), state, single_negative_batch)


def test_relative_error_floor():
    assert relative_error(0.0, 1e-12) == pytest.approx(1e-7)
    assert relative_error(2.0, 1.0) == 0.5
