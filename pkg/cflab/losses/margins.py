import logging

import numpy as np
from scipy.special import expit

from cflab.core.config import MARGIN_MODES
from cflab.core.errors import ConfigError
from cflab.data.dataset import InteractionDataset
from cflab.losses.base import ARCCOS_CLAMP, GradientBuffer, UnitRows, softplus
from cflab.models.encoders import Representations
from cflab.models.state import ModelState

logger = logging.getLogger(__name__)

INVERSE_POPULARITY_CEILING = np.pi / 4


def inverse_popularity_margins(popularity) -> np.ndarray:
    """p_max / p rescaled affinely onto [0, pi/4]; the most popular id gets 0.

    Popularity 0 is floored to 1.
    """
    pop = np.maximum(np.asarray(popularity, dtype=np.float64), 1.0)
    if pop.size == 0:
        return pop
    ratio = pop.max() / pop
    top = ratio.max()
    if top <= 1.0:
        return np.zeros_like(ratio)
    return INVERSE_POPULARITY_CEILING * (ratio - 1.0) / (top - 1.0)


def effective_margins(state: ModelState) -> tuple[np.ndarray, np.ndarray]:
    """softplus images of the stored user / item margin parameters."""
    return softplus(state.params["user_margin"]), softplus(state.params["item_margin"])


class MarginModel:
    """Per-pair user and item margins for one batch under a margin mode.

    Modes: zero, inverse_popularity, uib_fashion (softplus of the boundary
    projection), bc_fashion (angle between popularity-bucket embeddings,
    half to each side) and learned (softplus of per-id parameters).
    """

    def __init__(self, mode: str, state: ModelState, reps: Representations, users, items):
        if mode not in MARGIN_MODES:
            raise ConfigError(f"Unknown margin mode '{mode}', try {MARGIN_MODES}")
        self.mode = mode
        self.state = state
        self.reps = reps
        self.users = np.asarray(users, dtype=np.int64)
        self.items = np.asarray(items, dtype=np.int64)
        self.user, self.item = getattr(self, f"_forward_{mode}")()

    def _forward_zero(self):
        return np.zeros(len(self.users)), np.zeros(len(self.items))

    def _forward_inverse_popularity(self):
        user_table = inverse_popularity_margins(self.state.user_pop)
        item_table = inverse_popularity_margins(self.state.item_pop)
        return user_table[self.users], item_table[self.items]

    def _forward_uib_fashion(self):
        w = self.state.params["boundary_proj"]
        self._user_raw = self.reps.user[self.users]
        self._item_raw = self.reps.item[self.items]
        self._user_z = self._user_raw @ w
        self._item_z = self._item_raw @ w
        return softplus(self._user_z), softplus(self._item_z)

    def _forward_bc_fashion(self):
        self._user_bucket = self.state.user_bucket[self.users]
        self._item_bucket = self.state.item_bucket[self.items]
        self._pop_user = UnitRows(self.state.params["pop_user_emb"][self._user_bucket])
        self._pop_item = UnitRows(self.state.params["pop_item_emb"][self._item_bucket])
        cosine = np.sum(self._pop_user.unit * self._pop_item.unit, axis=1)
        self._cos_clipped = np.clip(cosine, -1.0 + ARCCOS_CLAMP, 1.0 - ARCCOS_CLAMP)
        self._cos_raw = cosine
        angle = np.arccos(self._cos_clipped)
        return 0.5 * angle, 0.5 * angle

    def _forward_learned(self):
        self._user_param = self.state.params["user_margin"][self.users]
        self._item_param = self.state.params["item_margin"][self.items]
        return softplus(self._user_param), softplus(self._item_param)

    def backward(self, g_user: np.ndarray, g_item: np.ndarray, buffer: GradientBuffer):
        if self.mode == "uib_fashion":
            w = self.state.params["boundary_proj"]
            g_uz = g_user * expit(self._user_z)
            g_iz = g_item * expit(self._item_z)
            buffer.add_dense("boundary_proj", g_uz @ self._user_raw + g_iz @ self._item_raw)
            buffer.add_rows("user_emb", self.users, g_uz[:, None] * w)
            buffer.add_rows("item_emb", self.items, g_iz[:, None] * w)
        elif self.mode == "bc_fashion":
            g_angle = 0.5 * (g_user + g_item)
            d_angle = np.where(
                self._cos_clipped == self._cos_raw,
                -1.0 / np.sqrt(1.0 - self._cos_clipped ** 2),
                0.0,
            )
            g_cos = (g_angle * d_angle)[:, None]
            buffer.add_rows("pop_user_emb", self._user_bucket, self._pop_user.backward(g_cos * self._pop_item.unit))
            buffer.add_rows("pop_item_emb", self._item_bucket, self._pop_item.backward(g_cos * self._pop_user.unit))
        elif self.mode == "learned":
            buffer.add_rows("user_margin", self.users, g_user * expit(self._user_param))
            buffer.add_rows("item_margin", self.items, g_item * expit(self._item_param))


def margin_value(state: ModelState, ds: InteractionDataset | None, mode: str, user: int, item: int) -> tuple[float, float]:
    """Effective (M_u, M_i) of a single pair under a margin mode, MF representations."""
    if not 0 <= user < state.num_users:
        raise IndexError(f"user id {user} out of range [0, {state.num_users})")
    if not 0 <= item < state.num_items:
        raise IndexError(f"item id {item} out of range [0, {state.num_items})")
    if ds is not None and mode == "inverse_popularity":
        return (
            float(inverse_popularity_margins(ds.user_pop)[user]),
            float(inverse_popularity_margins(ds.item_pop)[item]),
        )
    reps = Representations(state.user_emb, state.item_emb)
    model = MarginModel(mode, state, reps, [user], [item])
    return float(model.user[0]), float(model.item[0])
