import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from cflab.core.errors import ConfigError, OptimizerError
from cflab.models.state import MARGIN_NAMES, TABLE_NAMES, ModelState

logger = logging.getLogger(__name__)

ADAM_MODES = ("lazy", "dense")


@dataclass
class AdamState:
    """Moments, step counter and hyperparameters of one Adam run.

    Moments are created on first use and mirror the parameter shapes.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def moments(self, name: str, like: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if name not in self.m:
            self.m[name] = np.zeros_like(like)
            self.v[name] = np.zeros_like(like)
        return self.m[name], self.v[name]


def _check_finite(adam: AdamState, grads: dict[str, np.ndarray]):
    for name in sorted(grads):
        if not np.isfinite(grads[name]).all():
            raise OptimizerError(name, adam.step + 1)


def adam_step(adam: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              rows: Optional[dict[str, Optional[np.ndarray]]] = None, mode: str = "dense") -> dict[str, np.ndarray]:
    """One bias-corrected Adam update in place; L2 weight decay is added to the gradient.

    lazy: only rows listed in `rows` move and only their moments decay.
    dense: every parameter moves, untouched ones with gradient weight_decay * p.
    """
    if mode not in ADAM_MODES:
        raise ConfigError(f"Unknown Adam mode '{mode}', try {ADAM_MODES}")
    _check_finite(adam, grads)
    rows = rows or {}

    adam.step += 1
    correction1 = 1.0 - adam.beta1 ** adam.step
    correction2 = 1.0 - adam.beta2 ** adam.step
    names = sorted(grads) if mode == "lazy" else sorted(params)

    for name in names:
        param = params[name]
        m, v = adam.moments(name, param)
        grad = grads.get(name)
        index = rows.get(name) if mode == "lazy" else None

        if index is None:
            g = np.zeros_like(param) if grad is None else grad
            if adam.weight_decay:
                g = g + adam.weight_decay * param
            m *= adam.beta1
            m += (1.0 - adam.beta1) * g
            v *= adam.beta2
            v += (1.0 - adam.beta2) * g * g
            param -= adam.lr * (m / correction1) / (np.sqrt(v / correction2) + adam.eps)
            continue

        if len(index) == 0:
            continue
        g = grad[index]
        if adam.weight_decay:
            g = g + adam.weight_decay * param[index]
        m_rows = adam.beta1 * m[index] + (1.0 - adam.beta1) * g
        v_rows = adam.beta2 * v[index] + (1.0 - adam.beta2) * g * g
        m[index] = m_rows
        v[index] = v_rows
        param[index] -= adam.lr * (m_rows / correction1) / (np.sqrt(v_rows / correction2) + adam.eps)

    return params


class Adam:
    """Adam bound to one ModelState."""

    def __init__(self, state: ModelState, lr: float = 1e-3, weight_decay: float = 0.0, mode: str = "lazy"):
        if mode not in ADAM_MODES:
            raise ConfigError(f"Unknown Adam mode '{mode}', try {ADAM_MODES}")
        self.state = state
        self.mode = mode
        self.adam = AdamState(lr=lr, weight_decay=weight_decay)

    @property
    def step_count(self) -> int:
        return self.adam.step

    def step(self, evaluation):
        adam_step(self.adam, self.state.params, evaluation.grads, evaluation.rows, self.mode)

    def moment_groups(self) -> dict[str, dict[str, np.ndarray]]:
        return {"adam_m": dict(self.adam.m), "adam_v": dict(self.adam.v)}

    def restore(self, groups: dict[str, dict[str, np.ndarray]], step: int):
        self.adam.m = {name: value.copy() for name, value in groups.get("adam_m", {}).items()}
        self.adam.v = {name: value.copy() for name, value in groups.get("adam_v", {}).items()}
        self.adam.step = int(step)


def xavier_bound(dim: int) -> float:
    return float(np.sqrt(6.0 / (dim + dim)))


def inverse_softplus(value: float) -> float:
    return float(np.log(np.expm1(value)))


def init_params(state: ModelState, seed: int | np.random.SeedSequence = 0,
                margin_init: float | None = None) -> ModelState:
    """Xavier-uniform embedding tables; the boundary projection stays 0.

    Raw margins are 0 (softplus image ln 2) unless margin_init gives the
    effective per-side margin to start from.
    """
    rng = np.random.default_rng(seed)
    bound = xavier_bound(state.dim)
    raw_margin = 0.0 if margin_init is None else inverse_softplus(margin_init)
    for name in state.params:
        if name in TABLE_NAMES:
            state.params[name][...] = rng.uniform(-bound, bound, size=state.params[name].shape)
        elif name in MARGIN_NAMES:
            state.params[name][...] = raw_margin
        else:
            state.params[name][...] = 0.0
    logger.debug(f"Initialized parameters with Xavier bound {bound:.4f}")
    return state
