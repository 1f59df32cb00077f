import logging
from dataclasses import dataclass, field

import numpy as np

from cflab.core.config import LossConfig
from cflab.core.errors import ConfigError, GradientCheckError
from cflab.data.sampler import Batch
from cflab.losses.router import LossRouter
from cflab.models.state import ModelState

logger = logging.getLogger(__name__)

EPS_RANGE = (1e-6, 1e-4)
REL_FLOOR = 1e-5


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    worst: tuple = ()
    errors: dict = field(default_factory=dict)

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def _touched_coordinates(state: ModelState, evaluation) -> list[tuple[str, tuple]]:
    coords = []
    for name in sorted(evaluation.grads):
        tensor = state.params[name]
        rows = evaluation.rows.get(name)
        if tensor.ndim == 1:
            index = np.arange(len(tensor)) if rows is None else rows
            coords.extend((name, (int(r),)) for r in index)
            continue
        index = np.arange(tensor.shape[0]) if rows is None else rows
        for r in index:
            coords.extend((name, (int(r), c)) for c in range(tensor.shape[1]))
    return coords


def grad_check(config: LossConfig, state: ModelState, batch: Batch, eps: float = 1e-5,
               encoder=None, max_coords: int = 400, seed: int = 0) -> GradCheckResult:
    """Central differences against the analytic gradient on the coordinates a batch touches.

    Above max_coords touched coordinates a random subsample of that size is checked.
    """
    if not EPS_RANGE[0] <= eps <= EPS_RANGE[1]:
        raise ConfigError(f"eps must lie in [{EPS_RANGE[0]}, {EPS_RANGE[1]}], got {eps}")

    router = LossRouter(config, encoder)
    work = state.copy()
    evaluation = router.evaluate(work, batch)
    if not np.isfinite(evaluation.value):
        raise GradientCheckError(f"{config.kind} loss is not finite at the check point: {evaluation.value}")

    coords = _touched_coordinates(work, evaluation)
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in np.sort(picked)]

    worst = ()
    max_error = 0.0
    errors = {}
    for name, index in coords:
        tensor = work.params[name]
        original = tensor[index]
        tensor[index] = original + eps
        plus = router.value(work, batch)
        tensor[index] = original - eps
        minus = router.value(work, batch)
        tensor[index] = original
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise GradientCheckError(f"{config.kind} loss turned non-finite while perturbing {name}{list(index)}")

        numeric = (plus - minus) / (2.0 * eps)
        analytic = float(evaluation.grads[name][index])
        error = relative_error(analytic, numeric)
        errors[(name,) + index] = error
        if error > max_error or not worst:
            max_error = max(max_error, error)
            worst = (name, index, analytic, numeric)

    logger.debug(f"grad_check {config.kind}: {len(coords)} coordinates, max rel error {max_error:.3e}")
    return GradCheckResult(max_error, len(coords), worst, errors)
