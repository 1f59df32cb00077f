"""Numeric checks of the identities and limits that connect the losses.

Exact identities are asserted at a fixed tolerance; asymptotic relations are
asserted as trends of the trial-averaged discrepancy along a sweep.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd

from cflab.core.config import LossConfig
from cflab.core.errors import ConfigError
from cflab.data.sampler import Batch
from cflab.losses.alignment import directau, mawu
from cflab.losses.base import margin_cosine, softmax_cross_entropy
from cflab.losses.pairwise import bpr
from cflab.losses.setwise import bc, ssm
from cflab.models.state import ModelState

logger = logging.getLogger(__name__)

EXACT_TOL = 1e-12
ALGEBRA_TOL = 1e-10
LIMIT_TOL = 1e-2

TAU_ZERO_SWEEP = (1.0, 0.1, 0.01, 0.001)
TAU_INF_SWEEP = (1.0, 10.0, 100.0)
NUM_NEG_SWEEP = (10, 100, 1000, 10000)
ROTATION_PARTS = ("a", "b", "b_regroup", "c")


@dataclass
class RelationReport:
    relation: str
    sweep_name: str
    sweep_values: list
    mean_disc: list[float]
    max_disc: list[float]
    passed: bool
    tolerance: Optional[float] = None
    criterion: str = "max"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "relation": self.relation,
            "sweep_name": self.sweep_name,
            "sweep_values": list(self.sweep_values),
            "mean_disc": [float(v) for v in self.mean_disc],
            "max_disc": [float(v) for v in self.max_disc],
            "passed": bool(self.passed),
            "tolerance": self.tolerance,
            "criterion": self.criterion,
            "extra": self.extra,
        }

    def rows(self) -> list[dict]:
        return [
            {"relation": self.relation, "sweep_value": value, "mean_disc": mean, "max_disc": worst}
            for value, mean, worst in zip(self.sweep_values, self.mean_disc, self.max_disc)
        ]


def _trial_rngs(trials: int, seed: int) -> list[np.random.Generator]:
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(trials)]


def random_unit(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    x = rng.normal(size=(n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _state(user_emb: np.ndarray, item_emb: np.ndarray) -> ModelState:
    state = ModelState.create(len(user_emb), len(item_emb), user_emb.shape[1])
    state.params["user_emb"][...] = user_emb
    state.params["item_emb"][...] = item_emb
    return state


def _triplet_batch(rng: np.random.Generator, size: int, num_neg: int, dim: int = 8,
                   near_parallel: bool = False) -> tuple[ModelState, Batch]:
    """`size` users each with one positive and `num_neg` private negatives."""
    users = random_unit(rng, size, dim)
    items = random_unit(rng, size * (1 + num_neg), dim)
    if near_parallel:
        items[size:] = np.repeat(items[:size], num_neg, axis=0) + 1e-9 * rng.normal(size=(size * num_neg, dim))
    negatives = size + np.arange(size * num_neg).reshape(size, num_neg)
    batch = Batch(np.arange(size), np.arange(size), negatives, np.ones((size, num_neg), dtype=bool))
    return _state(users, items), batch


def _exact_report(relation: str, sweep_name: str, sweep_values: list, discs: list[list[float]],
                  tolerance: float, extra: Optional[dict] = None) -> RelationReport:
    means = [float(np.mean(d)) for d in discs]
    worsts = [float(np.max(d)) for d in discs]
    passed = all(w <= tolerance for w in worsts)
    return RelationReport(relation, sweep_name, list(sweep_values), means, worsts, passed, tolerance, "max", extra or {})


def _trend_report(relation: str, sweep_name: str, sweep_values: list, discs: list[list[float]],
                  final_tolerance: Optional[float], strict: bool = False, extra: Optional[dict] = None) -> RelationReport:
    means = [float(np.mean(d)) for d in discs]
    worsts = [float(np.max(d)) for d in discs]
    steps = np.diff(means)
    monotone = bool(np.all(steps < 0)) if strict else bool(np.all(steps <= 1e-15))
    passed = monotone and (final_tolerance is None or means[-1] <= final_tolerance)
    criterion = "strictly_decreasing" if strict else "non_increasing"
    return RelationReport(relation, sweep_name, list(sweep_values), means, worsts, passed, final_tolerance,
                          criterion, extra or {})


SSM_BPR_TRIALS = 1000


def check_ssm_equals_bpr(trials: int = SSM_BPR_TRIALS, seed: int = 0) -> RelationReport:
    """Sampled softmax with one negative and tau = 1 is BPR, checked over `trials` random batches."""
    discs = []
    for t, rng in enumerate(_trial_rngs(trials, seed)):
        state, batch = _triplet_batch(rng, 8, 1, near_parallel=(t % 4 == 3))
        left = ssm(state, batch, LossConfig(kind="SSM", tau=1.0)).value
        right = bpr(state, batch, LossConfig(kind="BPR")).value
        discs.append(abs(left - right))
    return _exact_report("ssm_bpr", "num_negatives", [1], [discs], EXACT_TOL, {"trials": len(discs)})


def check_bc_zero_margin(trials: int = 20, seed: int = 0, taus=(0.1, 1.0), sizes=(1, 30)) -> RelationReport:
    """BC with zero margins reduces to sampled softmax."""
    rngs = _trial_rngs(trials, seed)
    discs = []
    for tau in taus:
        row = []
        for num_neg in sizes:
            for rng in rngs:
                state, batch = _triplet_batch(rng, 8, num_neg)
                left = bc(state, batch, LossConfig(kind="BC", tau=tau, margin_mode="zero")).value
                right = ssm(state, batch, LossConfig(kind="SSM", tau=tau)).value
                row.append(abs(left - right))
        discs.append(row)
    return _exact_report("bc_zero_margin", "tau", list(taus), discs, EXACT_TOL, {"num_negatives": list(sizes)})


def _separated_instance(rng: np.random.Generator, num_neg: int, dim: int, gap: float = 0.05):
    """One user, one positive, `num_neg` negatives with the hardest negative clear of ties and the hinge kink."""
    while True:
        user = random_unit(rng, 1, dim)
        items = random_unit(rng, 1 + num_neg, dim)
        s = items @ user[0]
        top = np.sort(s[1:])[::-1]
        if top[0] - top[1] >= gap and abs(top[0] - s[0]) >= gap:
            return user, items


def check_tau_zero_limit(taus=TAU_ZERO_SWEEP, trials: int = 20, seed: int = 0,
                         num_neg: int = 5, dim: int = 8) -> RelationReport:
    """tau * SSM tends to the hinge on the hardest negative as tau goes to 0."""
    taus = list(taus)
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise ConfigError("tau_zero sweep must be strictly descending")
    discs = [[] for _ in taus]
    for rng in _trial_rngs(trials, seed):
        user, items = _separated_instance(rng, num_neg, dim)
        state = _state(user, items)
        batch = Batch([0], [0], np.arange(1, num_neg + 1)[None, :], np.ones((1, num_neg), dtype=bool))
        s = items @ user[0]
        hinge = max(s[1:].max() - s[0], 0.0)
        for k, tau in enumerate(taus):
            value = ssm(state, batch, LossConfig(kind="SSM", tau=tau)).value
            discs[k].append(abs(tau * value - hinge))
    return _trend_report("tau_zero", "tau", taus, discs, LIMIT_TOL)


def check_tau_inf_limit(taus=TAU_INF_SWEEP, trials: int = 20, seed: int = 0,
                        num_neg: int = 30, dim: int = 8) -> RelationReport:
    """tau * (SSM - log(|N| + 1)) tends to the candidate-set mean similarity minus s(u,i).

    The candidate set is the positive plus the negatives; its gap to the
    negatives-only mean shrinks like 1/|N| and is reported as approx_residual.
    """
    taus = list(taus)
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise ConfigError("tau_inf sweep must be strictly ascending")
    if num_neg < 1:
        raise ConfigError(f"num_neg must be >= 1, got {num_neg}")
    discs = [[] for _ in taus]
    residuals = []
    for rng in _trial_rngs(trials, seed):
        user = random_unit(rng, 1, dim)
        items = random_unit(rng, 1 + num_neg, dim)
        state = _state(user, items)
        batch = Batch([0], [0], np.arange(1, num_neg + 1)[None, :], np.ones((1, num_neg), dtype=bool))
        s = items @ user[0]
        target = -s[0] + s.mean()
        residuals.append(abs(s.mean() - s[1:].mean()))
        for k, tau in enumerate(taus):
            value = ssm(state, batch, LossConfig(kind="SSM", tau=tau)).value
            discs[k].append(abs(tau * (value - np.log(num_neg + 1)) - target))
    extra = {"num_negatives": num_neg, "approx_residual": float(np.mean(residuals))}
    return _trend_report("tau_inf", "tau", taus, discs, LIMIT_TOL, extra=extra)


def check_num_neg_limit(sizes=NUM_NEG_SWEEP, tau: float = 0.2, trials: int = 20, seed: int = 0,
                        population: int = 50_000, dim: int = 8) -> RelationReport:
    """SSM - log|N| tends to the population log-mean-exp form as |N| grows."""
    sizes = [int(n) for n in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ConfigError("num_neg sweep must be strictly ascending")
    pop_rng, *rngs = _trial_rngs(trials + 1, seed)
    items = random_unit(pop_rng, population, dim)

    discs = [[] for _ in sizes]
    for rng in rngs:
        user = random_unit(rng, 1, dim)[0]
        pos = random_unit(rng, 1, dim)[0]
        s_pos = float(pos @ user)
        s_all = items @ user
        log_mean = np.logaddexp.reduce(s_all / tau) - np.log(population)
        target = -s_pos / tau + log_mean
        for k, n in enumerate(sizes):
            s_neg = s_all[rng.integers(0, population, size=n)]
            loss, _ = softmax_cross_entropy(np.array([s_pos / tau]), (s_neg / tau)[None, :], np.ones((1, n), dtype=bool))
            discs[k].append(abs(loss[0] - np.log(n) - target))
    return _trend_report("num_neg", "num_negatives", sizes, discs, None, strict=True,
                         extra={"tau": tau, "population": population})


def _rotate(vectors: np.ndarray, angles: np.ndarray) -> np.ndarray:
    c, s = np.cos(angles), np.sin(angles)
    return np.stack([c * vectors[:, 0] - s * vectors[:, 1], s * vectors[:, 0] + c * vectors[:, 1]], axis=1)


def _wrapped(delta: np.ndarray) -> np.ndarray:
    return (delta + np.pi) % (2 * np.pi) - np.pi


def _rotation_instance(rng: np.random.Generator, num_users: int, num_items: int, pairs: int, edge: float = 0.05):
    """Planar embeddings, margins in [0, pi/4] and a random interaction set.

    Pairs too close to the arccos endpoints or the clamp boundary are dropped.
    """
    while True:
        phi_u = rng.uniform(-np.pi, np.pi, num_users)
        phi_i = rng.uniform(-np.pi, np.pi, num_items)
        margin_u = rng.uniform(0.0, np.pi / 4, num_users)
        margin_i = rng.uniform(0.0, np.pi / 4, num_items)
        edges = np.unique(np.stack([rng.integers(0, num_users, pairs), rng.integers(0, num_items, pairs)], axis=1), axis=0)
        u, i = edges[:, 0], edges[:, 1]
        theta = np.abs(_wrapped(phi_i[i] - phi_u[u]))
        total = theta + margin_u[u] + margin_i[i]
        keep = (theta >= edge) & (theta <= np.pi - edge) & (total <= np.pi - edge)
        if keep.any():
            return phi_u, phi_i, margin_u, margin_i, u[keep], i[keep]


def check_rotation_compactness(trials: int = 20, seed: int = 0, num_users: int = 8, num_items: int = 8,
                     pairs: int = 12) -> RelationReport:
    """Planar checks of the margin-rotation compactness rewriting.

    a) per pair, the margin cosine equals the inner product of the rotated pair,
       rotating u by -sigma M_u and i by +sigma M_i where sigma orients u towards i;
    b) sum ||R_u v_u - R_i v_i||^2 = 2|D| - 2 sum (R_u v_u).(R_i v_i), and its
       regrouping into per-user and per-item terms around rotated centroids;
    c) ||v - c||^2 = 2 v.(v - c) + ||c||^2 - ||v||^2 for every centroid term.
    """
    discs = {part: [] for part in ROTATION_PARTS}
    for rng in _trial_rngs(trials, seed):
        phi_u, phi_i, margin_u, margin_i, u, i = _rotation_instance(rng, num_users, num_items, pairs)
        v_user = np.stack([np.cos(phi_u), np.sin(phi_u)], axis=1)
        v_item = np.stack([np.cos(phi_i), np.sin(phi_i)], axis=1)

        s = np.sum(v_user[u] * v_item[i], axis=1)
        ma, _, _ = margin_cosine(s, margin_u[u] + margin_i[i])
        sigma = np.sign(_wrapped(phi_i[i] - phi_u[u]))
        ru = _rotate(v_user[u], -sigma * margin_u[u])
        ri = _rotate(v_item[i], sigma * margin_i[i])
        discs["a"].append(float(np.max(np.abs(-ma - (-np.sum(ru * ri, axis=1))))))

        # Fixed per-id rotations for the global rewriting.
        a = _rotate(v_user, -margin_u)
        b = _rotate(v_item, margin_i)
        lhs = np.sum(np.sum((a[u] - b[i]) ** 2, axis=1))
        rewrite = 2 * len(u) - 2 * np.sum(np.sum(a[u] * b[i], axis=1))
        discs["b"].append(abs(lhs - rewrite))

        user_count = np.bincount(u, minlength=num_users)
        item_count = np.bincount(i, minlength=num_items)
        c_user = np.zeros_like(v_user)
        c_item = np.zeros_like(v_item)
        np.add.at(c_user, u, b[i])
        np.add.at(c_item, i, a[u])
        c_user /= np.maximum(user_count, 1)[:, None]
        c_item /= np.maximum(item_count, 1)[:, None]
        back_user = _rotate(c_user, margin_u)
        back_item = _rotate(c_item, -margin_i)
        regroup = (np.sum(user_count * np.sum(v_user * (v_user - back_user), axis=1))
                   + np.sum(item_count * np.sum(v_item * (v_item - back_item), axis=1)))
        discs["b_regroup"].append(abs(lhs - regroup))

        worst = 0.0
        for v, c in ((v_user, back_user), (v_item, back_item)):
            left = np.sum((v - c) ** 2, axis=1)
            right = 2 * np.sum(v * (v - c), axis=1) + np.sum(c * c, axis=1) - np.sum(v * v, axis=1)
            worst = max(worst, float(np.max(np.abs(left - right))))
        discs["c"].append(worst)

    tolerances = {"a": EXACT_TOL, "b": ALGEBRA_TOL, "b_regroup": ALGEBRA_TOL, "c": ALGEBRA_TOL}
    means = [float(np.mean(discs[p])) for p in ROTATION_PARTS]
    worsts = [float(np.max(discs[p])) for p in ROTATION_PARTS]
    passed = all(w <= tolerances[p] for p, w in zip(ROTATION_PARTS, worsts))
    return RelationReport("rotation_compactness", "part", list(range(1, len(ROTATION_PARTS) + 1)), means, worsts, passed,
                          ALGEBRA_TOL, "max", {"parts": list(ROTATION_PARTS), "tolerances": tolerances})


def check_mawu_directau(trials: int = 20, seed: int = 0, gammas=(0.5, 1.0, 2.0), size: int = 16) -> RelationReport:
    """Zero-margin MAWU equals half of DirectAU at twice the weight, minus one; gradients halve too."""
    rngs = _trial_rngs(trials, seed)
    discs = []
    for gamma in gammas:
        row = []
        for rng in rngs:
            state = _state(random_unit(rng, size, 8), random_unit(rng, size, 8))
            batch = Batch.positives_only(rng.permutation(size), rng.permutation(size))
            left = mawu(state, batch, LossConfig(kind="MAWU", gamma1=gamma, gamma2=gamma, margin_mode="zero"))
            right = directau(state, batch, LossConfig(kind="DirectAU", gamma=2 * gamma))
            disc = abs(left.value - (0.5 * right.value - 1.0))
            for name in sorted(set(left.grads) | set(right.grads)):
                g_left = left.grads.get(name, 0.0)
                g_right = right.grads.get(name, 0.0)
                disc = max(disc, float(np.max(np.abs(g_left - 0.5 * g_right))))
            row.append(disc)
        discs.append(row)
    return _exact_report("mawu_directau", "gamma", list(gammas), discs, ALGEBRA_TOL)


RELATIONS: dict[str, Callable[..., RelationReport]] = {
    "ssm_bpr": check_ssm_equals_bpr,
    "bc_zero_margin": check_bc_zero_margin,
    "tau_zero": check_tau_zero_limit,
    "tau_inf": check_tau_inf_limit,
    "num_neg": check_num_neg_limit,
    "rotation_compactness": check_rotation_compactness,
    "mawu_directau": check_mawu_directau,
}
DEFAULT_RELATIONS = ("ssm_bpr", "bc_zero_margin", "tau_zero", "tau_inf", "num_neg", "rotation_compactness")


def run_relations(only: Optional[list[str]] = None, trials: Optional[int] = None, seed: int = 0) -> list[RelationReport]:
    """trials=None lets each check use its own default trial count."""
    names = list(only) if only else list(DEFAULT_RELATIONS)
    unknown = [name for name in names if name not in RELATIONS]
    if unknown:
        raise ConfigError(f"Unknown relation(s) {unknown}, try {sorted(RELATIONS)}")

    reports = []
    for name in names:
        report = RELATIONS[name](seed=seed) if trials is None else RELATIONS[name](trials=trials, seed=seed)
        status = "PASS" if report.passed else "FAIL"
        log = logger.info if report.passed else logger.error
        log(f"[{status}] {name}: max discrepancy {max(report.max_disc):.3e} over {report.sweep_name}={report.sweep_values}")
        reports.append(report)
    return reports


def write_relations(reports: list[RelationReport], out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "relations.json"
    csv_path = out_dir / "relations.csv"
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump([r.to_dict() for r in reports], f, indent=2, sort_keys=True)
    rows = [row for r in reports for row in r.rows()]
    pd.DataFrame(rows, columns=["relation", "sweep_value", "mean_disc", "max_disc"]).to_csv(
        csv_path, index=False, float_format="%.6e"
    )
    return json_path, csv_path
