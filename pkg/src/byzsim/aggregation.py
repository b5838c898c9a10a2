"""Aggregation rules and the general update function (GUF).

All rules take the received estimates as a mapping ``neighbor id -> vector``
and return an :class:`AggregationOutcome`.  Ties on distance, score or loss
resolve toward the lower neighbor id; ties in per-coordinate closeness to a
median resolve toward the lower value, then the lower id.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError, RuleInapplicableError

RULES = ("average", "dkrum", "dmedian", "dbulyan", "bridge", "ubar")

# scores that agree to this relative precision count as tied
SCORE_RTOL = 1e-12


@dataclass(frozen=True)
class AggregationOutcome:
    aggregate: np.ndarray
    selected: tuple[int, ...]
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RuleConfig:
    rule: str = "ubar"
    alpha: float | None = None  # None: 1/(|N_i|+1) for average, 0.5 otherwise
    rho_i: float = 0.4
    rho_central: float = 1.0 / 3.0
    # strict: refuse to run when n_hat exceeds what DBulyan/BRIDGE tolerate,
    # instead of lowering n_hat for that node
    strict: bool = False

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigError(f"unknown rule {self.rule!r}; choose from {', '.join(RULES)}")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must be in [0, 1]")
        if not 0.0 < self.rho_i <= 1.0:
            raise ConfigError("rho must be in (0, 1]")
        if not 0.0 < self.rho_central < 1.0:
            raise ConfigError("rho_central must be in (0, 1)")

    def alpha_for(self, n_neighbors: int) -> float:
        if self.alpha is not None:
            return self.alpha
        if self.rule == "average":
            return 1.0 / (n_neighbors + 1)
        return 0.5


def _stack(est: Mapping[int, np.ndarray]) -> tuple[list[int], np.ndarray]:
    if len(est) == 0:
        raise ConfigError("no neighbor estimates to aggregate")
    ids = sorted(est)
    X = np.stack([np.asarray(est[j], dtype=np.float64) for j in ids])
    if X.ndim != 2:
        raise ConfigError("estimates must be flat vectors")
    return ids, X


def _argmin_low_id(values: np.ndarray) -> int:
    """Index of the minimum; near-equal values go to the earliest index."""
    m = values.min()
    return int(np.flatnonzero(values <= m + SCORE_RTOL * abs(m))[0])


def guf_update(x_i, aggregate, grad, alpha: float, lr: float) -> np.ndarray:
    x_i, aggregate, grad = (np.asarray(v, dtype=np.float64) for v in (x_i, aggregate, grad))
    if not x_i.shape == aggregate.shape == grad.shape:
        raise ConfigError(
            f"GUF dimension mismatch: {x_i.shape}, {aggregate.shape}, {grad.shape}")
    return alpha * x_i + (1.0 - alpha) * aggregate - lr * grad


def avg_rule(est: Mapping[int, np.ndarray]) -> AggregationOutcome:
    ids, X = _stack(est)
    return AggregationOutcome(X.mean(axis=0), tuple(ids))


def num_fault(n_neighbors: int, rho_i: float, rho_central: float) -> int:
    """Assumed Byzantine-neighbor bound ceil(|N_i| * min(1 - rho_i, rho_central))."""
    if n_neighbors < 1:
        raise ConfigError("num_fault needs at least one neighbor")
    # tolerate products such as 0.7 * 10 = 7.000000000000001
    return max(0, math.ceil(n_neighbors * min(1.0 - rho_i, rho_central) - 1e-9))


def max_tolerated(rule: str, n_neighbors: int) -> int | None:
    """Largest n_hat the rule can run with, or None if unconstrained."""
    if rule == "dbulyan":
        return max(0, (n_neighbors - 1) // 4)
    if rule == "bridge":
        return max(0, (n_neighbors - 1) // 2)
    return None


def krum_neighbors(n_neighbors: int, n_hat: int) -> int:
    """How many nearest peers enter a DKrum score."""
    return min(max(n_neighbors - n_hat - 2, 1), n_neighbors - 1)


def _pairwise_sq(X: np.ndarray) -> np.ndarray:
    # explicit differences rather than the Gram identity: exact zeros stay zero
    out = np.empty((X.shape[0], X.shape[0]))
    for j in range(X.shape[0]):
        diff = X - X[j]
        out[j] = np.einsum("ij,ij->i", diff, diff)
    return out


def _krum_pick(X: np.ndarray, n_hat: int, sq: np.ndarray | None = None):
    m = X.shape[0]
    if m == 1:
        return 0, np.zeros(1)
    if sq is None:
        sq = _pairwise_sq(X)
    k = krum_neighbors(m, n_hat)
    others = np.where(np.eye(m, dtype=bool), np.inf, sq)
    scores = np.sort(others, axis=1)[:, :k].sum(axis=1)
    return _argmin_low_id(scores), scores


def dkrum_rule(est: Mapping[int, np.ndarray], n_hat: int) -> AggregationOutcome:
    ids, X = _stack(est)
    best, scores = _krum_pick(X, n_hat)
    return AggregationOutcome(X[best].copy(), (ids[best],),
                              {"scores": dict(zip(ids, scores.tolist()))})


def dmedian_rule(est: Mapping[int, np.ndarray]) -> AggregationOutcome:
    ids, X = _stack(est)
    return AggregationOutcome(np.median(X, axis=0), tuple(ids))


def dbulyan_rule(est: Mapping[int, np.ndarray], n_hat: int) -> AggregationOutcome:
    ids, X = _stack(est)
    m = X.shape[0]
    beta = m - 4 * n_hat
    if beta < 1:
        raise RuleInapplicableError(
            f"DBulyan needs |N_i| >= 4*n_hat + 1, got |N_i|={m}, n_hat={n_hat}")

    sq = _pairwise_sq(X)
    remaining = list(range(m))
    chosen = []
    for _ in range(m - 2 * n_hat):
        sub = np.ix_(remaining, remaining)
        pick, _ = _krum_pick(X[remaining], n_hat, sq[sub])
        chosen.append(remaining.pop(pick))
    chosen.sort()

    S = X[chosen]
    med = np.median(S, axis=0)
    tiebreak_id = np.broadcast_to(np.arange(len(chosen))[:, None], S.shape)
    # closest to the median first; equal distances go to the lower node id
    order = np.lexsort((tiebreak_id, np.abs(S - med)), axis=0)[:beta]
    agg = np.take_along_axis(S, order, axis=0).mean(axis=0)
    return AggregationOutcome(agg, tuple(ids[c] for c in chosen), {"beta": beta})


def bridge_rule(est: Mapping[int, np.ndarray], n_hat: int) -> AggregationOutcome:
    ids, X = _stack(est)
    m = X.shape[0]
    if m <= 2 * n_hat:
        raise RuleInapplicableError(
            f"BRIDGE needs |N_i| > 2*n_hat, got |N_i|={m}, n_hat={n_hat}")
    trimmed = np.sort(X, axis=0)[n_hat:m - n_hat]
    return AggregationOutcome(trimmed.mean(axis=0), tuple(ids))


def ubar_select_count(n_neighbors: int, rho_i: float) -> int:
    return min(n_neighbors, max(1, math.floor(rho_i * n_neighbors + 1e-9)))


def ubar_rule(x_i, own_loss: float, est: Mapping[int, np.ndarray], rho_i: float,
              loss_eval: Callable[[np.ndarray], float]) -> AggregationOutcome:
    """Distance filter around the node's own estimate, then a loss test on its batch.

    ``loss_eval`` must score a candidate on the batch that produced ``own_loss``.
    """
    ids, X = _stack(est)
    x_i = np.asarray(x_i, dtype=np.float64)
    dist = np.linalg.norm(X - x_i, axis=1)
    n_s = ubar_select_count(len(ids), rho_i)
    # lexsort: primary key distance, secondary position (= ascending id)
    stage1 = np.sort(np.lexsort((np.arange(len(ids)), dist))[:n_s])
    losses = np.array([loss_eval(X[j]) for j in stage1])
    accepted = stage1[losses <= own_loss]
    if accepted.size:
        agg = X[accepted].mean(axis=0)
        selected = accepted
    else:
        best = stage1[_argmin_low_id(losses)]
        agg = X[best].copy()
        selected = np.array([best])
    return AggregationOutcome(agg, tuple(ids[j] for j in selected), {
        "distances": dict(zip(ids, dist.tolist())),
        "losses": {ids[j]: float(v) for j, v in zip(stage1, losses)},
        "stage1": tuple(ids[j] for j in stage1),
    })


def effective_n_hat(config: RuleConfig, n_neighbors: int) -> tuple[int, bool]:
    """n_hat for this node and whether it had to be lowered to fit the rule."""
    n_hat = num_fault(n_neighbors, config.rho_i, config.rho_central)
    cap = max_tolerated(config.rule, n_neighbors)
    if cap is None or n_hat <= cap:
        return n_hat, False
    if config.strict:
        raise RuleInapplicableError(
            f"{config.rule} cannot tolerate n_hat={n_hat} with {n_neighbors} neighbors "
            f"(at most {cap})")
    return cap, True


def aggregate(config: RuleConfig, x_i, own_loss: float, est: Mapping[int, np.ndarray],
              loss_eval: Callable[[np.ndarray], float] | None = None) -> AggregationOutcome:
    rule = config.rule
    if rule == "average":
        return avg_rule(est)
    if rule == "dmedian":
        return dmedian_rule(est)
    if rule == "ubar":
        if loss_eval is None:
            raise ConfigError("UBAR needs a loss evaluator")
        return ubar_rule(x_i, own_loss, est, config.rho_i, loss_eval)
    n_hat, clamped = effective_n_hat(config, len(est))
    if rule == "dkrum":
        out = dkrum_rule(est, n_hat)
    elif rule == "dbulyan":
        out = dbulyan_rule(est, n_hat)
    elif rule == "bridge":
        out = bridge_rule(est, n_hat)
    else:
        raise ConfigError(f"unknown rule {rule!r}")
    out.diagnostics.update(n_hat=n_hat, n_hat_lowered=clamped)
    return out
