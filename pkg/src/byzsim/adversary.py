"""What Byzantine nodes broadcast.

Byzantine nodes keep an honest shadow estimate (they train like everyone
else), so bit-flip and targeted injection have an honest value to corrupt.
One vector is broadcast to all neighbors; there is no per-edge equivocation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import AttackError, ConfigError, NoPathError
from .topology import Topology, shortest_path

ATTACKS = ("none", "gaussian", "bitflip", "mhamdi", "targeted")


@dataclass(frozen=True)
class AttackStrategy:
    kind: str = "none"
    sigma: float = 1.0
    zeta: float = 1.0
    target: int | None = None   # None: farthest benign node from the attacker
    x_hat_scale: float = 1.0    # targeted shift is x_hat_scale * ones(d)
    k0: int = 10

    def __post_init__(self):
        if self.kind not in ATTACKS:
            raise ConfigError(f"unknown attack {self.kind!r}; choose from {', '.join(ATTACKS)}")
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")
        if not 0.0 < self.zeta <= 1.0:
            raise ConfigError("zeta must be in (0, 1]")
        if self.k0 < 0:
            raise ConfigError("k0 must be >= 0")


@dataclass(frozen=True)
class AdversaryView:
    """Read-only snapshot an attacker sees at iteration ``k``.

    ``broadcasts`` holds the honest values of the current round (benign
    broadcasts plus Byzantine shadows); ``previous`` the previous round's.
    """
    broadcasts: Mapping[int, np.ndarray]
    topology: Topology
    k: int
    previous: Mapping[int, np.ndarray] | None = None


def gaussian_attack(dim: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if not sigma > 0:
        raise ConfigError("sigma must be > 0")
    return rng.normal(0.0, sigma, size=dim)


def bitflip_attack(honest) -> np.ndarray:
    return -np.asarray(honest, dtype=np.float64)


def _benign_mean(view: AdversaryView, victim: int, snapshot):
    peers = [j for j in view.topology.neighbors(victim) if not view.topology.is_byzantine(j)]
    if not peers:
        return None
    return np.mean([snapshot[j] for j in peers], axis=0), peers


def mhamdi_attack(view: AdversaryView, victim: int, zeta: float,
                  rng: np.random.Generator | None = None, sigma: float = 1.0) -> np.ndarray:
    """Camouflaged push against the victim's benign consensus.

    The output sits at distance ``zeta * r`` from the benign mean ``mu``,
    where ``r`` is the benign spread around ``mu``, along the direction that
    undoes the benign progress since the previous round.
    """
    found = _benign_mean(view, victim, view.broadcasts)
    if found is None:
        if rng is None:
            raise AttackError(f"victim {victim} has no benign neighbors and no fallback RNG")
        dim = len(next(iter(view.broadcasts.values())))
        return gaussian_attack(dim, sigma, rng)
    mu, peers = found
    r = max(float(np.linalg.norm(view.broadcasts[j] - mu)) for j in peers)

    u = np.zeros_like(mu)
    u[0] = 1.0
    if view.previous is not None:
        prev = _benign_mean(view, victim, view.previous)
        if prev is not None:
            step = mu - prev[0]
            norm = np.linalg.norm(step)
            if norm > 0:
                u = -step / norm
    return mu + zeta * r * u


def path_multiplier(t: Topology, path) -> int:
    """prod(|N_i| + 1) over every node after the attacker on ``path``."""
    return math.prod(t.degree(i) + 1 for i in path[1:])


def targeted_injection(view: AdversaryView, attacker: int, target: int, x_hat) -> np.ndarray:
    """Single crafted broadcast that lands ``x_hat`` on ``target`` after tau' rounds.

    Exact when every node on the way runs the average rule with
    alpha = 1/(|N_i|+1) and the shortest attacker-target path is unique.
    """
    t = view.topology
    if t.is_byzantine(target):
        raise AttackError(f"target {target} is Byzantine")
    try:
        path = shortest_path(t, attacker, target)
    except Exception as exc:
        raise AttackError(f"no path from attacker {attacker} to target {target}") from exc
    if any(t.is_byzantine(i) for i in path[1:]):
        raise AttackError(f"shortest path {path} crosses another Byzantine node")
    x_hat = np.asarray(x_hat, dtype=np.float64)
    return np.asarray(view.broadcasts[attacker], dtype=np.float64) + path_multiplier(t, path) * x_hat


def default_target(t: Topology, attacker: int) -> int:
    """Benign node farthest from the attacker (lowest id among the farthest)."""
    best, best_len = None, -1
    for i in t.benign:
        try:
            length = len(shortest_path(t, attacker, i)) - 1
        except NoPathError:
            continue
        if length > best_len:
            best, best_len = i, length
    if best is None:
        raise AttackError(f"attacker {attacker} reaches no benign node")
    return best


def byzantine_broadcast(strategy: AttackStrategy, view: AdversaryView, node: int,
                        rng: np.random.Generator) -> np.ndarray:
    t = view.topology
    if not t.is_byzantine(node):
        raise AttackError(f"node {node} is not Byzantine")
    honest = np.asarray(view.broadcasts[node], dtype=np.float64)
    kind = strategy.kind
    if kind == "none":
        return honest
    if kind == "gaussian":
        return gaussian_attack(honest.shape[0], strategy.sigma, rng)
    if kind == "bitflip":
        return bitflip_attack(honest)
    if kind == "mhamdi":
        benign_peers = [j for j in t.neighbors(node) if not t.is_byzantine(j)]
        victim = benign_peers[0] if benign_peers else node
        return mhamdi_attack(view, victim, strategy.zeta, rng, strategy.sigma)
    if kind == "targeted":
        if view.k != strategy.k0:
            return honest
        target = strategy.target if strategy.target is not None else default_target(t, node)
        x_hat = np.full(honest.shape[0], strategy.x_hat_scale)
        return targeted_injection(view, node, target, x_hat)
    raise ConfigError(f"unknown attack {kind!r}")
