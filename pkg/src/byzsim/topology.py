"""Communication graphs with benign/Byzantine labelling.

Benign nodes get ids ``0 .. n_benign-1`` and Byzantine nodes follow, so a
node's role can be read off its id as well as from ``byzantine``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, NoPathError, TopologyError


@dataclass(frozen=True)
class Topology:
    n: int
    edges: frozenset[tuple[int, int]]
    byzantine: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        norm = set()
        for i, j in self.edges:
            if i == j:
                raise TopologyError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TopologyError(f"edge ({i}, {j}) references a node outside 0..{self.n - 1}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        object.__setattr__(self, "byzantine", frozenset(self.byzantine))
        if any(not 0 <= b < self.n for b in self.byzantine):
            raise TopologyError("byzantine id outside node range")

    @classmethod
    def from_edges(cls, n, edges, byzantine=()):
        return cls(n, frozenset(map(tuple, edges)), frozenset(byzantine))

    @cached_property
    def _adjacency(self) -> tuple[tuple[int, ...], ...]:
        adj = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return tuple(tuple(sorted(a)) for a in adj)

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self._adjacency[i]

    def degree(self, i: int) -> int:
        return len(self._adjacency[i])

    @property
    def benign(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n) if i not in self.byzantine)

    def is_byzantine(self, i: int) -> bool:
        return i in self.byzantine

    def save_edgelist(self, path) -> None:
        """Write ``<id> <id>`` lines, edges between benign nodes first."""
        def key(e):
            return (any(v in self.byzantine for v in e), e)

        lines = ["# byzantine: " + " ".join(map(str, sorted(self.byzantine)))]
        lines += [f"{i} {j}" for i, j in sorted(self.edges, key=key)]
        Path(path).write_text("\n".join(lines) + "\n")


def _bfs(t: Topology, source: int, allowed=None) -> dict[int, int]:
    """Predecessor map of a BFS that expands neighbors in ascending id order."""
    pred = {source: -1}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in t.neighbors(u):
            if v not in pred and (allowed is None or v in allowed):
                pred[v] = u
                queue.append(v)
    return pred


def benign_connected(t: Topology) -> bool:
    benign = set(t.benign)
    if len(benign) <= 1:
        return True
    return len(_bfs(t, min(benign), benign)) == len(benign)


def shortest_path(t: Topology, source: int, target: int) -> list[int]:
    """One shortest path including both endpoints.

    Among equally short paths the lexicographically smallest node sequence
    is returned (each step takes the lowest-id node that still lies on a
    shortest path).
    """
    for v in (source, target):
        if not 0 <= v < t.n:
            raise TopologyError(f"node {v} does not exist")
    # distances from the target let us walk forward greedily from the source
    dist = {target: 0}
    queue = deque([target])
    while queue:
        u = queue.popleft()
        for v in t.neighbors(u):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    if source not in dist:
        raise NoPathError(f"no path from {source} to {target}")
    path = [source]
    while path[-1] != target:
        u = path[-1]
        path.append(min(v for v in t.neighbors(u) if dist.get(v) == dist[u] - 1))
    return path


def benign_diameter(t: Topology) -> int:
    benign = set(t.benign)
    if not benign_connected(t):
        raise TopologyError("benign subgraph is disconnected")
    best = 0
    for s in benign:
        dist = {s: 0}
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in t.neighbors(u):
                if v in benign and v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        best = max(best, max(dist.values()))
    return best


def byzantine_count(n_benign: int, byzantine_ratio: float) -> int:
    """Byzantine nodes needed so that byz / total reaches ``byzantine_ratio``."""
    exact = n_benign * byzantine_ratio / (1.0 - byzantine_ratio)
    # guard against 30*0.5/0.5 style products landing a hair above an integer
    return math.ceil(exact - 1e-9)


def generate(n_benign: int, connection_ratio: float, byzantine_ratio: float,
             rng: np.random.Generator, n_byzantine: int | None = None,
             max_retries: int = 1000) -> Topology:
    """Random benign graph (retried until connected) plus attached Byzantine nodes.

    ``n_byzantine`` overrides the count derived from ``byzantine_ratio``.
    """
    if n_benign < 2:
        raise ConfigError("n_benign must be >= 2")
    if not 0.0 < connection_ratio <= 1.0:
        raise ConfigError("connection_ratio must be in (0, 1]")
    if not 0.0 <= byzantine_ratio < 1.0:
        raise ConfigError("byzantine_ratio must be in [0, 1)")
    if n_byzantine is None:
        n_byzantine = byzantine_count(n_benign, byzantine_ratio)
    elif n_byzantine < 0:
        raise ConfigError("n_byzantine must be >= 0")

    pairs = [(i, j) for i in range(n_benign) for j in range(i + 1, n_benign)]
    for _ in range(max_retries):
        keep = rng.random(len(pairs)) < connection_ratio
        edges = {p for p, k in zip(pairs, keep) if k}
        if benign_connected(Topology(n_benign, frozenset(edges))):
            break
    else:
        raise TopologyError(
            f"benign graph with n={n_benign}, p={connection_ratio} not connected "
            f"after {max_retries} attempts")

    n = n_benign + n_byzantine
    for b in range(n_benign, n):
        attach = np.flatnonzero(rng.random(n_benign) < connection_ratio)
        if attach.size == 0:
            attach = [int(rng.integers(n_benign))]
        edges.update((int(i), b) for i in attach)
    return Topology(n, frozenset(edges), frozenset(range(n_benign, n)))
