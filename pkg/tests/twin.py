"""Twin-run harness for the targeted-injection attack and a linear-recurrence oracle."""
from dataclasses import replace

import numpy as np

from byzsim.simulator import Simulation, SimulationConfig
from byzsim.topology import Topology, shortest_path


def random_tree(n, rng):
    return [(int(rng.integers(v)), v) for v in range(1, n)]


def tree_case(rng, max_nodes=8):
    """Random tree whose Byzantine node is a leaf, plus a benign target."""
    n = int(rng.integers(3, max_nodes + 1))
    edges = random_tree(n, rng)
    deg = np.bincount(np.array(edges).ravel(), minlength=n)
    attacker = int(rng.choice(np.flatnonzero(deg == 1)))
    t = Topology.from_edges(n, edges, [attacker])
    target = int(rng.choice([i for i in t.benign]))
    return t, attacker, target


def chain_case(n=5):
    """Byzantine node at one end of an n-chain, target tau' = n-2 hops away.

    The far end stays benign and off-path, so the target has two neighbors.
    """
    t = Topology.from_edges(n, [(i, i + 1) for i in range(n - 2)] + [(0, n - 1)], [n - 1])
    return t, n - 1, n - 3


def twin_configs(t, target, k0=2, x_hat_scale=0.7, lr0=0.0, dim=3, seed=11):
    cfg = SimulationConfig(
        n_benign=len(t.benign), rule="average", attack="targeted", k0=k0, target=target,
        x_hat_scale=x_hat_scale, lr0=lr0, model="quadratic", n_features=dim,
        n_train=max(8 * t.n, 40), n_test=8, batch_size=4, seed=seed)
    return cfg, replace(cfg, attack="none")


def twin_delta(t, attacker, target, iterations, **kwargs):
    """Per-node estimate difference (attacked - clean) after each iteration."""
    attacked_cfg, clean_cfg = twin_configs(t, target, **kwargs)
    a = Simulation(attacked_cfg, topology=t)
    b = Simulation(clean_cfg, topology=t)
    deltas = []
    for k in range(iterations):
        a.step(k)
        b.step(k)
        deltas.append(np.stack([sa.estimate - sb.estimate for sa, sb in zip(a.states, b.states)]))
    return deltas, a


def tau(t, attacker, target):
    return len(shortest_path(t, attacker, target)) - 1


def recurrence_oracle(t, attacker, target, iterations, k0, x_hat, lrs):
    """Differences predicted by the linear recurrence of average-rule GUF with a quadratic loss.

    With identical batches in both runs, the gradient difference at a node is
    exactly its estimate difference, so
        D[k+1] = diag(a) D[k] + diag((1-a)/m) Adj B[k] - lr_k D[k],
    where B[k] is D[k] plus the injected offset on the attacker at k0.
    """
    n = t.n
    adj = np.zeros((n, n))
    for i, j in t.edges:
        adj[i, j] = adj[j, i] = 1.0
    m = adj.sum(1)
    alpha = 1.0 / (m + 1)
    mix = ((1 - alpha) / np.where(m > 0, m, 1))[:, None] * adj
    path = shortest_path(t, attacker, target)
    mult = np.prod([t.degree(i) + 1 for i in path[1:]])
    D = np.zeros((n, len(x_hat)))
    out = []
    for k in range(iterations):
        B = D.copy()
        if k == k0:
            B[attacker] += mult * np.asarray(x_hat)
        D = alpha[:, None] * D + mix @ B - lrs[k] * D
        out.append(D.copy())
    return out
