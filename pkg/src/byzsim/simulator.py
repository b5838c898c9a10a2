"""Synchronous decentralized SGD: broadcast, sample, aggregate, GUF update.

Every round reads only the frozen broadcasts of that round, and every node
owns a private RNG stream derived from the root seed, so the execution
order of nodes inside a round cannot change the result.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .adversary import AdversaryView, AttackStrategy, byzantine_broadcast
from .aggregation import RuleConfig, aggregate, effective_n_hat, guf_update
from .errors import ConfigError, RuleInapplicableError
from .model import accuracy, make_model
from .topology import Topology, generate

log = logging.getLogger(__name__)

# spawn keys for the independent random streams of a run
_TOPOLOGY, _DATASET, _PARTITION, _INIT, _NODE, _ATTACK = range(6)


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass(frozen=True)
class SimulationConfig:
    n_benign: int = 10
    connection_ratio: float = 0.4
    byzantine_ratio: float = 0.0
    n_byzantine: int | None = None
    rule: str = "ubar"
    attack: str = "none"
    alpha: float | None = None
    rho: float = 0.4
    rho_central: float = 1.0 / 3.0
    strict_rules: bool = False
    lr0: float = 0.05
    fading: bool = True
    batch_size: int = 16
    iterations: int = 200
    eval_every: int | None = None
    model: str = "softmax"
    hidden: int = 16
    dataset: str = "synthetic"
    n_train: int = 2000
    n_test: int = 1000
    n_features: int = 10
    separation: float = 4.0
    data_dir: str = "."
    mnist_limit: int | None = None
    mnist_test_limit: int | None = 1000
    init_std: float = 0.01
    sigma: float = 1.0
    zeta: float = 1.0
    k0: int = 10
    target: int | None = None
    x_hat_scale: float = 1.0
    seed: int = 0
    timing: bool = True

    def __post_init__(self):
        if self.n_benign < 1:
            raise ConfigError("nodes must be >= 1")
        if not 0.0 < self.connection_ratio <= 1.0:
            raise ConfigError("connection_ratio must be in (0, 1]")
        if not 0.0 <= self.byzantine_ratio < 1.0:
            raise ConfigError("byzantine_ratio must be in [0, 1)")
        if self.lr0 < 0:
            raise ConfigError("lr0 must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.eval_every is not None and self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.model not in ("quadratic", "softmax", "mlp"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.dataset not in ("synthetic", "mnist"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.dataset == "mnist" and self.model == "quadratic":
            raise ConfigError("the quadratic model only runs on synthetic points")
        # surfaces rule/attack range errors early
        self.rule_config()
        self.attack_strategy()

    def rule_config(self) -> RuleConfig:
        return RuleConfig(self.rule, self.alpha, self.rho, self.rho_central, self.strict_rules)

    def attack_strategy(self) -> AttackStrategy:
        return AttackStrategy(self.attack, self.sigma, self.zeta, self.target,
                              self.x_hat_scale, self.k0)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def learning_rate(epoch: int, lr0: float) -> float:
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    return lr0 * 20.0 / (20.0 + epoch)


@dataclass
class NodeState:
    id: int
    estimate: np.ndarray
    shard: data_mod.DataShard
    rng: np.random.Generator
    byzantine: bool = False


@dataclass(frozen=True)
class EvalPoint:
    iteration: int
    epoch: int
    accuracies: tuple[float, ...]
    worst: float
    mean: float
    train_ms: float   # mean wall time per benign node per iteration since the last point
    agg_ms: float


@dataclass
class RunRecord:
    points: list[EvalPoint] = field(default_factory=list)
    total_train_ms: float = 0.0
    total_agg_ms: float = 0.0
    node_iterations: int = 0
    n_hat_lowered: int = 0

    @property
    def final(self) -> EvalPoint:
        return self.points[-1]

    @property
    def mean_train_ms(self) -> float:
        return self.total_train_ms / self.node_iterations if self.node_iterations else 0.0

    @property
    def mean_agg_ms(self) -> float:
        return self.total_agg_ms / self.node_iterations if self.node_iterations else 0.0


def evaluate_all(model, states, test: data_mod.Dataset) -> tuple[dict[int, float], float, float]:
    """Per-benign-node accuracy plus worst and mean; Byzantine nodes are skipped."""
    accs = {s.id: accuracy(model, s.estimate, test.features, test.labels)
            for s in states if not s.byzantine}
    values = list(accs.values())
    return accs, min(values), float(np.mean(values))


def load_datasets(cfg: SimulationConfig) -> tuple[data_mod.Dataset, data_mod.Dataset, int]:
    """Train set, test set and class count for the configured dataset."""
    rng = stream(cfg.seed, _DATASET)
    if cfg.dataset == "mnist":
        root = Path(cfg.data_dir)

        def find(stem):
            for name in (stem, stem + ".gz"):
                if (root / name).exists():
                    return root / name
            raise ConfigError(f"{stem}[.gz] not found in {root}")

        train = data_mod.load_idx(find("train-images-idx3-ubyte"),
                                  find("train-labels-idx1-ubyte"), cfg.mnist_limit)
        test = data_mod.load_idx(find("t10k-images-idx3-ubyte"),
                                 find("t10k-labels-idx1-ubyte"), cfg.mnist_test_limit)
        return train, test, 10
    n = cfg.n_train + cfg.n_test
    if cfg.model == "quadratic":
        full = data_mod.make_points(n, cfg.n_features, rng)
    else:
        full = data_mod.make_blobs(n, cfg.n_features, cfg.separation, rng)
    idx = np.arange(n)
    return full.subset(idx[:cfg.n_train]), full.subset(idx[cfg.n_train:]), 2


class Simulation:
    """One configured run.  ``topology`` and datasets may be injected for tests."""

    def __init__(self, cfg: SimulationConfig, topology: Topology | None = None,
                 train: data_mod.Dataset | None = None, test: data_mod.Dataset | None = None,
                 n_classes: int | None = None, x0: np.ndarray | None = None):
        self.cfg = cfg
        self.rule = cfg.rule_config()
        self.shadow_rule = replace(self.rule, strict=False)
        self.attack = cfg.attack_strategy()

        if topology is None:
            topology = generate(cfg.n_benign, cfg.connection_ratio, cfg.byzantine_ratio,
                                stream(cfg.seed, _TOPOLOGY), n_byzantine=cfg.n_byzantine)
        self.topology = topology

        if train is None:
            train, test, n_classes = load_datasets(cfg)
        self.train, self.test = train, test
        n_features = train.features.shape[1]
        self.model = make_model(cfg.model, n_features, n_classes or 2, cfg.hidden)

        self._check_rules()

        shards = data_mod.partition_iid(train, topology.n, stream(cfg.seed, _PARTITION))
        if x0 is None:
            x0 = stream(cfg.seed, _INIT).normal(0.0, cfg.init_std, size=self.model.dim)
        x0 = np.asarray(x0, dtype=np.float64)
        if x0.shape != (self.model.dim,):
            raise ConfigError(f"x0 has shape {x0.shape}, model expects ({self.model.dim},)")
        self.states = [
            NodeState(i, x0.copy(), shards[i], stream(cfg.seed, _NODE, i),
                      topology.is_byzantine(i))
            for i in range(topology.n)
        ]
        self.attack_rngs = {b: stream(cfg.seed, _ATTACK, b) for b in topology.byzantine}
        self.shard_size = max(len(s) for s in shards)
        self._previous: dict[int, np.ndarray] | None = None
        self.record = RunRecord()

    def _check_rules(self):
        if not self.rule.strict:
            return
        for i in self.topology.benign:
            m = self.topology.degree(i)
            if m:
                try:
                    effective_n_hat(self.rule, m)
                except RuleInapplicableError as exc:
                    raise RuleInapplicableError(f"node {i}: {exc}") from None

    def epoch(self, k: int) -> int:
        return math.ceil(k * self.cfg.batch_size / self.shard_size)

    def lr(self, k: int) -> float:
        if not self.cfg.fading:
            return self.cfg.lr0
        return learning_rate(self.epoch(k), self.cfg.lr0)

    @property
    def eval_every(self) -> int:
        if self.cfg.eval_every is not None:
            return self.cfg.eval_every
        return math.ceil(self.shard_size / self.cfg.batch_size)

    def broadcasts(self, k: int) -> dict[int, np.ndarray]:
        honest = {s.id: s.estimate.copy() for s in self.states}
        view = AdversaryView(honest, self.topology, k, self._previous)
        out = dict(honest)
        for b in sorted(self.topology.byzantine):
            out[b] = byzantine_broadcast(self.attack, view, b, self.attack_rngs[b])
        self._previous = honest
        return out

    def _node_update(self, s: NodeState, sent: dict[int, np.ndarray], lr: float):
        model = self.model
        t0 = time.perf_counter()
        batch = data_mod.sample_batch(s.shard, self.cfg.batch_size, s.rng)
        own_loss = model.loss(s.estimate, batch.features, batch.labels)
        grad = model.gradient(s.estimate, batch.features, batch.labels)
        t1 = time.perf_counter()

        nbrs = self.topology.neighbors(s.id)
        lowered = False
        if not nbrs:
            agg, alpha = s.estimate, 1.0
        else:
            rule = self.shadow_rule if s.byzantine else self.rule
            try:
                outcome = aggregate(rule, s.estimate, own_loss, {j: sent[j] for j in nbrs},
                                    lambda v: model.loss(v, batch.features, batch.labels))
            except RuleInapplicableError as exc:
                raise RuleInapplicableError(f"node {s.id}: {exc}") from None
            agg, alpha = outcome.aggregate, rule.alpha_for(len(nbrs))
            lowered = bool(outcome.diagnostics.get("n_hat_lowered"))
        t2 = time.perf_counter()
        new = guf_update(s.estimate, agg, grad, alpha, lr)
        return new, (t1 - t0) * 1e3, (t2 - t1) * 1e3, lowered

    def step(self, k: int, order=None) -> dict[int, tuple[float, float]]:
        """Advance every node from round ``k`` to ``k+1``; returns per-benign timing (ms)."""
        sent = self.broadcasts(k)
        lr = self.lr(k)
        order = range(len(self.states)) if order is None else order
        updates, timing = {}, {}
        for idx in order:
            s = self.states[idx]
            new, train_ms, agg_ms, lowered = self._node_update(s, sent, lr)
            updates[s.id] = new
            if not s.byzantine:
                timing[s.id] = (train_ms, agg_ms)
                self.record.n_hat_lowered += lowered
        for s in self.states:
            s.estimate = updates[s.id]
        return timing

    def _evaluate(self, k: int, train_ms: float, agg_ms: float):
        if not self.cfg.timing:
            train_ms = agg_ms = 0.0
        if self.model.classifier:
            accs, worst, mean = evaluate_all(self.model, self.states, self.test)
            values = tuple(accs.values())
        else:
            values, worst, mean = (), float("nan"), float("nan")
        self.record.points.append(
            EvalPoint(k, self.epoch(k), values, worst, mean, train_ms, agg_ms))

    def run(self) -> RunRecord:
        cfg = self.cfg
        n_benign = len(self.topology.benign)
        self._evaluate(0, 0.0, 0.0)
        window_train = window_agg = 0.0
        window_iters = 0
        for k in range(cfg.iterations):
            timing = self.step(k)
            it_train = sum(t for t, _ in timing.values())
            it_agg = sum(a for _, a in timing.values())
            window_train += it_train
            window_agg += it_agg
            window_iters += 1
            self.record.total_train_ms += it_train
            self.record.total_agg_ms += it_agg
            self.record.node_iterations += n_benign
            done = k + 1
            if done % self.eval_every == 0 or done == cfg.iterations:
                per = window_iters * n_benign
                self._evaluate(done, window_train / per, window_agg / per)
                window_train = window_agg = 0.0
                window_iters = 0
        if self.record.n_hat_lowered:
            log.info("n_hat lowered to fit %s on %d node-iterations",
                     cfg.rule, self.record.n_hat_lowered)
        if not cfg.timing:
            self.record.total_train_ms = self.record.total_agg_ms = 0.0
        return self.record


def run(cfg: SimulationConfig, **kwargs) -> RunRecord:
    return Simulation(cfg, **kwargs).run()
