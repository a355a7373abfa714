"""Seeded agent-based runs of the marketplace.

One owner deploys a contract holding a model trained on part of a synthetic
dataset. Good contributors add correctly labelled samples, malicious ones
flip labels, verifiers inspect a fraction of new contributions and challenge
wrong labels, and the owner settles challenges against ground truth. Every
block appends one row of metrics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import contract as mc
from . import models
from .cas import MemoryStore, digest
from .contract import IncentiveParams
from .ledger import COIN, DEFAULT_BLOCKTIME, Address, ContractEvent, Ledger, TxLogRow
from .models import Sample

GOOD = "good"
MALICIOUS = "malicious"
VERIFIER = "verifier"
OWNER = "owner"
ROLES = (GOOD, MALICIOUS, VERIFIER, OWNER)

SECONDS_PER_DAY = 86_400


def blocks_per_day(blocktime: int = DEFAULT_BLOCKTIME) -> int:
    return SECONDS_PER_DAY // blocktime


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataSpec:
    """Two classes, each a mixture of two isotropic Gaussian blobs.

    Class means sit at +/- margin/2 along a random unit direction; the two
    blobs of a class are offset by +/- spread along an orthogonal direction.
    """

    dimension: int = 10
    classes: int = 2
    margin: float = 2.0
    spread: float = 1.0
    noise: float = 1.0
    train_size: int = 1000
    test_size: int = 500

    def validate(self) -> None:
        if self.dimension < 2:
            raise ConfigError("data.dimension must be at least 2")
        if self.classes != 2:
            raise ConfigError("only binary data (data.classes = 2) is supported")
        if self.train_size < 1 or self.test_size < 1:
            raise ConfigError("train and test sizes must be at least 1")
        if self.margin < 0 or self.spread < 0 or self.noise <= 0:
            raise ConfigError("margin and spread must be >= 0 and noise > 0")


class GroundTruth:
    """Source of fresh samples that remembers the true label of each one."""

    def __init__(self, spec: DataSpec, rng: np.random.Generator):
        spec.validate()
        self.spec = spec
        basis, _ = np.linalg.qr(rng.standard_normal((spec.dimension, 2)))
        u, v = basis[:, 0], basis[:, 1]
        self._centers = np.array([
            [-spec.margin / 2 * u - spec.spread * v, -spec.margin / 2 * u + spec.spread * v],
            [spec.margin / 2 * u - spec.spread * v, spec.margin / 2 * u + spec.spread * v],
        ])
        self._labels: dict[tuple[float, ...], int] = {}

    def draw(self, rng: np.random.Generator, n: int = 1) -> list[Sample]:
        out = []
        while len(out) < n:
            label = int(rng.integers(2))
            blob = int(rng.integers(2))
            x = self._centers[label, blob] + self.spec.noise * rng.standard_normal(self.spec.dimension)
            feats = tuple(float(v) for v in x)
            if feats in self._labels:
                continue
            self._labels[feats] = label
            out.append(Sample(feats, label))
        return out

    def label_of(self, features) -> int | None:
        return self._labels.get(tuple(float(v) for v in features))

    def __call__(self, features) -> int | None:
        return self.label_of(features)


def generate_data(spec: DataSpec, seed: int):
    """Return ``(train, test, truth)``; disjoint and deterministic per seed."""
    rng = np.random.default_rng(seed)
    truth = GroundTruth(spec, rng)
    train = truth.draw(rng, spec.train_size)
    test = truth.draw(rng, spec.test_size)
    return train, test, truth


@dataclass(frozen=True)
class AgentSpec:
    name: str
    role: str
    initial_balance: int = 0
    rate: float = 0.0  # contributions per block
    flip_probability: float | None = None
    coverage: float = 1.0
    max_contributions: int | None = None

    @property
    def address(self) -> Address:
        return Address.from_label(self.name)

    @property
    def flip(self) -> float:
        if self.flip_probability is not None:
            return self.flip_probability
        return 1.0 if self.role == MALICIOUS else 0.0

    def validate(self) -> None:
        if self.role not in ROLES:
            raise ConfigError(f"agent {self.name}: unknown role {self.role!r}")
        if self.initial_balance < 0 or self.rate < 0:
            raise ConfigError(f"agent {self.name}: balance and rate must be >= 0")
        if not (0.0 <= self.flip <= 1.0 and 0.0 <= self.coverage <= 1.0):
            raise ConfigError(f"agent {self.name}: probabilities must lie in [0, 1]")
        if self.max_contributions is not None and self.max_contributions < 0:
            raise ConfigError(f"agent {self.name}: max_contributions must be >= 0")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    blocks: int = 200
    blocktime: int = DEFAULT_BLOCKTIME
    params: IncentiveParams = mc.DEFAULT_PARAMS
    pool_funding: int = 50 * COIN
    data: DataSpec = DataSpec()
    agents: tuple[AgentSpec, ...] = ()
    model_kind: str = "perceptron"
    learning_rate: float = 1.0
    initial_fraction: float = 0.8
    initial_epochs: int = 1
    # blocks at the end of a run during which nobody contributes, so that
    # every deposit can settle; defaults to timeout + 2
    settle_blocks: int | None = None

    @property
    def settle(self) -> int:
        return self.params.timeout + 2 if self.settle_blocks is None else self.settle_blocks

    @property
    def owner(self) -> AgentSpec:
        return next(a for a in self.agents if a.role == OWNER)

    def validate(self) -> None:
        self.data.validate()
        try:
            self.params.validate()
        except mc.InvalidParams as exc:
            raise ConfigError(str(exc)) from None
        if self.blocks < 1 or self.blocktime < 1:
            raise ConfigError("run.blocks and run.blocktime must be positive")
        if not 0.0 < self.initial_fraction <= 1.0:
            raise ConfigError("model.initial_fraction must lie in (0, 1]")
        if self.initial_epochs < 0:
            raise ConfigError("model.initial_epochs must be >= 0")
        if self.model_kind not in models.MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model_kind!r}")
        if not any(a.role == OWNER for a in self.agents):
            raise ConfigError("a scenario needs an agent with role owner")
        names = [a.name for a in self.agents]
        if len(set(names)) != len(names):
            raise ConfigError("agent names must be unique")
        for a in self.agents:
            a.validate()
        if self.owner.initial_balance < self.pool_funding:
            raise ConfigError("the owner cannot fund the reward pool")


@dataclass
class MetricsSeries:
    agents: list[tuple[str, Address, str, int]]  # name, address, role, initial balance
    total_supply: int
    blocktime: int
    seed: int
    contract: Address | None = None
    initial_size: int = 0
    initial_accuracy: float = 0.0
    heights: list[int] = field(default_factory=list)
    balances: dict[Address, list[int]] = field(default_factory=dict)
    sizes: list[int] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    pending: list[int] = field(default_factory=list)
    refunded: list[int] = field(default_factory=list)
    forfeited: list[int] = field(default_factory=list)
    rejected: list[int] = field(default_factory=list)
    escrow: list[int] = field(default_factory=list)
    pool: list[int] = field(default_factory=list)
    events: list[ContractEvent] = field(default_factory=list)
    tx_log: list[TxLogRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.heights)

    def balance_series(self, name: str) -> list[int]:
        for agent_name, addr, _, _ in self.agents:
            if agent_name == name:
                return self.balances[addr]
        raise KeyError(name)

    @property
    def final_accuracy(self) -> float:
        return self.accuracies[-1] if self.accuracies else self.initial_accuracy

    @property
    def final_size(self) -> int:
        return self.sizes[-1] if self.sizes else self.initial_size


@dataclass
class RunResult:
    config: ScenarioConfig
    ledger: Ledger
    contract: Address
    metrics: MetricsSeries
    test_payload: bytes

    @property
    def events(self) -> list[ContractEvent]:
        return self.ledger.events


class _Agent:
    def __init__(self, spec: AgentSpec, rng: np.random.Generator):
        self.spec = spec
        self.address = spec.address
        self.rng = rng
        self.credit = 0.0
        self.contributed = 0
        self.seen = 0
        self.targets: list[tuple[int, Sample]] = []


def _train_initial(cfg: ScenarioConfig, train: list[Sample]) -> models.OnlineModel:
    n = max(1, math.floor(cfg.initial_fraction * len(train)))
    model = models.make_model(cfg.model_kind, cfg.data.dimension, cfg.learning_rate)
    for _ in range(cfg.initial_epochs):
        model = models.fold(model, train[:n])
    return model


def run_scenario(cfg: ScenarioConfig) -> RunResult:
    cfg.validate()
    seq = np.random.SeedSequence(cfg.seed)
    data_seed, *agent_seeds = seq.spawn(1 + len(cfg.agents))
    train, test, truth = generate_data(cfg.data, data_seed)
    agents = [_Agent(spec, np.random.default_rng(s)) for spec, s in zip(cfg.agents, agent_seeds)]

    store = MemoryStore()
    ledger = Ledger.genesis([(a.address, a.spec.initial_balance) for a in agents],
                            cfg.blocktime, store)
    owner = next(a for a in agents if a.spec.role == OWNER)

    initial_model = _train_initial(cfg, train)
    train_hash = store.put(models.encode_dataset(train))
    test_payload = models.encode_dataset(test)
    receipt = mc.deploy(ledger, owner.address, initial_model,
                        initial_data_hash=train_hash, test_digest=digest(test_payload),
                        initial_count=len(train), params=cfg.params,
                        pool_funding=cfg.pool_funding)
    ledger.seal_block()
    if not receipt.ok:
        raise ConfigError(f"deployment failed: {receipt.reason}: {receipt.error}")
    addr = receipt.result

    metrics = MetricsSeries(
        agents=[(a.spec.name, a.address, a.spec.role, a.spec.initial_balance) for a in agents],
        total_supply=ledger.total_supply,
        blocktime=cfg.blocktime,
        seed=cfg.seed,
        contract=addr,
        initial_size=len(train),
        initial_accuracy=models.evaluate(initial_model, test),
    )
    accuracy_cache: dict[bytes, float] = {}

    def record_row():
        c = ledger.contract(addr)
        if c.model not in accuracy_cache:
            accuracy_cache[c.model] = models.evaluate(c.current_model(), test)
        metrics.heights.append(ledger.height)
        for a in agents:
            metrics.balances.setdefault(a.address, []).append(ledger.balance_of(a.address))
        metrics.sizes.append(c.dataset_size())
        metrics.accuracies.append(accuracy_cache[c.model])
        statuses = [r.status for r in c.contributions]
        metrics.pending.append(statuses.count(mc.PENDING) + statuses.count(mc.CHALLENGED))
        metrics.refunded.append(statuses.count(mc.REFUNDED))
        metrics.forfeited.append(statuses.count(mc.FORFEITED))
        metrics.rejected.append(sum(ch.status == mc.CORRECTION_REJECTED for ch in c.challenges))
        metrics.escrow.append(c.escrow)
        metrics.pool.append(c.reward_pool)

    record_row()
    last_contribution_block = cfg.blocks - cfg.settle
    while ledger.height < cfg.blocks:
        height = ledger.height + 1
        c = ledger.contract(addr)
        for agent in agents:
            role = agent.spec.role
            if role == OWNER and agent is owner:
                _owner_step(ledger, agent, c, truth)
            elif role in (GOOD, MALICIOUS):
                _contributor_step(ledger, agent, c, truth, height,
                                  allow_new=height <= last_contribution_block)
            elif role == VERIFIER:
                _verifier_step(ledger, agent, c, truth, height)
        ledger.seal_block()
        record_row()

    metrics.events = list(ledger.events)
    metrics.tx_log = list(ledger.tx_log)
    return RunResult(cfg, ledger, addr, metrics, test_payload)


def _owner_step(ledger, agent, c, truth):
    for ch in c.challenges:
        if ch.status != mc.OPEN:
            continue
        original = c.contributions[ch.contribution_id].data
        true_label = truth.label_of(ch.correction.features)
        accept = (true_label is not None and ch.correction.label == true_label
                  and original.label != true_label)
        mc.adjudicate(ledger, agent.address, c.address, ch.contribution_id, accept)


def _contributor_step(ledger, agent, c, truth, height, allow_new):
    spec = agent.spec
    for rec in c.contributions:
        if (rec.contributor == agent.address and rec.status == mc.PENDING
                and height >= rec.submitted_at + c.params.timeout):
            mc.claim_refund(ledger, agent.address, c.address, rec.id)
    if not allow_new:
        return
    agent.credit += spec.rate
    due = math.floor(agent.credit + 1e-9)
    agent.credit -= due
    available = ledger.balance_of(agent.address)
    for _ in range(due):
        if spec.max_contributions is not None and agent.contributed >= spec.max_contributions:
            break
        if available < c.params.deposit:
            break  # insolvent agents sit the round out
        sample = truth.draw(agent.rng)[0]
        if spec.flip > 0 and agent.rng.random() < spec.flip:
            sample = Sample(sample.features, 1 - sample.label)
        mc.add_data(ledger, agent.address, c.address, sample)
        available -= c.params.deposit
        agent.contributed += 1


def _verifier_step(ledger, agent, c, truth, height):
    spec = agent.spec
    for rec in c.contributions[agent.seen:]:
        if rec.contributor == agent.address or not isinstance(rec.data, Sample):
            continue
        if agent.rng.random() >= spec.coverage:
            continue
        true_label = truth.label_of(rec.data.features)
        if true_label is not None and true_label != rec.data.label:
            agent.targets.append((rec.id, Sample(rec.data.features, true_label)))
    agent.seen = len(c.contributions)

    available = ledger.balance_of(agent.address)
    remaining = []
    for cid, correction in agent.targets:
        rec = c.contributions[cid]
        if rec.status != mc.PENDING or height >= rec.submitted_at + c.params.timeout:
            continue
        if available < c.params.deposit:
            remaining.append((cid, correction))
            continue
        mc.verify(ledger, agent.address, c.address, cid, correction)
        available -= c.params.deposit
    agent.targets = remaining


def export_metrics(series: MetricsSeries, directory: str | Path) -> list[Path]:
    """Write the per-block CSVs for ``series`` into ``directory``.

    balances.csv holds micro-coin balances with one column per agent address;
    escrow.csv holds what the contract keeps, so each row of the two files
    together sums to the genesis supply.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    addrs = [addr for _, addr, _, _ in series.agents]
    tables = {
        "balances.csv": (["height"] + addrs,
                         [[h] + [series.balances[a][i] for a in addrs]
                          for i, h in enumerate(series.heights)]),
        "dataset_growth.csv": (["height", "size"], list(zip(series.heights, series.sizes))),
        "accuracy.csv": (["height", "accuracy"],
                         [[h, repr(acc)] for h, acc in zip(series.heights, series.accuracies)]),
        "escrow.csv": (["height", "escrow", "reward_pool"],
                       list(zip(series.heights, series.escrow, series.pool))),
        "events.csv": (["height", "contract", "event", "contribution_id", "amount"],
                       [[e.height, e.contract, e.event,
                         "" if e.contribution_id is None else e.contribution_id, e.amount]
                        for e in series.events]),
        "transactions.csv": (["height", "tx_index", "kind", "sender", "value", "status"],
                             [[t.height, t.tx_index, t.kind, t.sender, t.value, t.status]
                              for t in series.tx_log]),
        "agents.csv": (["address", "name", "role", "initial_balance"],
                       [[addr, name, role, bal] for name, addr, role, bal in series.agents]),
        "meta.csv": (["key", "value"], [
            ["seed", series.seed],
            ["blocktime", series.blocktime],
            ["total_supply", series.total_supply],
            ["contract", series.contract],
            ["initial_size", series.initial_size],
            ["initial_accuracy", repr(series.initial_accuracy)],
        ]),
    }
    written = []
    for name, (header, rows) in tables.items():
        path = out / name
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        written.append(path)
    return written
