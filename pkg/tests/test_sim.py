from __future__ import annotations

import csv
import dataclasses

import pytest

from chainlearn import contract as mc
from chainlearn import models
from chainlearn.contract import IncentiveParams
from chainlearn.ledger import COIN
from chainlearn.sim import (
    GOOD,
    MALICIOUS,
    OWNER,
    VERIFIER,
    AgentSpec,
    ConfigError,
    DataSpec,
    ScenarioConfig,
    blocks_per_day,
    export_metrics,
    generate_data,
    run_scenario,
)

SMALL = DataSpec(dimension=4, train_size=60, test_size=60)


def config(*agents, **kw):
    base = dict(seed=5, blocks=40, data=SMALL, pool_funding=20 * COIN,
                agents=(AgentSpec("owner", OWNER, 100 * COIN),) + agents)
    base.update(kw)
    return ScenarioConfig(**base)


def test_generate_data_is_seeded_and_sized():
    spec = DataSpec(train_size=1000, test_size=200)
    a_train, a_test, truth = generate_data(spec, 9)
    b_train, b_test, _ = generate_data(spec, 9)
    assert a_train == b_train and a_test == b_test
    assert len(a_train) == 1000 and len(a_test) == 200
    assert all(truth.label_of(s.features) == s.label for s in a_train + a_test)
    assert not set(s.features for s in a_train) & set(s.features for s in a_test)


def test_well_separated_data_is_learnable():
    spec = DataSpec(dimension=5, margin=12.0, spread=1.0, noise=1.0, train_size=400, test_size=400)
    train, test, _ = generate_data(spec, 1)
    m = models.fold(models.Perceptron.zeros(5), train * 5)
    assert models.evaluate(m, test) >= 0.95


def test_blocks_per_day():
    assert blocks_per_day(15) == 5760


def test_good_contributions_all_counted():
    cfg = config(AgentSpec("alice", GOOD, 10 * COIN, rate=1.0, max_contributions=12))
    res = run_scenario(cfg)
    m = res.metrics
    assert m.final_size == 60 + 12
    c = res.ledger.contract(res.contract)
    assert all(r.status == mc.REFUNDED for r in c.contributions)
    assert m.balance_series("alice")[-1] == 10 * COIN


def test_five_round_miniature_by_hand():
    # deposit 1, reward 0.5, timeout 3; one flipped sample per block for 5 blocks
    params = IncentiveParams(COIN, COIN // 2, 3)
    cfg = config(AgentSpec("mallory", MALICIOUS, 5 * COIN, rate=1.0, max_contributions=5),
                 AgentSpec("victor", VERIFIER, 2 * COIN),
                 params=params, blocks=15, pool_funding=10 * COIN)
    res = run_scenario(cfg)
    m = res.metrics
    # each round: mallory -1; victor -1 then +1 refund +1 forfeited +0.5 reward
    assert m.balance_series("mallory")[-1] == 0
    assert m.balance_series("victor")[-1] == 2 * COIN + 5 * (COIN + COIN // 2)
    assert m.pool[-1] == 10 * COIN - 5 * (COIN // 2)
    assert m.forfeited[-1] == 5
    assert m.escrow[-1] == 0


def test_malicious_agent_is_ruined_under_full_coverage():
    cfg = config(AgentSpec("mallory", MALICIOUS, 20 * COIN, rate=1.0),
                 AgentSpec("victor", VERIFIER, 5 * COIN, coverage=1.0),
                 AgentSpec("alice", GOOD, 5 * COIN, rate=0.5), blocks=60)
    res = run_scenario(cfg)
    series = res.metrics.balance_series("mallory")
    assert series[-1] <= 0.05 * 20 * COIN
    assert all(b <= a for a, b in zip(series, series[1:]))
    c = res.ledger.contract(res.contract)
    mallory = res.metrics.agents[1][1]
    assert all(r.status == mc.FORFEITED for r in c.contributions if r.contributor == mallory)
    assert res.metrics.balance_series("victor")[-1] > 5 * COIN
    assert res.metrics.balance_series("alice")[-1] == 5 * COIN


def test_growth_series_matches_accounting():
    cfg = config(AgentSpec("mallory", MALICIOUS, 20 * COIN, rate=0.5),
                 AgentSpec("victor", VERIFIER, 5 * COIN, coverage=0.5),
                 AgentSpec("alice", GOOD, 5 * COIN, rate=0.7))
    res = run_scenario(cfg)
    m = res.metrics
    c = res.ledger.contract(res.contract)
    assert m.sizes == sorted(m.sizes)
    for h, size in zip(m.heights, m.sizes):
        assert size == m.initial_size + sum(1 for r in c.contributions if r.submitted_at <= h)


def test_identical_seeds_identical_outputs(tmp_path):
    cfg = config(AgentSpec("mallory", MALICIOUS, 20 * COIN, rate=0.5, flip_probability=0.5),
                 AgentSpec("victor", VERIFIER, 5 * COIN, coverage=0.7),
                 AgentSpec("alice", GOOD, 5 * COIN, rate=0.7))
    a, b = run_scenario(cfg), run_scenario(cfg)
    assert a.ledger.events == b.ledger.events
    assert a.ledger.state_digest() == b.ledger.state_digest()
    export_metrics(a.metrics, tmp_path / "a")
    export_metrics(b.metrics, tmp_path / "b")
    export_metrics(a.metrics, tmp_path / "c")
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
        assert f.read_bytes() == (tmp_path / "c" / f.name).read_bytes()
    c = run_scenario(dataclasses.replace(cfg, seed=cfg.seed + 1))
    assert c.ledger.events != a.ledger.events


def test_exported_csvs(tmp_path):
    cfg = config(AgentSpec("mallory", MALICIOUS, 20 * COIN, rate=0.5),
                 AgentSpec("victor", VERIFIER, 5 * COIN),
                 AgentSpec("alice", GOOD, 5 * COIN, rate=0.3), blocks=30)
    res = run_scenario(cfg)
    export_metrics(res.metrics, tmp_path)

    def rows(name):
        with open(tmp_path / name, newline="") as fh:
            return list(csv.reader(fh))

    for name in ("balances.csv", "dataset_growth.csv", "accuracy.csv", "escrow.csv"):
        assert len(rows(name)) - 1 == 30
    balances, escrow = rows("balances.csv"), rows("escrow.csv")
    assert balances[0][0] == "height" and len(balances[0]) == 5
    supply = res.ledger.total_supply
    for b, e in zip(balances[1:], escrow[1:]):
        assert b[0] == e[0]
        assert sum(map(int, b[1:])) + int(e[1]) + int(e[2]) == supply
    assert rows("events.csv")[0] == ["height", "contract", "event", "contribution_id", "amount"]
    assert rows("transactions.csv")[0] == ["height", "tx_index", "kind", "sender", "value", "status"]


def test_conservation_every_block():
    cfg = config(AgentSpec("mallory", MALICIOUS, 20 * COIN, rate=1.0),
                 AgentSpec("victor", VERIFIER, 2 * COIN, coverage=0.8),
                 AgentSpec("alice", GOOD, 5 * COIN, rate=0.5))
    m = run_scenario(cfg).metrics
    for i in range(len(m)):
        held = sum(m.balances[a][i] for _, a, _, _ in m.agents)
        assert held + m.escrow[i] + m.pool[i] == m.total_supply


@pytest.mark.parametrize("bad", [
    dict(blocks=0),
    dict(initial_fraction=0.0),
    dict(model_kind="svm"),
    dict(data=DataSpec(classes=3)),
    dict(params=IncentiveParams(0, 0, 1)),
    dict(agents=(AgentSpec("x", GOOD, 1),)),
    dict(agents=(AgentSpec("o", OWNER, 1), AgentSpec("o", GOOD, 1))),
    dict(agents=(AgentSpec("o", OWNER, 1), AgentSpec("z", "wizard", 1))),
    dict(pool_funding=1000 * COIN),
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        run_scenario(config(**bad))
