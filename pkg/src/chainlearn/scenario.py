"""Scenario files: flat ``section.key = value`` text.

``#`` starts a comment. Currency values are in coins (decimals allowed down
to one micro-coin). Agents are sections of the form ``agent.<name>``::

    run.seed = 7
    run.blocks = 300
    incentive.deposit = 1
    incentive.reward = 0.5
    agent.alice.role = good
    agent.alice.rate = 1.0

Every key and its default is listed in ``KEYS`` and ``AGENT_KEYS``.
"""

from __future__ import annotations

import dataclasses
from importlib import resources
from pathlib import Path

from .contract import IncentiveParams
from .ledger import coins
from .sim import AgentSpec, ConfigError, DataSpec, ScenarioConfig

_D = ScenarioConfig()


def _int(text):
    return int(text)


def _float(text):
    return float(text)


def _coins(text):
    return coins(text)


def _opt_int(text):
    return None if text.lower() in ("none", "") else int(text)


# key -> (parser, default)
KEYS = {
    "run.seed": (_int, _D.seed),
    "run.blocks": (_int, _D.blocks),
    "run.blocktime": (_int, _D.blocktime),
    "run.settle_blocks": (_opt_int, _D.settle_blocks),
    "incentive.deposit": (_coins, _D.params.deposit),
    "incentive.reward": (_coins, _D.params.reward),
    "incentive.timeout": (_int, _D.params.timeout),
    "incentive.pool": (_coins, _D.pool_funding),
    "data.dimension": (_int, _D.data.dimension),
    "data.classes": (_int, _D.data.classes),
    "data.margin": (_float, _D.data.margin),
    "data.spread": (_float, _D.data.spread),
    "data.noise": (_float, _D.data.noise),
    "data.train_size": (_int, _D.data.train_size),
    "data.test_size": (_int, _D.data.test_size),
    "model.kind": (str, _D.model_kind),
    "model.learning_rate": (_float, _D.learning_rate),
    "model.initial_fraction": (_float, _D.initial_fraction),
    "model.initial_epochs": (_int, _D.initial_epochs),
}

AGENT_KEYS = {
    "role": (str, None),
    "balance": (_coins, 0),
    "rate": (_float, 0.0),
    "flip_probability": (_float, None),
    "coverage": (_float, 1.0),
    "max_contributions": (_opt_int, None),
}


class ScenarioError(ConfigError):
    pass


def parse_scenario(text: str, source: str = "<scenario>") -> ScenarioConfig:
    values: dict[str, object] = {}
    agents: dict[str, dict[str, object]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ScenarioError(f"{where}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("agent."):
            parts = key.split(".")
            if len(parts) != 3 or not parts[1]:
                raise ScenarioError(f"{where}: agent keys look like agent.<name>.<field>")
            _, name, fld = parts
            if fld not in AGENT_KEYS:
                raise ScenarioError(f"{where}: unknown agent field {fld!r}")
            target, parser = agents.setdefault(name, {}), AGENT_KEYS[fld][0]
        else:
            if key not in KEYS:
                raise ScenarioError(f"{where}: unknown key {key!r}")
            target, parser, fld = values, KEYS[key][0], key
        if fld in target:
            raise ScenarioError(f"{where}: {key} is set twice")
        try:
            target[fld] = parser(value)
        except ValueError as exc:
            raise ScenarioError(f"{where}: bad value for {key}: {exc}") from None

    def get(key):
        return values.get(key, KEYS[key][1])

    agent_specs = []
    for name, fields in agents.items():
        if "role" not in fields:
            raise ScenarioError(f"{source}: agent {name!r} has no role")
        agent_specs.append(AgentSpec(
            name=name,
            role=fields["role"],
            initial_balance=fields.get("balance", 0),
            rate=fields.get("rate", 0.0),
            flip_probability=fields.get("flip_probability"),
            coverage=fields.get("coverage", 1.0),
            max_contributions=fields.get("max_contributions"),
        ))
    cfg = ScenarioConfig(
        seed=get("run.seed"),
        blocks=get("run.blocks"),
        blocktime=get("run.blocktime"),
        params=IncentiveParams(get("incentive.deposit"), get("incentive.reward"),
                               get("incentive.timeout")),
        pool_funding=get("incentive.pool"),
        data=DataSpec(
            dimension=get("data.dimension"),
            classes=get("data.classes"),
            margin=get("data.margin"),
            spread=get("data.spread"),
            noise=get("data.noise"),
            train_size=get("data.train_size"),
            test_size=get("data.test_size"),
        ),
        agents=tuple(agent_specs),
        model_kind=get("model.kind"),
        learning_rate=get("model.learning_rate"),
        initial_fraction=get("model.initial_fraction"),
        initial_epochs=get("model.initial_epochs"),
        settle_blocks=get("run.settle_blocks"),
    )
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario(path.read_text(), str(path))


def bundled_scenarios() -> list[str]:
    root = resources.files("chainlearn") / "scenarios"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".scn"))


def load_bundled(name: str) -> ScenarioConfig:
    text = (resources.files("chainlearn") / "scenarios" / name).read_text()
    return parse_scenario(text, name)


def with_seed(cfg: ScenarioConfig, seed: int) -> ScenarioConfig:
    return dataclasses.replace(cfg, seed=seed)
