"""Scripted CLI sessions for the two collaboration flows.

``data_flow`` walks the contribute-and-verify flow: an owner hashes and
deploys, a second user fetches the dataset by hash, a contributor adds a
mislabelled sample, a verifier challenges it, and the owner settles.

``training_flow`` walks the retrain-and-redeploy flow: a user fetches the
model and dataset, trains locally, deploys a successor contract, and a
contributor's sample triggers an on-chain update that is then evaluated.
"""

from __future__ import annotations

import contextlib
import io
from dataclasses import dataclass, field
from pathlib import Path

from chainlearn import models
from chainlearn.cli import main
from chainlearn.sim import DataSpec, generate_data


@dataclass
class Run:
    code: int
    out: str
    err: str

    def value(self, key: str) -> str:
        for token in self.out.split():
            if token.startswith(key + "="):
                return token.split("=", 1)[1]
        raise KeyError(key)


def cli(*argv) -> Run:
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        try:
            code = main([str(a) for a in argv])
        except SystemExit as exc:
            code = exc.code
    return Run(code, out.getvalue(), err.getvalue())


def show(ws) -> dict:
    """Balances and statuses as printed by ``contract show``."""
    r = cli("contract", "show", "--workspace", ws)
    assert r.code == 0, r.err
    info = {"balances": {}, "contributions": {}, "challenges": {}, "raw": r.out}
    for line in r.out.splitlines():
        parts = line.split()
        if parts[0] == "balance":
            info["balances"][parts[1]] = parts[2]
        elif parts[0] == "contribution":
            info["contributions"][int(parts[1])] = parts[3]
        elif parts[0] == "challenge":
            info["challenges"][int(parts[1])] = parts[5]
        elif parts[0].startswith("data_hash="):
            info["data_hash"] = parts[0].split("=", 1)[1]
            info["reward_pool"] = parts[-1].split("=", 1)[1]
        elif parts[0].startswith("contract="):
            info["contract"] = parts[0].split("=", 1)[1]
    return info


def write_data(directory: Path, seed: int = 4) -> tuple[Path, Path, list, list]:
    """Train/test files plus held-back samples (never in either file)."""
    spec = DataSpec(dimension=3, margin=4.0, train_size=60, test_size=40)
    train, test, _ = generate_data(spec, seed)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "train.csv").write_bytes(models.encode_dataset(train[:40]))
    (directory / "test.csv").write_bytes(models.encode_dataset(test))
    return directory / "train.csv", directory / "test.csv", test, train[40:]


@dataclass
class Transcript:
    steps: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def data_flow(root: Path) -> Transcript:
    t = Transcript()
    train, test, _, spare = write_data(root)
    ws = root / "ws"

    # 1-2: the owner hashes the training file
    h = cli("hash", train).out.strip()
    # 3-6: deploy with the model, data hash, test digest and a funded reward pool
    r = cli("contract", "deploy", "--init", "--workspace", ws,
            "--fund", "alice=20", "--fund", "bob=5", "--fund", "carol=5", "--fund", "dave=5",
            "--fund", "erin=5", "--owner", "alice", "--train", train, "--test", test,
            "--pool", "5")
    t.steps["deploy"] = r
    s = show(ws)
    t.checks["deploy exit 0"] = r.code == 0
    t.checks["on-chain data hash equals file hash"] = r.value("data_hash") == h == s["data_hash"]
    t.checks["owner paid the reward pool"] = (s["balances"]["alice"], s["reward_pool"]) == ("15", "5")
    # 7-8: a second user reads the hash and retrieves the file
    copy = root / "fetched.csv"
    r = cli("contract", "fetch", "--workspace", ws, "--hash", s["data_hash"], "--out", copy)
    t.checks["fetched file is byte-identical"] = r.code == 0 and copy.read_bytes() == train.read_bytes()
    # 9-10: a contributor deposits and adds a mislabelled sample
    bad = spare[0]

    def row(label):
        return ",".join([str(label)] + [repr(v) for v in bad.features])

    r = cli("contract", "add-data", "--workspace", ws, "--from", "carol", "--sample", row(1 - bad.label))
    t.checks["contributor deposit -1"] = r.code == 0 and show(ws)["balances"]["carol"] == "4"
    # an honest contribution alongside, settled by timeout
    r = cli("contract", "add-data", "--workspace", ws, "--from", "erin", "--sample", row(bad.label))
    t.checks["honest deposit -1"] = r.code == 0 and show(ws)["balances"]["erin"] == "4"
    # 11: the verifier deposits and submits the fix
    r = cli("contract", "verify", "--workspace", ws, "--from", "dave", "--id", 0,
            "--sample", row(bad.label))
    s = show(ws)
    t.checks["verifier deposit -1"] = r.code == 0 and s["balances"]["dave"] == "4"
    t.checks["record challenged"] = s["contributions"][0] == "Challenged"
    # 12: the owner validates the fix; the verifier gets refund plus reward
    r = cli("contract", "adjudicate", "--workspace", ws, "--from", "alice", "--id", 0, "--accept")
    t.steps["adjudicate"] = r
    s = show(ws)
    t.checks["verifier refund +1"] = r.value("refund") == "1"
    t.checks["verifier reward +0.5"] = r.value("reward") == "0.5"
    t.checks["verifier takes forfeited deposit +1"] = r.value("forfeited") == "1"
    t.checks["verifier balance 5 -1 +1 +0.5 +1"] = s["balances"]["dave"] == "6.5"
    t.checks["contributor keeps -1"] = s["balances"]["carol"] == "4"
    t.checks["pool 5 -0.5"] = s["reward_pool"] == "4.5"
    t.checks["statuses Forfeited/Accepted"] = (s["contributions"][0], s["challenges"][0]) == (
        "Forfeited", "Accepted")
    early = cli("contract", "claim-refund", "--workspace", ws, "--from", "erin", "--id", 1)
    t.checks["early refund exit 2 TooEarly"] = early.code == 2 and "TooEarly" in early.err
    cli("contract", "advance", "--workspace", ws, "--blocks", 10)
    r = cli("contract", "claim-refund", "--workspace", ws, "--from", "erin", "--id", 1)
    s = show(ws)
    t.checks["honest refund +1"] = r.code == 0 and s["balances"]["erin"] == "5"
    t.checks["honest record Refunded"] = s["contributions"][1] == "Refunded"
    t.steps["final"] = s
    return t


def training_flow(root: Path) -> Transcript:
    t = Transcript()
    train, test, _, spare = write_data(root, seed=8)
    ws = root / "ws"
    # 1-6: initial deployment
    r = cli("contract", "deploy", "--init", "--workspace", ws, "--fund", "alice=20",
            "--fund", "bob=10", "--fund", "carol=5", "--owner", "alice", "--train", train,
            "--test", test, "--pool", "5", "--model-kind", "logistic", "--learning-rate", "0.1")
    t.checks["deploy exit 0"] = r.code == 0
    old = r.value("contract")
    # 7-8: download the model and dataset
    s = show(ws)
    fetched = root / "fetched.csv"
    r = cli("contract", "fetch", "--workspace", ws, "--hash", s["data_hash"], "--out", fetched)
    t.checks["dataset retrieved by hash"] = r.code == 0 and fetched.read_bytes() == train.read_bytes()
    # 9-10: train locally and deploy a successor contract
    local = root / "local.csv"
    local.write_bytes(models.encode_dataset(spare[:10]))
    r = cli("contract", "update", "--workspace", ws, "--from", "bob", "--contract", old,
            "--train", local, "--pool", "1")
    t.checks["update exit 0"] = r.code == 0
    new = r.value("contract")
    t.checks["successor references predecessor"] = r.value("predecessor") == old
    lin = cli("contract", "lineage", "--workspace", ws, "--contract", new).out.split()
    t.checks["lineage new -> old"] = lin == [new, old]
    s = show(ws)
    t.checks["successor dataset includes local data"] = s["raw"].count("size=50") == 1
    t.checks["author funded successor pool"] = s["balances"]["bob"] == "9"
    before = (ws / "contracts" / f"{new}.json").read_text()
    # 11: a contributor deposits and adds data to the successor
    x = spare[15]
    r = cli("contract", "add-data", "--workspace", ws, "--from", "carol", "--contract", new,
            "--sample", ",".join([str(x.label)] + [repr(v) for v in x.features]))
    t.checks["contributor deposit -1"] = r.code == 0 and show(ws)["balances"]["carol"] == "4"
    after = (ws / "contracts" / f"{new}.json").read_text()
    t.checks["contribution updated the model"] = before != after
    # 12: the contract evaluates the updated model on the revealed test set
    r = cli("contract", "evaluate", "--workspace", ws, "--contract", new, "--test", test)
    t.checks["evaluate exit 0"] = r.code == 0 and 0.0 <= float(r.value("accuracy")) <= 1.0
    wrong = cli("contract", "evaluate", "--workspace", ws, "--contract", new, "--test", train)
    t.checks["wrong test file exit 2 DigestMismatch"] = wrong.code == 2 and "DigestMismatch" in wrong.err
    cli("contract", "advance", "--workspace", ws, "--blocks", 10)
    r = cli("contract", "claim-refund", "--workspace", ws, "--from", "carol", "--contract", new,
            "--id", 0)
    s = show(ws)
    t.checks["contributor refund +1"] = r.code == 0 and s["balances"]["carol"] == "5"
    t.checks["record Refunded"] = s["contributions"][0] == "Refunded"
    t.steps["final"] = s
    return t
