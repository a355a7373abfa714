"""``chainlearn`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
protocol error. Protocol errors print the error class name (``TooEarly``,
``DigestMismatch`` ...) so scripts can match on it.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import contract as mc
from . import models, report
from .cas import digest
from .contract import DatasetHash, IncentiveParams
from .ledger import LedgerError, coins, format_coins
from .scenario import bundled_scenarios, load_bundled, load_scenario, with_seed
from .sim import MALICIOUS, ConfigError, export_metrics, run_scenario
from .workspace import NoWorkspace, Workspace, WorkspaceError, WorkspaceExists


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    def __init__(self, name: str, message: str):
        super().__init__(message)
        self.name = name


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- helpers -------------------------------------------------------------------


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise RuntimeFailure(type(exc).__name__, f"cannot read {path}: {exc.strerror}") from None


def _read_dataset(path: str, dim=None, classes=None) -> tuple[bytes, list[models.Sample]]:
    payload = _read_bytes(path)
    try:
        return payload, models.decode_dataset(payload, dim, classes)
    except models.DecodeError as exc:
        raise RuntimeFailure("DecodeFailure", f"{path}: {exc}") from None


def _parse_sample(text: str) -> models.Sample:
    try:
        samples = models.decode_dataset((text.strip() + "\n").encode())
    except models.DecodeError as exc:
        raise UsageError(f"bad sample {text!r}: {exc}") from None
    if len(samples) != 1:
        raise UsageError("--sample takes exactly one 'label,f1,...,fd' row")
    return samples[0]


def _coin_arg(text: str) -> int:
    try:
        return coins(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _fund_arg(text: str) -> tuple[str, int]:
    name, sep, amount = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError("expected NAME=COINS")
    return name, _coin_arg(amount)


def _event_row(e) -> str:
    cid = "" if e.contribution_id is None else e.contribution_id
    return f"{e.height},{e.contract},{e.event},{cid},{e.amount}"


def _resolve_scenario(text: str):
    path = Path(text)
    if path.is_file():
        return load_scenario(path)
    name = text if text.endswith(".scn") else text + ".scn"
    if not path.parent.parts and name in bundled_scenarios():
        return load_bundled(name)
    raise UsageError(f"no scenario file {text!r} (bundled: {', '.join(bundled_scenarios())})")


# -- simulate / hash / report ------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _resolve_scenario(args.scenario)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    result = run_scenario(cfg)
    m = result.metrics
    if args.out:
        export_metrics(m, args.out)
    malicious = sum(m.balances[addr][-1] for _, addr, role, _ in m.agents if role == MALICIOUS)
    print(f"final_accuracy={m.final_accuracy:.4f} dataset={m.initial_size}->{m.final_size} "
          f"malicious_balance={format_coins(malicious)}")
    return 0


def cmd_hash(args) -> int:
    print(digest(_read_bytes(args.path)))
    return 0


def cmd_report(args) -> int:
    metrics = args.metrics or args.out
    try:
        paths = report.build_report(metrics, args.out)
    except report.MissingMetrics as exc:
        raise UsageError(str(exc)) from None
    for p in paths:
        print(p)
    return 0


# -- contract ----------------------------------------------------------------


def _data_ref(args, ws: Workspace, c) -> mc.DataRef:
    given = [x for x in (args.sample, args.dataset, args.hash) if x is not None]
    if len(given) != 1:
        raise UsageError("give exactly one of --sample, --dataset or --hash")
    if args.sample is not None:
        return _parse_sample(args.sample)
    if args.dataset is not None:
        payload, samples = _read_dataset(args.dataset, c.feature_dim, c.class_set)
        h = ws.ledger.store.put(payload)
        return DatasetHash(h, args.count or len(samples))
    if not args.count:
        raise UsageError("--hash needs --count")
    return DatasetHash(args.hash, args.count)


def _latest_contract(ledger) -> str:
    deployed = [e.contract for e in ledger.events if e.event in ("DEPLOY", "UPDATE")]
    if not deployed:
        raise UsageError("the workspace has no contract yet")
    return deployed[-1]


def _contract_arg(args, ledger) -> str:
    return args.contract if args.contract else _latest_contract(ledger)


def _submit(ws: Workspace, receipt) -> object:
    """Seal the queued transaction; persist only when it applied."""
    ledger = ws.ledger
    before = len(ledger.events)
    if receipt.status == "Queued":
        ledger.seal_block()
    if not receipt.ok:
        err = receipt.error
        raise RuntimeFailure(err.name if isinstance(err, LedgerError) else type(err).__name__,
                             str(err))
    ws.save()
    for e in ledger.events[before:]:
        print(_event_row(e))
    return receipt.result


def _params(args, base: IncentiveParams) -> IncentiveParams:
    return IncentiveParams(
        base.deposit if args.deposit is None else args.deposit,
        base.reward if args.reward is None else args.reward,
        base.timeout if args.timeout is None else args.timeout,
    )


def _deploy(args, ws: Workspace) -> int:
    if args.init:
        if not args.fund:
            raise UsageError("--init needs at least one --fund NAME=COINS")
        try:
            ws.create(dict(args.fund), args.blocktime)
        except WorkspaceExists as exc:
            raise UsageError(str(exc)) from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        if args.fund:
            raise UsageError("--fund only applies together with --init")
        ws.load()
    ledger = ws.ledger
    if not args.owner or not args.train or not args.test:
        raise UsageError("deploy needs --owner, --train and --test")
    payload, train = _read_dataset(args.train)
    if not train:
        raise RuntimeFailure("DecodeFailure", f"{args.train} holds no samples")
    test = _read_bytes(args.test)
    if args.model:
        try:
            model = models.deserialize(_read_bytes(args.model))
        except models.ModelError as exc:
            raise RuntimeFailure("MalformedModel", str(exc)) from None
    else:
        model = models.make_model(args.model_kind, train[0].dim, args.learning_rate)
        for _ in range(args.epochs):
            model = models.fold(model, train)
    h = ledger.store.put(payload)
    owner = ws.remember(args.owner)
    receipt = mc.deploy(ledger, owner, model, initial_data_hash=h, test_digest=digest(test),
                        initial_count=args.initial_count or len(train),
                        params=_params(args, mc.DEFAULT_PARAMS), pool_funding=args.pool)
    addr = _submit(ws, receipt)
    print(f"contract={addr}")
    print(f"data_hash={h}")
    return 0


def _update(args, ws: Workspace) -> int:
    ledger = ws.load()
    old = ledger.contract(_contract_arg(args, ledger))
    store = ledger.store
    # off-chain: fetch what the old contract references, train locally
    base = models.decode_dataset(store.get(old.initial_data_hash), old.feature_dim, old.class_set)
    retrieved = base + old.effective_samples()
    extra = _read_dataset(args.train, old.feature_dim, old.class_set)[1] if args.train else []
    model = old.current_model()
    for _ in range(args.epochs):
        model = models.fold(model, extra or retrieved)
    dataset = retrieved + extra
    h = store.put(models.encode_dataset(dataset))
    test_digest = digest(_read_bytes(args.test)) if args.test else old.test_digest
    author = ws.remember(args.sender)
    receipt = mc.update_model(ledger, author, old.address, model, new_data_hash=h,
                              test_digest=test_digest, params=_params(args, old.params),
                              pool_funding=args.pool,
                              initial_count=old.dataset_size() + len(extra))
    addr = _submit(ws, receipt)
    print(f"contract={addr}")
    print(f"predecessor={old.address}")
    print(f"data_hash={h}")
    return 0


def _add_data(args, ws: Workspace) -> int:
    ledger = ws.load()
    c = ledger.contract(_contract_arg(args, ledger))
    ref = _data_ref(args, ws, c)
    rec_id = _submit(ws, mc.add_data(ledger, ws.remember(args.sender), c.address, ref))
    print(f"contribution_id={rec_id}")
    return 0


def _verify(args, ws: Workspace) -> int:
    ledger = ws.load()
    c = ledger.contract(_contract_arg(args, ledger))
    ref = _data_ref(args, ws, c)
    ch_id = _submit(ws, mc.verify(ledger, ws.remember(args.sender), c.address, args.id, ref))
    print(f"challenge_id={ch_id}")
    return 0


def _print_settlement(s) -> None:
    print(f"paid_to={s.paid_to} refund={format_coins(s.refund)} "
          f"forfeited={format_coins(s.forfeited)} reward={format_coins(s.reward)} "
          f"to_pool={format_coins(s.to_pool)}")


def _adjudicate(args, ws: Workspace) -> int:
    ledger = ws.load()
    addr = _contract_arg(args, ledger)
    s = _submit(ws, mc.adjudicate(ledger, ws.remember(args.sender), addr, args.id, args.accept))
    _print_settlement(s)
    return 0


def _claim_refund(args, ws: Workspace) -> int:
    ledger = ws.load()
    addr = _contract_arg(args, ledger)
    s = _submit(ws, mc.claim_refund(ledger, ws.remember(args.sender), addr, args.id))
    _print_settlement(s)
    return 0


def _evaluate(args, ws: Workspace) -> int:
    ledger = ws.load()
    acc = mc.evaluate(ledger, _contract_arg(args, ledger), _read_bytes(args.test))
    print(f"accuracy={acc!r}")
    return 0


def _lineage(args, ws: Workspace) -> int:
    ledger = ws.load()
    addr = _contract_arg(args, ledger)
    print(addr)
    for pred in mc.lineage(ledger, addr):
        print(pred)
    return 0


def _advance(args, ws: Workspace) -> int:
    if args.blocks < 1:
        raise UsageError("--blocks must be at least 1")
    ledger = ws.load()
    for _ in range(args.blocks):
        ledger.seal_block()
    ws.save()
    print(f"height={ledger.height}")
    return 0


def _fetch(args, ws: Workspace) -> int:
    ledger = ws.load()
    h = args.hash or ledger.contract(_contract_arg(args, ledger)).initial_data_hash
    payload = ledger.store.get(h)
    Path(args.out).write_bytes(payload)
    print(f"hash={h} bytes={len(payload)}")
    return 0


def _show(args, ws: Workspace) -> int:
    ledger = ws.load()
    print(f"height={ledger.height} state_digest={ledger.state_digest()}")
    for label in sorted(ws.names):
        addr = ws.names[label]
        if addr in ledger.accounts:
            print(f"balance {label} {format_coins(ledger.balance_of(addr))}")
    if not ledger.contracts:
        return 0
    c = ledger.contract(_contract_arg(args, ledger))
    print(f"contract={c.address} owner={ws.label_of(c.owner)} kind={c.model_kind} "
          f"dim={c.feature_dim} predecessor={c.predecessor or '-'}")
    print(f"data_hash={c.initial_data_hash} size={c.dataset_size()} "
          f"escrow={format_coins(c.escrow)} reward_pool={format_coins(c.reward_pool)}")
    for rec in c.contributions:
        print(f"contribution {rec.id} {ws.label_of(rec.contributor)} {rec.status} "
              f"submitted_at={rec.submitted_at}")
    for ch in c.challenges:
        print(f"challenge {ch.id} on {ch.contribution_id} {ws.label_of(ch.verifier)} {ch.status}")
    return 0


CONTRACT_ACTIONS = {
    "deploy": _deploy,
    "update": _update,
    "add-data": _add_data,
    "verify": _verify,
    "adjudicate": _adjudicate,
    "claim-refund": _claim_refund,
    "evaluate": _evaluate,
    "lineage": _lineage,
    "advance": _advance,
    "fetch": _fetch,
    "show": _show,
}


def cmd_contract(args) -> int:
    ws = Workspace(args.workspace)
    if args.action != "deploy" or not args.init:
        if not ws.exists():
            raise UsageError(f"{ws.root} has no ledger; run 'contract deploy --init' first")
    with ws:
        return CONTRACT_ACTIONS[args.action](args, ws)


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chainlearn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run a scenario and write metric CSVs")
    p.add_argument("--scenario", required=True, help="scenario file or bundled name")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory for the metric CSVs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("hash", help="print the content hash of a file")
    p.add_argument("path")
    p.set_defaults(func=cmd_hash)

    p = sub.add_parser("report", help="figure CSVs and operation table from metric CSVs")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="metrics directory (default: --out)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("contract", help="operate a contract one transaction at a time")
    actions = p.add_subparsers(dest="action", required=True, parser_class=_Parser)

    def action(name, help_text, sender=True, contract=True):
        a = actions.add_parser(name, help=help_text)
        a.add_argument("--workspace", required=True)
        if sender:
            a.add_argument("--from", dest="sender", required=True, help="account label or address")
        if contract:
            a.add_argument("--contract", help="contract address (default: latest deployed)")
        return a

    def params(a):
        a.add_argument("--deposit", type=_coin_arg)
        a.add_argument("--reward", type=_coin_arg)
        a.add_argument("--timeout", type=int)
        a.add_argument("--pool", type=_coin_arg, default=0, help="reward pool funding in coins")
        a.add_argument("--epochs", type=int, default=1)

    def data(a):
        a.add_argument("--sample", help="one 'label,f1,...,fd' row")
        a.add_argument("--dataset", help="dataset file; stored and referenced by hash")
        a.add_argument("--hash", help="reference an already stored dataset")
        a.add_argument("--count", type=int, help="declared sample count for a dataset hash")

    a = action("deploy", "deploy a contract (with --init: create the workspace)",
               sender=False, contract=False)
    a.add_argument("--init", action="store_true")
    a.add_argument("--fund", type=_fund_arg, action="append", default=[], metavar="NAME=COINS")
    a.add_argument("--blocktime", type=int, default=15)
    a.add_argument("--owner")
    a.add_argument("--train", help="initial training dataset file")
    a.add_argument("--test", help="hidden test dataset file (only its digest goes on chain)")
    a.add_argument("--model", help="serialized model file (default: train one)")
    a.add_argument("--model-kind", choices=models.MODEL_KINDS, default="perceptron")
    a.add_argument("--learning-rate", type=float, default=1.0)
    a.add_argument("--initial-count", type=int)
    params(a)

    a = action("update", "retrain off-chain and deploy a successor contract")
    a.add_argument("--train", help="extra local training data (default: the fetched dataset)")
    a.add_argument("--test", help="new hidden test file (default: keep the old digest)")
    params(a)

    data(action("add-data", "deposit and contribute data"))

    a = action("verify", "deposit and challenge a contribution with a correction")
    a.add_argument("--id", type=int, required=True)
    data(a)

    a = action("adjudicate", "owner settles an open challenge")
    a.add_argument("--id", type=int, required=True)
    g = a.add_mutually_exclusive_group(required=True)
    g.add_argument("--accept", dest="accept", action="store_true")
    g.add_argument("--reject", dest="accept", action="store_false")

    a = action("claim-refund", "reclaim a deposit after the timeout")
    a.add_argument("--id", type=int, required=True)

    a = action("evaluate", "accuracy on the revealed hidden test set", sender=False)
    a.add_argument("--test", required=True)

    action("lineage", "print a contract and its predecessors", sender=False)

    a = action("advance", "seal empty blocks", sender=False, contract=False)
    a.add_argument("--blocks", type=int, default=1)

    a = action("fetch", "copy a stored dataset out of the workspace", sender=False)
    a.add_argument("--hash")
    a.add_argument("--out", required=True)

    action("show", "balances, contract summary and record statuses", sender=False)

    p.set_defaults(func=cmd_contract)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, NoWorkspace) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except LedgerError as exc:
        print(f"error: {exc.name}: {exc}", file=sys.stderr)
        return 2
    except (RuntimeFailure, WorkspaceError) as exc:
        print(f"error: {exc.name}: {exc}", file=sys.stderr)
        return 2
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
