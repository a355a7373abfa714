"""Plot-ready tables built from the CSVs written by ``sim.export_metrics``."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

from .ledger import format_coins
from .sim import SECONDS_PER_DAY

REQUIRED = ("balances.csv", "dataset_growth.csv", "accuracy.csv", "events.csv",
            "transactions.csv", "agents.csv", "meta.csv")

FIGURES = ("fig_agents_balance.csv", "fig_dataset_growth.csv", "fig_accuracy.csv")


class MissingMetrics(FileNotFoundError):
    pass


def _read(path: Path) -> list[dict[str, str]]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def _write(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def operation_table(events, transactions, blocks: int, blocktime: int) -> list[tuple[str, int, int]]:
    """Simulated counterpart of the framework timing table.

    Each row is (operation, count, simulated seconds). Simulated seconds are
    the number of distinct blocks in which the operation occurred times the
    blocktime; off-chain steps that the simulation does not model report 0.
    """
    ev_blocks, ev_count = defaultdict(set), defaultdict(int)
    for e in events:
        ev_blocks[e["event"]].add(e["height"])
        ev_count[e["event"]] += 1
    tx_blocks, tx_count = defaultdict(set), defaultdict(int)
    for t in transactions:
        if t["status"] == "Applied":
            tx_blocks[t["kind"]].add(t["height"])
            tx_count[t["kind"]] += 1

    def on_chain(count, heights):
        return count, len(heights) * blocktime

    def union(*sets):
        return set().union(*sets)

    rows = [
        ("IPFS Node Creation", 1, 0),
        ("Smart Contract Creation", *on_chain(ev_count["DEPLOY"], ev_blocks["DEPLOY"])),
        ("IPFS Hash Upload", *on_chain(
            ev_count["DEPLOY"] + ev_count["UPDATE"] + tx_count["AddDatasetHash"],
            union(ev_blocks["DEPLOY"], ev_blocks["UPDATE"], tx_blocks["AddDatasetHash"]))),
        ("Consensus & Ledger Update", blocks, blocks * blocktime),
        ("Data Adding", *on_chain(ev_count["ADD"], ev_blocks["ADD"])),
        ("Deposit Payment & Update", *on_chain(
            ev_count["ADD"] + ev_count["CHALLENGE"], union(ev_blocks["ADD"], ev_blocks["CHALLENGE"]))),
        ("Model Training With Single Input", *on_chain(tx_count["AddData"], tx_blocks["AddData"])),
        ("Model Training With Multiple Input", *on_chain(ev_count["ACCEPT"], ev_blocks["ACCEPT"])),
        ("Smart Contract Update", *on_chain(ev_count["UPDATE"], ev_blocks["UPDATE"])),
        ("Reward Payment", *on_chain(ev_count["ACCEPT"], ev_blocks["ACCEPT"])),
        ("Model Download", 0, 0),
        ("Dataset Download", 0, 0),
    ]
    return rows


def build_report(metrics_dir: str | Path, out_dir: str | Path) -> list[Path]:
    src, out = Path(metrics_dir), Path(out_dir)
    missing = [name for name in REQUIRED if not (src / name).is_file()]
    if missing:
        raise MissingMetrics(f"{src} lacks {', '.join(missing)}")
    meta = {row["key"]: row["value"] for row in _read(src / "meta.csv")}
    blocktime = int(meta["blocktime"])
    agents = _read(src / "agents.csv")
    balances = _read(src / "balances.csv")
    growth = _read(src / "dataset_growth.csv")
    accuracy = _read(src / "accuracy.csv")
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for row in balances:
        h = int(row["height"])
        for a in agents:
            rows.append([h, h * blocktime, a["name"], a["role"], a["address"],
                         format_coins(int(row[a["address"]]))])
    _write(out / FIGURES[0], ["height", "time_s", "agent", "role", "address", "balance"], rows)

    _write(out / FIGURES[1], ["height", "day", "size"],
           [[r["height"], f"{int(r['height']) * blocktime / SECONDS_PER_DAY:.6f}", r["size"]]
            for r in growth])
    _write(out / FIGURES[2], ["height", "time_s", "accuracy"],
           [[r["height"], int(r["height"]) * blocktime, r["accuracy"]] for r in accuracy])

    table = operation_table(_read(src / "events.csv"), _read(src / "transactions.csv"),
                            len(growth), blocktime)
    width = max(len(name) for name, _, _ in table)
    lines = [f"{'Operation':<{width}}  {'Count':>7}  {'Simulated s':>11}"]
    lines.append("-" * len(lines[0]))
    lines += [f"{name:<{width}}  {count:>7}  {secs:>11}" for name, count, secs in table]
    summary = (
        f"initial_accuracy={float(meta['initial_accuracy']):.4f} "
        f"final_accuracy={float(accuracy[-1]['accuracy']):.4f} "
        f"dataset={meta['initial_size']}->{growth[-1]['size']}"
    ) if accuracy and growth else "empty run"
    lines += ["", summary]
    (out / "operations.txt").write_text("\n".join(lines) + "\n")
    return [out / name for name in FIGURES] + [out / "operations.txt"]
