"""
Agents on a shared contract
===========================

The bundled ``agents_balance`` scenario puts an honest contributor, a
mislabelling one and a full-coverage verifier on the same contract. We
plot balances over time and write the report tables.
"""

import tempfile
from pathlib import Path

from chainlearn.ledger import COIN
from chainlearn.report import build_report
from chainlearn.scenario import load_bundled
from chainlearn.sim import export_metrics, run_scenario

res = run_scenario(load_bundled("agents_balance.scn"))
m = res.metrics
print("accuracy %.3f -> %.3f" % (m.initial_accuracy, m.final_accuracy))
print("dataset", m.initial_size, "->", m.final_size)

try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None

if plt is not None:
    for name, _, role, _ in m.agents:
        plt.plot(m.heights, [b / COIN for b in m.balance_series(name)], label=f"{name} ({role})")
    plt.xlabel("block")
    plt.ylabel("coins")
    plt.legend()
    plt.show()

with tempfile.TemporaryDirectory() as tmp:
    export_metrics(m, tmp)
    build_report(tmp, tmp)
    print((Path(tmp) / "operations.txt").read_text())
