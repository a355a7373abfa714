"""
A command-line session
======================

The same flow driven through ``chainlearn``. Every step reloads the
workspace journal from disk, which is how separate users would share it.
"""

import shlex
import subprocess
import sys
import tempfile
from pathlib import Path

from chainlearn import models
from chainlearn.sim import DataSpec, generate_data


def run(cmd):
    print("$ chainlearn", cmd)
    r = subprocess.run([sys.executable, "-m", "chainlearn", *shlex.split(cmd)],
                       capture_output=True, text=True)
    print(r.stdout + r.stderr, end="")
    print("[exit %d]\n" % r.returncode)


tmp = Path(tempfile.mkdtemp())
train, test, _ = generate_data(DataSpec(dimension=3, train_size=60, test_size=40), seed=4)
(tmp / "train.csv").write_bytes(models.encode_dataset(train[:40]))
(tmp / "test.csv").write_bytes(models.encode_dataset(test))
x = train[50]
bad = ",".join([str(1 - x.label)] + [repr(v) for v in x.features])
fix = ",".join([str(x.label)] + [repr(v) for v in x.features])
ws = tmp / "ws"

run(f"hash {tmp / 'train.csv'}")
run(f"contract deploy --init --workspace {ws} --fund alice=20 --fund carol=5 --fund dave=5 "
    f"--owner alice --train {tmp / 'train.csv'} --test {tmp / 'test.csv'} --pool 5")
run(f"contract add-data --workspace {ws} --from carol --sample {bad}")
run(f"contract verify --workspace {ws} --from dave --id 0 --sample {fix}")
run(f"contract adjudicate --workspace {ws} --from alice --id 0 --accept")
run(f"contract evaluate --workspace {ws} --test {tmp / 'test.csv'}")
run(f"contract evaluate --workspace {ws} --test {tmp / 'train.csv'}")
run(f"contract show --workspace {ws}")
