"""The four CLI commands chained together on a small synthetic set.

Run: python3 demos/07_cli_pipeline.py   (about 20 seconds)

Equivalent shell session:

    tripletiris synth --classes 6 --per-class 8 --resolution 32 --out work/train
    tripletiris synth --classes 4 --per-class 6 --resolution 32 --seed 1 --out work/test
    tripletiris train --config work/toy.cfg --data work/train --out work/model.tfck
    tripletiris embed --checkpoint work/model.tfck --data work/test --out work/test.tfeb
    tripletiris eval --store work/test.tfeb --far 0.001 --report work/report.txt
"""

import tempfile
from pathlib import Path

from tripletiris.cli import main

work = Path(tempfile.mkdtemp(prefix="tripletiris-demo-"))
print("working directory:", work)

# A flat config file; any key can also be given as a flag, e.g.
# --train-triplet-steps 50 overrides train.triplet_steps.
(work / "toy.cfg").write_text(
    "model.input_resolution = 32\n"
    "model.stage_channels = 8,16\n"
    "model.blocks_per_stage = 1,1\n"
    "model.embedding_dim = 16\n"
    "train.P = 6\n"
    "train.K = 4\n"
    "train.lr = 0.02\n"
    "train.triplet_lr = 0.001\n"
    "train.triplet_steps = 60\n"
)


def run(*argv):
    print("\n$ tripletiris", " ".join(argv))
    code = main(list(argv))
    print("exit code", code)
    return code


run("synth", "--classes", "6", "--per-class", "8", "--resolution", "32", "--out", str(work / "train"))
run("synth", "--classes", "4", "--per-class", "6", "--resolution", "32", "--seed", "1", "--out", str(work / "test"))
run("train", "--config", str(work / "toy.cfg"), "--data", str(work / "train"), "--out", str(work / "model.tfck"))
run("embed", "--checkpoint", str(work / "model.tfck"), "--data", str(work / "test"), "--out", str(work / "test.tfeb"))
run("eval", "--store", str(work / "test.tfeb"), "--far", "0.001", "--report", str(work / "report.txt"))

# Failures exit with distinct codes and leave no partial outputs.
run("train", "--data", str(work / "missing"), "--out", str(work / "never.tfck"))  # 3: data error
run("synth", "--classes", "1", "--out", str(work / "bad"))  # 2: usage error
print("\nfiles:", sorted(p.name for p in work.iterdir()))
