#!/usr/bin/env python3
"""End-to-end desk-scale demo: synthesize disks, train, evaluate, predict.

Runs in a few minutes on one CPU core and leaves all artifacts under the
given directory.
"""

import argparse
from pathlib import Path

from mininet.cli import main as cli


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="desk_demo", help="working directory")
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--seed", type=int, default=11)
    args = parser.parse_args()

    root = Path(args.out)
    from mininet.synthetic import make_disk_dataset
    manifest = make_disk_dataset(root / "data", n_train=32, n_test=8,
                                 size=64, seed=args.seed)
    common = ["--data.manifest", str(manifest),
              "--train.seed", str(args.seed),
              "--optimizer.lr", "1e-3",
              "--train.epochs", str(args.epochs),
              "--train.patience", str(args.epochs)]

    run = root / "run"
    assert cli(["train", "--out", str(run), "--verbose", *common]) == 0
    assert cli(["eval", "--out", str(root / "eval"), *common,
                "--checkpoint", str(run / "best.ckpt"), "--split", "test"]) == 0
    assert cli(["predict", "--out", str(root / "pred"), *common,
                "--checkpoint", str(run / "best.ckpt"), "--split", "test",
                "--overlay"]) == 0
    print(f"\nartifacts under {root}: run/ (checkpoint, runlog), "
          f"eval/ (metrics), pred/ (masks + overlays)")


if __name__ == "__main__":
    main()
