#!/usr/bin/env python3
"""Generate the synthetic disk dataset used for desk-scale runs."""

import argparse

from mininet.synthetic import make_disk_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="dataset directory")
    parser.add_argument("--train", type=int, default=32)
    parser.add_argument("--test", type=int, default=8)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    manifest = make_disk_dataset(args.out, n_train=args.train, n_test=args.test,
                                 size=args.size, seed=args.seed)
    print(f"wrote {args.train} train / {args.test} test samples; "
          f"manifest at {manifest}")


if __name__ == "__main__":
    main()
