#!/usr/bin/env python3
"""Builds the IDX digit fixture from the 5000-image MNIST sample shipped in
the mlxtend wheel (mlxtend/data/data/mnist_5k.csv.gz: 784 pixel columns in
0..255 followed by the label).

usage: make_digits_fixture.py MNIST_5K_CSV_GZ OUT_DIR [--train-per-class 200] [--test-per-class 100]
"""
import argparse
import gzip
import struct
from pathlib import Path

import numpy as np


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("source")
    ap.add_argument("out")
    ap.add_argument("--train-per-class", type=int, default=200)
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with gzip.open(args.source, "rt") as f:
        data = np.loadtxt(f, delimiter=",")
    pixels, labels = data[:, :-1], data[:, -1].astype(int)
    assert pixels.shape[1] == 784
    assert pixels.min() >= 0 and pixels.max() <= 255 and np.all(pixels == np.round(pixels))

    rng = np.random.default_rng(args.seed)
    train, test = [], []
    for c in range(10):
        rows = rng.permutation(np.flatnonzero(labels == c))
        train.extend(rows[: args.train_per_class])
        test.extend(rows[args.train_per_class : args.train_per_class + args.test_per_class])
    train = rng.permutation(train)
    test = rng.permutation(test)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", pixels[train])
    write_labels(out / "train-labels-idx1-ubyte", labels[train])
    write_images(out / "t10k-images-idx3-ubyte", pixels[test])
    write_labels(out / "t10k-labels-idx1-ubyte", labels[test])
    print(f"wrote {len(train)} train and {len(test)} test images to {out}")


if __name__ == "__main__":
    main()
