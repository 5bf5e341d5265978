#!/usr/bin/env python3
"""Convert the bundled 8x8 handwritten digits corpus into IDX files.

Pixels (0..16) are rescaled to 0..255. A fixed number of samples per class is
held out as a balanced test split; selection is seeded.
"""
import argparse
import pathlib
import struct

import numpy as np
from sklearn.datasets import load_digits


def write_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/digits")
    ap.add_argument("--test-per-class", type=int, default=30)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    digits = load_digits()
    images = np.rint(digits.images * (255.0 / 16.0)).clip(0, 255)
    labels = digits.target

    rng = np.random.default_rng(args.seed)
    test_idx = []
    for label in range(10):
        idx = np.flatnonzero(labels == label)
        test_idx.extend(rng.choice(idx, size=args.test_per_class, replace=False))
    test_mask = np.zeros(len(labels), dtype=bool)
    test_mask[test_idx] = True

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", images[~test_mask])
    write_labels(out / "train-labels-idx1-ubyte", labels[~test_mask])
    write_images(out / "test-images-idx3-ubyte", images[test_mask])
    write_labels(out / "test-labels-idx1-ubyte", labels[test_mask])
    print(f"train={int((~test_mask).sum())} test={int(test_mask.sum())}")


if __name__ == "__main__":
    main()
