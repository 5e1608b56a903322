"""Rebuild data/mnist10k from the 10,000 MNIST digits bundled in the npm ``mnist`` package.

The npm package stores each digit class as a flat JSON array of pixel
intensities already divided by 255 and rounded to three decimals; the
rounding step (0.255 grey levels) is finer than one grey level, so the
original bytes are recovered exactly with ``round(v * 255)``.

Usage::

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python scripts/build_mnist_subset.py package/src/digits data/mnist10k
"""
import argparse
import json
from pathlib import Path

import numpy as np

from fragilis.data.idx import write_idx_images, write_idx_labels


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("digits_dir", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--test-fraction", type=float, default=0.2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    images, labels = [], []
    for digit in range(10):
        raw = np.asarray(json.loads((args.digits_dir / f"{digit}.json").read_text())["data"])
        grey = np.rint(raw * 255.0).astype(np.uint8).reshape(-1, 28, 28)
        images.append(grey)
        labels.append(np.full(len(grey), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    # stratified split, fixed seed
    rng = np.random.default_rng(args.seed)
    train_idx, test_idx = [], []
    for digit in range(10):
        idx = rng.permutation(np.flatnonzero(labels == digit))
        n_test = int(round(len(idx) * args.test_fraction))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for split, idx in (("train", train_idx), ("test", test_idx)):
        write_idx_images(args.out_dir / f"{split}-images-idx3-ubyte.gz", images[idx])
        write_idx_labels(args.out_dir / f"{split}-labels-idx1-ubyte.gz", labels[idx])
        print(split, len(idx), np.bincount(labels[idx], minlength=10).tolist())


if __name__ == "__main__":
    main()
