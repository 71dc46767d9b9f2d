"""Convert the 5000-sample MNIST subset shipped in the mlxtend wheel to IDX files.

Usage: python scripts/make_dataset.py mnist_5k.csv.gz src/fecnn/assets

The CSV holds 784 pixel columns followed by the label and is sorted by class.
A seeded stratified split keeps 400 samples per class for training and 100
per class for testing, each split shuffled.
"""

import gzip
import sys
from pathlib import Path

import numpy as np

from fecnn.nn import write_idx


def main(src, out_dir):
    raw = np.loadtxt(gzip.open(src), delimiter=",", dtype=np.int64)
    images = raw[:, :-1].reshape(-1, 28, 28).astype(np.uint8)
    labels = raw[:, -1].astype(np.uint8)
    rng = np.random.default_rng(20240101)
    train, test = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(labels == c))
        train.append(idx[:400])
        test.append(idx[400:])
    train = rng.permutation(np.concatenate(train))
    test = rng.permutation(np.concatenate(test))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte.gz", images[train])
    write_idx(out / "train-labels-idx1-ubyte.gz", labels[train])
    write_idx(out / "t10k-images-idx3-ubyte.gz", images[test])
    write_idx(out / "t10k-labels-idx1-ubyte.gz", labels[test])
    print(f"train {len(train)}  test {len(test)}  -> {out}")


if __name__ == "__main__":
    main(*sys.argv[1:3])
