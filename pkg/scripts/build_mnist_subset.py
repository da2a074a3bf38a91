"""Convert the 10,000-digit MNIST subset shipped in the npm ``mnist`` package to IDX.

Usage::

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/build_mnist_subset.py package/src/digits data/mnist10k

Pixels in the JSON files are stored as ``byte / 255`` rounded to three decimals,
so ``round(v * 255)`` recovers the original byte exactly.  Samples are grouped
by class in the source; they are shuffled with a fixed seed before writing.
"""

import json
import sys
from pathlib import Path

import numpy as np

from spdz_transfer.data import write_idx


def main(src: str, dst: str, seed: int = 20200101) -> None:
    images, labels = [], []
    for digit in range(10):
        raw = np.asarray(json.loads((Path(src) / f"{digit}.json").read_text())["data"])
        pixels = np.rint(raw * 255).astype(np.uint8).reshape(-1, 28, 28)
        images.append(pixels)
        labels.append(np.full(len(pixels), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(seed).permutation(len(labels))
    out = Path(dst)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "images-idx3-ubyte.gz", images[order])
    write_idx(out / "labels-idx1-ubyte.gz", labels[order])
    print(f"wrote {len(labels)} samples to {out}")


if __name__ == "__main__":
    main(*sys.argv[1:3])
