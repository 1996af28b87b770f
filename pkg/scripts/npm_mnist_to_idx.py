"""Convert the digit JSON files shipped in the npm ``mnist`` package into IDX files.

The npm package (``npm pack mnist``) bundles 10,000 MNIST digits as
normalised floats rounded to three decimals; multiplying by 255 and rounding
recovers the original bytes exactly.  Digits are stored grouped by class, so
they are interleaved with a fixed permutation before writing.

    python scripts/npm_mnist_to_idx.py path/to/package/src/digits data/
"""

import argparse
import gzip
import json
import struct
from pathlib import Path

import numpy as np


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for digit in range(10):
        raw = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        arr = np.rint(np.asarray(raw) * 255.0).astype(np.uint8).reshape(-1, 28, 28)
        images.append(arr)
        labels.append(np.full(len(arr), digit, dtype=np.uint8))
    x = np.concatenate(images)
    y = np.concatenate(labels)
    order = np.random.default_rng(args.seed).permutation(len(x))
    x, y = x[order], y[order]

    args.out_dir.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(args.out_dir / "mnist10k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(x), 28, 28))
        f.write(x.tobytes())
    with gzip.GzipFile(args.out_dir / "mnist10k-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(y)))
        f.write(y.tobytes())
    print(f"wrote {len(x)} images to {args.out_dir}")


if __name__ == "__main__":
    main()
