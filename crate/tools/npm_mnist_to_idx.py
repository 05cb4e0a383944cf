#!/usr/bin/env python3
"""Convert the digit JSON files shipped by the `mnist` npm package into IDX files.

The npm package bundles 10,000 MNIST digits as per-class JSON arrays of
intensities rounded to three decimals. Multiplying by 255 and rounding
recovers the original bytes. Digits are interleaved with a fixed-seed
permutation and written as an 8,000-image training file and a 2,000-image
test file in the standard gzipped IDX layout.

usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 tools/npm_mnist_to_idx.py package/src/digits data/mnist
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

N_TEST = 2000


def write_idx(path, images, labels_path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with gzip.GzipFile(labels_path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main(src, dst):
    src, dst = Path(src), Path(dst)
    samples = []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(raw) % 784 == 0
        for k in range(len(raw) // 784):
            px = [int(round(v * 255.0)) for v in raw[k * 784:(k + 1) * 784]]
            assert all(0 <= p <= 255 for p in px)
            samples.append((px, digit))
    random.Random(20161017).shuffle(samples)
    test, train = samples[:N_TEST], samples[N_TEST:]
    dst.mkdir(parents=True, exist_ok=True)
    write_idx(dst / "train-images-idx3-ubyte.gz", [s[0] for s in train],
              dst / "train-labels-idx1-ubyte.gz", [s[1] for s in train])
    write_idx(dst / "t10k-images-idx3-ubyte.gz", [s[0] for s in test],
              dst / "t10k-labels-idx1-ubyte.gz", [s[1] for s in test])
    print(f"train={len(train)} test={len(test)}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
