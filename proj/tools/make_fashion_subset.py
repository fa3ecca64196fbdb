#!/usr/bin/env python3
"""Build the small Fashion-MNIST IDX subset used by the end-to-end tests.

Source: the `fashion-mnist` npm package (src/clothes/<label>.json, each a
{"data": [[784 uint8 pixels], ...]} document). Usage:

    npm pack fashion-mnist && tar xzf fashion-mnist-*.tgz
    python3 tools/make_fashion_subset.py package/src/clothes tests/data
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 200
TEST_PER_CLASS = 50
SEED = 20180704


def write_idx(path, images, labels):
    with gzip.GzipFile(path.with_name(path.name + "-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with gzip.GzipFile(path.with_name(path.name + "-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    rng = random.Random(SEED)
    train, test = [], []
    for label in range(10):
        rows = json.loads((src / f"{label}.json").read_text())["data"]
        picks = rng.sample(range(len(rows)), TRAIN_PER_CLASS + TEST_PER_CLASS)
        train += [(rows[i], label) for i in picks[:TRAIN_PER_CLASS]]
        test += [(rows[i], label) for i in picks[TRAIN_PER_CLASS:]]
    rng.shuffle(train)
    rng.shuffle(test)
    dst.mkdir(parents=True, exist_ok=True)
    for name, items in (("fmnist-train", train), ("fmnist-test", test)):
        write_idx(dst / name, [i for i, _ in items], [l for _, l in items])


if __name__ == "__main__":
    main()
