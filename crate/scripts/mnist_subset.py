#!/usr/bin/env python3
"""Build the bundled MNIST subset as gzipped IDX files.

Source: the 10,000 MNIST digits shipped in the `mnist` npm package
(https://www.npmjs.com/package/mnist, MIT). Pixels there are stored as
floats in [0, 1] with three decimals; they are mapped back to bytes.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_subset.py package/src/digits data/mnist
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

TEST_SIZE = 2000
SEED = 20231


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + bytes(payload))


def main(src, dst):
    samples = []
    for digit in range(10):
        data = json.loads(Path(src, f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for i in range(len(data) // 784):
            px = [min(255, max(0, round(v * 255))) for v in data[i * 784:(i + 1) * 784]]
            samples.append((px, digit))
    random.Random(SEED).shuffle(samples)
    splits = {"t10k": samples[:TEST_SIZE], "train": samples[TEST_SIZE:]}
    out = Path(dst)
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in splits.items():
        images = [p for px, _ in rows for p in px]
        labels = [y for _, y in rows]
        write_idx(out / f"{name}-images-idx3-ubyte.gz", 0x803, [len(rows), 28, 28], images)
        write_idx(out / f"{name}-labels-idx1-ubyte.gz", 0x801, [len(rows)], labels)
        print(name, len(rows))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
