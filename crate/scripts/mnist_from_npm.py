#!/usr/bin/env python3
"""Build small MNIST IDX files from the digits bundled in the npm `mnist` package.

Usage: mnist_from_npm.py <unpacked npm package dir> <output dir>

Get the package with `npm pack mnist && tar xzf mnist-*.tgz`. The 10000 digits
are shuffled with a fixed seed, then split 8000 train / 2000 test and written
as gzipped IDX files named like the standard MNIST distribution.
"""
import gzip
import json
import os
import random
import struct
import sys


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(bytes(payload))


def main():
    src, out = sys.argv[1], sys.argv[2]
    items = []
    for label in range(10):
        with open(os.path.join(src, "src", "digits", f"{label}.json")) as f:
            data = json.load(f)["data"]
        for i in range(len(data) // 784):
            px = [min(255, max(0, round(v * 255))) for v in data[i * 784:(i + 1) * 784]]
            items.append((label, px))
    random.Random(20160101).shuffle(items)
    os.makedirs(out, exist_ok=True)
    splits = {"train": items[:8000], "t10k": items[8000:]}
    for name, rows in splits.items():
        pixels = [p for _, row in rows for p in row]
        write_idx(os.path.join(out, f"{name}-images-idx3-ubyte.gz"), 0x803, [len(rows), 28, 28], pixels)
        write_idx(os.path.join(out, f"{name}-labels-idx1-ubyte.gz"), 0x801, [len(rows)], [l for l, _ in rows])
        print(name, len(rows))


if __name__ == "__main__":
    main()
