#!/usr/bin/env python3
"""Convert the digit subset bundled in the `mnist` npm package into IDX files.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_npm_to_idx.py package/src/digits data/mnist-10k

Writes images.idx3-ubyte and labels.idx1-ubyte. Samples are interleaved with a
fixed permutation so any prefix is roughly class balanced.
"""
import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28


def main(src: Path, dst: Path) -> None:
    samples = []
    for label in range(10):
        data = json.loads((src / f"{label}.json").read_text())["data"]
        count = len(data) // (SIDE * SIDE)
        for i in range(count):
            px = data[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            samples.append((label, bytes(min(255, max(0, round(v * 255))) for v in px)))
    random.Random(20210201).shuffle(samples)

    dst.mkdir(parents=True, exist_ok=True)
    with open(dst / "images.idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE))
        for _, px in samples:
            f.write(px)
    with open(dst / "labels.idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for label, _ in samples))
    print(f"wrote {len(samples)} samples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
