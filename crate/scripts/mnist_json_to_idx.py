#!/usr/bin/env python3
"""Convert the per-digit JSON files of the `mnist` npm package to IDX.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_json_to_idx.py package/src/digits data/mnist

Each `<d>.json` holds {"data": [...]} with 784 values in [0, 1] per image.
Writes images.idx3-ubyte and labels.idx1-ubyte, digits interleaved in file
order (all of digit 0, then 1, ...).
"""
import json
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    pixels = bytearray()
    labels = bytearray()
    for digit in range(10):
        values = json.loads((src / f"{digit}.json").read_text())["data"]
        if len(values) % 784:
            sys.exit(f"{digit}.json: {len(values)} values is not a multiple of 784")
        pixels.extend(min(255, max(0, round(v * 255))) for v in values)
        labels.extend([digit] * (len(values) // 784))
    count = len(labels)
    dst.mkdir(parents=True, exist_ok=True)
    with open(dst / "images.idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, count, 28, 28))
        f.write(pixels)
    with open(dst / "labels.idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, count))
        f.write(labels)
    print(f"wrote {count} images to {dst}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(Path(sys.argv[1]), Path(sys.argv[2]))
