#!/usr/bin/env python3
"""Write the hand-built golden fixtures used by the parser tests.

IDX: three 2x3 images, pixel j of image i = (40*i + 50*j) % 256, labels 0, 9, 4.
CIFAR-10: two records, labels 3 and 9, pixel j = (i + 3*j) % 256.

    python3 tools/make_golden_fixtures.py tests/data
"""
import struct
import sys
from pathlib import Path

out = Path(sys.argv[1])

images = bytearray(struct.pack(">IIII", 0x00000803, 3, 2, 3))
for i in range(3):
    images += bytes((40 * i + 50 * j) % 256 for j in range(6))
(out / "golden-images-idx3-ubyte").write_bytes(bytes(images))
(out / "golden-labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x00000801, 3) + bytes([0, 9, 4]))

cifar = bytearray()
for i, label in enumerate([3, 9]):
    cifar.append(label)
    cifar += bytes((i + 3 * j) % 256 for j in range(3072))
(out / "golden-cifar10.bin").write_bytes(bytes(cifar))
