#!/usr/bin/env python3
"""Write tests/golden/records.ckpt with Python's struct module.

The checkpoint tests compare the C++ writer's bytes against this file, so the
two implementations check each other.
"""

import os
import struct

RECORDS = [
    ("meta:note", [3], [104.0, 105.0, 0.0]),
    ("w", [2, 3], [0.0, -0.0, 1.5, -2.25, 1e-30, 3.4028234663852886e38]),
    ("route.W", [1, 2, 2], [0.1, 0.2, 0.3, 0.4]),
    ("b", [1], [-1.0]),
]


def main():
    out = os.path.join(os.path.dirname(__file__), "..", "tests", "golden", "records.ckpt")
    with open(out, "wb") as f:
        f.write(b"CAPSTXT1")
        for name, shape, data in RECORDS:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", len(shape)))
            f.write(struct.pack(f"<{len(shape)}I", *shape))
            f.write(struct.pack(f"<{len(data)}f", *data))


if __name__ == "__main__":
    main()
