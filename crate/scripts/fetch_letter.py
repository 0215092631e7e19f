#!/usr/bin/env python3
"""Build the Letter train/val/test files in LibSVM format.

The raw UCI letter-recognition table (20000 rows, 16 integer attributes in
0..15, class letter) is taken from the `keel-ds` wheel on PyPI. Features are
scaled to [-1, 1] per attribute like `svm-scale`, labels A..Z become 1..26,
and the rows are shuffled with a fixed seed and cut into 10500 / 4500 / 5000.

Usage: python3 scripts/fetch_letter.py [outdir]    (default: data/letter)
"""

import io
import random
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

WHEEL_SPEC = "keel-ds==0.2.5"
MEMBER = "keel_ds/data/balanced/raw/letter.dat"
SIZES = {"letter.train": 10500, "letter.val": 4500, "letter.test": 5000}
SEED = 20160101


def read_raw():
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, WHEEL_SPEC],
            check=True,
        )
        wheel = next(Path(tmp).glob("*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            text = zf.read(MEMBER).decode("ascii")
    rows = []
    for line in io.StringIO(text):
        line = line.strip()
        if not line or line.startswith("@"):
            continue
        *values, letter = [v.strip() for v in line.split(",")]
        rows.append(([int(v) for v in values], ord(letter) - ord("A") + 1))
    return rows


def main():
    outdir = Path(sys.argv[1] if len(sys.argv) > 1 else "data/letter")
    rows = read_raw()
    assert len(rows) == sum(SIZES.values()), len(rows)
    dim = len(rows[0][0])
    lo = [min(r[0][j] for r in rows) for j in range(dim)]
    hi = [max(r[0][j] for r in rows) for j in range(dim)]
    random.Random(SEED).shuffle(rows)
    outdir.mkdir(parents=True, exist_ok=True)
    start = 0
    for name, size in SIZES.items():
        with open(outdir / name, "w") as out:
            for values, label in rows[start : start + size]:
                feats = []
                for j, v in enumerate(values):
                    x = -1.0 + 2.0 * (v - lo[j]) / (hi[j] - lo[j])
                    if x != 0.0:
                        feats.append(f"{j + 1}:{x:.6g}")
                out.write(" ".join([str(label)] + feats) + "\n")
        start += size
        print(f"wrote {outdir / name} ({size} examples)")


if __name__ == "__main__":
    main()
