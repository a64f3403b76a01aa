#!/usr/bin/env python3
"""Convert a CSV MNIST sample into IDX files.

Accepts either a CSV (optionally gzipped) with 784 pixel columns followed by
the label, or an mlxtend wheel, from which mlxtend/data/data/mnist_5k.csv.gz
is read. Writes <out>/images-idx3-ubyte and <out>/labels-idx1-ubyte.

    python3 tools/import_mnist_csv.py mlxtend-0.24.0-py3-none-any.whl data/mnist5k
"""
import argparse
import gzip
import io
import pathlib
import struct
import sys
import zipfile

WHEEL_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_rows(source):
    path = pathlib.Path(source)
    if path.suffix == ".whl":
        with zipfile.ZipFile(path) as z:
            raw = gzip.decompress(z.read(WHEEL_MEMBER))
    elif path.suffix == ".gz":
        raw = gzip.decompress(path.read_bytes())
    else:
        raw = path.read_bytes()
    rows = []
    for lineno, line in enumerate(io.StringIO(raw.decode("ascii")), 1):
        line = line.strip()
        if not line:
            continue
        fields = [int(float(v)) for v in line.split(",")]
        if len(fields) != 785:
            raise ValueError(f"line {lineno}: expected 785 fields, got {len(fields)}")
        pixels, label = fields[:784], fields[784]
        if not all(0 <= p <= 255 for p in pixels) or not 0 <= label <= 9:
            raise ValueError(f"line {lineno}: value out of range")
        rows.append((pixels, label))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source")
    ap.add_argument("out_dir")
    args = ap.parse_args()

    rows = read_rows(args.source)
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(rows)
    with open(out / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for pixels, _ in rows:
            f.write(bytes(pixels))
    with open(out / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(label for _, label in rows))

    counts = [0] * 10
    for _, label in rows:
        counts[label] += 1
    print(f"wrote {n} samples to {out}; per class: {counts}", file=sys.stderr)


if __name__ == "__main__":
    main()
