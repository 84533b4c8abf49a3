#!/usr/bin/env python3
"""Exhaustive cosine kNN over two embedding files, printed like `query --pp none`."""

import math
import struct
import sys


def read_bemb(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != b"BEMB":
        raise SystemExit(f"{path}: bad magic")
    version, count, dim = struct.unpack_from("<IQI", data, 4)
    if version != 1:
        raise SystemExit(f"{path}: version {version}")
    pos = 20
    records = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        rid = data[pos:pos + n].decode()
        pos += n
        vec = struct.unpack_from(f"<{dim}f", data, pos)
        pos += 4 * dim
        records.append((rid, vec))
    if pos != len(data):
        raise SystemExit(f"{path}: trailing bytes")
    return records


def cosine(a, b):
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def main():
    if len(sys.argv) != 4:
        raise SystemExit("usage: knn_oracle.py DB.bemb QUERIES.bemb K")
    db = read_bemb(sys.argv[1])
    queries = read_bemb(sys.argv[2])
    k = int(sys.argv[3])
    for qid, q in queries:
        scored = sorted(((cosine(q, v), rid) for rid, v in db), key=lambda t: (-t[0], t[1]))
        for rank, (score, rid) in enumerate(scored[:k], start=1):
            print(f"{qid}\t{rank}\t{rid}\t{score!r}")


if __name__ == "__main__":
    main()
