#!/usr/bin/env python3
"""Convert a Planetoid citation dataset (ind.<name>.* pickles) to a bundle.

    python3 tools/planetoid_to_bundle.py --raw DIR --name cora --out data/cora

The standard split is used: the first len(y) nodes train, the next 500
validate, and the ids in ind.<name>.test.index test. Nodes without a label
(citeseer has a few) get label -1 and zero features.
"""

import argparse
import json
import os
import pickle
import sys

import numpy as np
import scipy.sparse as sp


def load(raw, name, part):
    with open(os.path.join(raw, f"ind.{name}.{part}"), "rb") as f:
        return pickle.load(f, encoding="latin1")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--raw", required=True, help="directory with the ind.<name>.* files")
    ap.add_argument("--name", required=True, help="cora, citeseer or pubmed")
    ap.add_argument("--out", required=True, help="bundle directory to create")
    args = ap.parse_args()

    x, y, tx, ty, allx, ally, graph = (load(args.raw, args.name, p)
                                       for p in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    with open(os.path.join(args.raw, f"ind.{args.name}.test.index")) as f:
        test_idx = [int(line) for line in f if line.strip()]
    test_sorted = sorted(test_idx)

    n_all = allx.shape[0]
    n = max(max(graph.keys()) + 1, test_sorted[-1] + 1)
    features = sp.lil_matrix((n, allx.shape[1]))
    labels = np.zeros((n, ally.shape[1]))
    features[:n_all] = allx
    labels[:n_all] = ally
    # Test rows arrive in sorted order; place them at their node ids.
    features[test_sorted] = tx
    labels[test_sorted] = ty
    features = features.toarray()
    label_ids = np.where(labels.sum(axis=1) > 0, labels.argmax(axis=1), -1)

    edges = set()
    for i, nbrs in graph.items():
        for j in nbrs:
            if i != j and i < n and j < n:
                edges.add((min(i, j), max(i, j)))

    train = list(range(y.shape[0]))
    val = list(range(y.shape[0], y.shape[0] + 500))
    test = sorted(i for i in test_idx if label_ids[i] >= 0)

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "graph.edgelist"), "w") as f:
        f.write(f"n={n}\n# {args.name}\n")
        for i, j in sorted(edges):
            f.write(f"{i} {j}\n")
    with open(os.path.join(args.out, "features.csv"), "w") as f:
        for row in features:
            f.write(",".join(repr(float(v)) if v != int(v) else str(int(v)) for v in row) + "\n")
    with open(os.path.join(args.out, "labels.csv"), "w") as f:
        f.write("\n".join(str(int(v)) for v in label_ids) + "\n")
    with open(os.path.join(args.out, "split.json"), "w") as f:
        json.dump({"train": train, "val": val, "test": test,
                   "counts": {"train": len(train), "val": len(val), "test": len(test)}}, f)
    print(f"{args.name}: {n} nodes, {len(edges)} edges, {features.shape[1]} features, "
          f"{int(label_ids.max()) + 1} classes", file=sys.stderr)


if __name__ == "__main__":
    main()
