"""
TU-format datasets and 10-fold splits
=====================================
"""

from pathlib import Path

import numpy as np

from care.graphio import make_folds, parse_tudataset

root = Path(__file__).resolve().parents[1] / "tests" / "data" / "MUTAG"
ds = parse_tudataset(root, "MUTAG")

st = ds.stats()
print(st)  # 188 graphs, 2 classes, 17.93 nodes and 19.79 edges on average

g = ds.graphs[0]
print("first graph:", g.node_count, "nodes,", g.edge_count, "edges, label", g.label)
print("feature matrix", g.features.shape)  # one-hot atom types

# fold k is the test fold, fold k+1 validates, the rest trains (8:1:1)
plan = make_folds(ds, seed=0)
for k in (0, 9):
    f = plan[k]
    print(k, len(f["train"]), len(f["val"]), len(f["test"]))

# every graph is tested exactly once
tested = np.concatenate([plan[k]["test"] for k in range(10)])
print("tested once:", sorted(tested.tolist()) == list(range(len(ds))))
