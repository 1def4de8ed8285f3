"""Small synthetic two-class dataset shared by trainer and CLI tests."""

import numpy as np

from care.graphio import Dataset, GraphRecord, build_features


def toy_dataset(n=20, seed=0) -> Dataset:
    """Class 0: paths. Class 1: paths with a triangle closed at one end."""
    rng = np.random.default_rng(seed)
    adjs, labels = [], []
    for i in range(n):
        k = int(rng.integers(4, 8))
        a = np.zeros((k, k))
        for j in range(k - 1):
            a[j, j + 1] = a[j + 1, j] = 1.0
        y = i % 2
        if y:
            a[0, 2] = a[2, 0] = 1.0
        adjs.append(a)
        labels.append(y)
    feats = build_features(adjs, None, "degree_onehot")
    return Dataset("TOY", [GraphRecord(a, f, y) for a, f, y in zip(adjs, feats, labels)], 2, "degree_onehot")
