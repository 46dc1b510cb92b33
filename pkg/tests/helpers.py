"""Random models and datasets shared by the test modules."""
import numpy as np

from robust_trees.data import Dataset
from robust_trees.tree_model import Ensemble, TreeBuilder


def random_tree(rng, depth, d, leaf_scale=1.0, full=False):
    b = TreeBuilder()

    def grow(level):
        if level == depth or (not full and level > 0 and rng.random() < 0.25):
            return b.add_leaf(rng.normal(scale=leaf_scale))
        node = b.add_split(int(rng.integers(d)), float(np.round(rng.uniform(0.05, 0.95), 3)))
        left = grow(level + 1)
        right = grow(level + 1)
        b.set_children(node, left, right)
        return node

    grow(0)
    return b.build()


def random_ensemble(rng, max_trees=5, max_depth=3, max_d=4, kind="gbdt-binary"):
    d = int(rng.integers(1, max_d + 1))
    k = int(rng.integers(1, max_trees + 1))
    depth = int(rng.integers(1, max_depth + 1))
    trees = [random_tree(rng, depth, d) for _ in range(k)]
    if kind == "single-tree":
        trees = trees[:1]
        t = trees[0]
        t.value[:] = (t.value > 0).astype(float)
    return Ensemble(trees, kind=kind, base_score=0.0), d


def random_binary_dataset(rng, n=30, d=3, levels=None):
    X = rng.random((n, d))
    if levels:
        X = np.round(X * levels) / levels
    y = (rng.random(n) < 0.5).astype(float)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    return Dataset(X, y)
