"""Average l-infinity distortion needed to flip natural vs robust trees.

Uses the bundled breast-cancer data, normalized to [0,1], and the boundary
attack with reference starts from the training set. Pass the number of test points as the first argument (default 40).
"""
import sys

from robust_trees import (Ensemble, RobustConfig, apply_scaler, evaluate_robustness, fit_scaler, load_bundled,
                          train_test_split, train_tree_ig)

n = int(sys.argv[1]) if len(sys.argv) > 1 else 40
train, test = train_test_split(load_bundled("breast-cancer"), 0.2, seed=0)
sc = fit_scaler(train)
train, test = apply_scaler(sc, train), apply_scaler(sc, test)

for eps in (0.0, 0.3):
    tree = train_tree_ig(train, RobustConfig(eps), 5, robust=eps > 0)
    rep = evaluate_robustness(Ensemble([tree], kind="single-tree"), test.features, test.labels,
                              budget=5000, reference=train.features, threads=4, max_examples=n)
    print(f"eps={eps}: {rep.summary()}")
