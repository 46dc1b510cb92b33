"""Natural vs robust depth-1 split on the 10-point toy set.

Natural training picks the feature with the tight margin. With eps=0.1 the
robust score prefers the feature whose gap survives the perturbation.
"""
import numpy as np

from robust_trees import Ensemble, RobustConfig, exact_attack_small, predict_label, train_tree_ig
from robust_trees.data import toy_split_dataset

ds = toy_split_dataset()
for robust in (False, True):
    eps = 0.1 if robust else 0.0
    tree = train_tree_ig(ds, RobustConfig(eps), 1, robust=robust)
    model = Ensemble([tree], kind="single-tree")
    pred = np.array([predict_label(model, x) for x in ds.features])
    acc = (pred == ds.labels).mean()
    # a point is robustly correct when no flip lies within eps
    held = 0
    for x, y in zip(ds.features, ds.labels):
        if predict_label(model, x) != y:
            continue
        res = exact_attack_small(model, x, int(y))
        held += not res.success or res.linf > 0.1
    print(f"{'robust' if robust else 'natural'}: feature {tree.feature[0]} threshold {tree.threshold[0]:.3f} "
          f"accuracy {acc:.1f} correct within eps=0.1 {held / len(ds.labels):.1f}")
