"""Decision trees and gradient-boosted ensembles trained against l-infinity perturbations.

Submodules: :mod:`~robust_trees.data`, :mod:`~robust_trees.tree_model`,
:mod:`~robust_trees.split_ig`, :mod:`~robust_trees.boosting`,
:mod:`~robust_trees.attacks` and :mod:`~robust_trees.cli`.
"""
from .attacks import (AttackResult, CellGuardError, RobustnessReport, boundary_distance, cheng_attack_linf,
                      evaluate_robustness, exact_attack_small, papernot_attack)
from .boosting import BoostParams, train_gbdt, train_random_forest
from .data import (Dataset, DataError, RobustConfig, Scaler, apply_scaler, fit_scaler, load_bundled,
                   load_libsvm, train_test_split)
from .split_ig import best_split_ig, info_gain, gini_gain, robust_score_ig, train_tree_ig
from .tree_model import (Ensemble, SchemaError, Tree, deserialize, predict_ensemble, predict_label,
                         predict_tree, serialize)

__version__ = "0.1.0"
