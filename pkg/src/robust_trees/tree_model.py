"""Tree and ensemble representation, prediction and JSON (de)serialization.

Routing rule used everywhere: ``x`` goes left iff ``x[feature] < threshold``,
right otherwise. Ties therefore route right.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

KINDS = ("gbdt-binary", "gbdt-regression", "random-forest", "single-tree")
CLASSIFIER_KINDS = ("gbdt-binary", "random-forest", "single-tree")


class SchemaError(ValueError):
    """Model JSON does not follow the expected schema."""


@dataclass
class Tree:
    """Array-backed binary tree. Leaves have ``feature == -1``.

    ``proba`` optionally holds the class-probability pair of classification
    leaves (``nan`` rows for internal nodes).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    proba: Optional[np.ndarray] = None
    _flat: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.proba is not None:
            self.proba = np.asarray(self.proba, dtype=np.float64)
        n = self.feature.shape[0]
        for name in ("threshold", "left", "right", "value"):
            if getattr(self, name).shape != (n,):
                raise SchemaError(f"tree array {name!r} has wrong length")
        _check_topology(self.feature, self.left, self.right)

    @property
    def node_count(self) -> int:
        return self.feature.shape[0]

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def leaves(self) -> List[int]:
        return [i for i in range(self.node_count) if self.feature[i] < 0]

    def depth(self) -> int:
        def rec(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0)

    def _lists(self):
        if self._flat is None:
            self._flat = (self.feature.tolist(), self.threshold.tolist(),
                          self.left.tolist(), self.right.tolist(), self.value.tolist())
        return self._flat

    def apply(self, x) -> int:
        """Index of the leaf reached by ``x``."""
        feat, thr, left, right, _ = self._lists()
        i = 0
        while feat[i] >= 0:
            i = left[i] if x[feat[i]] < thr[i] else right[i]
        return i

    def apply_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while np.any(active):
            idx = rows[active]
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] < self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def path_to(self, leaf: int) -> List[tuple]:
        """Predicates ``(feature, threshold, went_left)`` from root to ``leaf``."""
        parent = {}
        for i in range(self.node_count):
            if self.feature[i] >= 0:
                parent[int(self.left[i])] = (i, True)
                parent[int(self.right[i])] = (i, False)
        path = []
        node = leaf
        while node != 0:
            p, went_left = parent[node]
            path.append((int(self.feature[p]), float(self.threshold[p]), went_left))
            node = p
        return path[::-1]

    def thresholds_by_feature(self) -> Dict[int, List[float]]:
        out: Dict[int, List[float]] = {}
        for f, t in zip(self.feature.tolist(), self.threshold.tolist()):
            if f >= 0:
                out.setdefault(f, []).append(t)
        return out

    def same_structure(self, other: "Tree") -> bool:
        return (np.array_equal(self.feature, other.feature)
                and np.array_equal(self.threshold, other.threshold)
                and np.array_equal(self.left, other.left)
                and np.array_equal(self.right, other.right)
                and np.array_equal(self.value, other.value))


def _check_topology(feature, left, right):
    n = feature.shape[0]
    if n == 0:
        raise SchemaError("tree has no nodes")
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        if feature[i] < 0:
            continue
        for c in (int(left[i]), int(right[i])):
            if not 0 <= c < n or c in seen:
                raise SchemaError(f"node {i} has invalid or repeated child {c}")
            seen.add(c)
            stack.append(c)
    if len(seen) != n:
        raise SchemaError("tree contains nodes unreachable from the root")


class TreeBuilder:
    """Append-only node list used by the trainers and tests."""

    def __init__(self):
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.value: List[float] = []
        self.proba: List[Sequence[float]] = []

    def add_leaf(self, value: float, proba=None) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        self.proba.append(proba if proba is not None else (np.nan, np.nan))
        return len(self.feature) - 1

    def add_split(self, feature: int, threshold: float) -> int:
        self.feature.append(int(feature))
        self.threshold.append(float(threshold))
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.proba.append((np.nan, np.nan))
        return len(self.feature) - 1

    def set_children(self, node: int, left: int, right: int) -> None:
        self.left[node] = left
        self.right[node] = right

    def build(self, with_proba: bool = False) -> Tree:
        return Tree(self.feature, self.threshold, self.left, self.right, self.value,
                    np.array(self.proba, dtype=float) if with_proba else None)


def stump(feature: int, threshold: float, left_value: float, right_value: float) -> Tree:
    b = TreeBuilder()
    root = b.add_split(feature, threshold)
    b.set_children(root, b.add_leaf(left_value), b.add_leaf(right_value))
    return b.build()


def constant_tree(value: float) -> Tree:
    b = TreeBuilder()
    b.add_leaf(value)
    return b.build()


@dataclass
class Ensemble:
    trees: List[Tree]
    kind: str = "gbdt-binary"
    base_score: float = 0.0
    epsilon_used: object = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown ensemble kind {self.kind!r}")

    @property
    def is_classifier(self) -> bool:
        return self.kind in CLASSIFIER_KINDS

    def thresholds_by_feature(self) -> Dict[int, List[float]]:
        out: Dict[int, List[float]] = {}
        for t in self.trees:
            for f, ts in t.thresholds_by_feature().items():
                out.setdefault(f, []).extend(ts)
        return {f: sorted(set(ts)) for f, ts in out.items()}

    def same_structure(self, other: "Ensemble") -> bool:
        return (self.kind == other.kind and self.base_score == other.base_score
                and len(self.trees) == len(other.trees)
                and all(a.same_structure(b) for a, b in zip(self.trees, other.trees)))


def predict_tree(tree: Tree, x) -> float:
    """Value of the leaf reached by ``x``."""
    return tree._lists()[4][tree.apply(x)]


def predict_ensemble(ens: Ensemble, x) -> float:
    """Raw score of a single example.

    GBDT kinds: ``base_score`` plus the sum of tree outputs, accumulated in
    tree order. Random forest: fraction of trees voting for class 1.
    Single tree: the leaf's class label.
    """
    if ens.kind == "random-forest":
        if not ens.trees:
            return 0.0
        votes = sum(1 for t in ens.trees if predict_tree(t, x) >= 0.5)
        return votes / len(ens.trees)
    s = ens.base_score
    for t in ens.trees:
        s += predict_tree(t, x)
    return s


def predict_ensemble_batch(ens: Ensemble, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if ens.kind == "random-forest":
        if not ens.trees:
            return np.zeros(X.shape[0])
        votes = np.zeros(X.shape[0])
        for t in ens.trees:
            votes += t.value[t.apply_batch(X)] >= 0.5
        return votes / len(ens.trees)
    s = np.full(X.shape[0], ens.base_score)
    for t in ens.trees:
        s += t.value[t.apply_batch(X)]
    return s


def score_to_label(kind: str, score):
    """Map raw scores to 0/1 class labels for the classifier kinds."""
    score = np.asarray(score)
    if kind == "gbdt-binary":
        out = score >= 0.0
    elif kind == "random-forest":
        out = score > 0.5  # vote ties go to class 0
    elif kind == "single-tree":
        out = score >= 0.5
    else:
        raise ValueError(f"{kind!r} models do not produce class labels")
    return out.astype(np.int64) if out.ndim else int(out)


def predict_label(ens: Ensemble, x) -> int:
    return score_to_label(ens.kind, predict_ensemble(ens, x))


def predict_label_batch(ens: Ensemble, X) -> np.ndarray:
    return score_to_label(ens.kind, predict_ensemble_batch(ens, X))


def as_ensemble(model) -> Ensemble:
    """Wrap a bare :class:`Tree` as a single-tree ensemble."""
    if isinstance(model, Ensemble):
        return model
    if isinstance(model, Tree):
        return Ensemble([model], kind="single-tree")
    raise TypeError(f"expected Tree or Ensemble, got {type(model).__name__}")


# -- JSON -------------------------------------------------------------------

def _tree_to_obj(tree: Tree) -> dict:
    nodes = []
    for i in range(tree.node_count):
        if tree.feature[i] < 0:
            node = {"leaf": float(tree.value[i])}
            if tree.proba is not None and not np.isnan(tree.proba[i, 0]):
                node["proba"] = [float(p) for p in tree.proba[i]]
        else:
            node = {"feature": int(tree.feature[i]), "threshold": float(tree.threshold[i]),
                    "left": int(tree.left[i]), "right": int(tree.right[i])}
        nodes.append(node)
    return {"nodes": nodes}


def _tree_from_obj(obj, where: str) -> Tree:
    if not isinstance(obj, dict) or not isinstance(obj.get("nodes"), list):
        raise SchemaError(f"{where}: expected an object with a 'nodes' list")
    b = TreeBuilder()
    has_proba = False
    for k, node in enumerate(obj["nodes"]):
        at = f"{where}.nodes[{k}]"
        if not isinstance(node, dict):
            raise SchemaError(f"{at}: node must be an object")
        if "leaf" in node:
            proba = node.get("proba")
            if proba is not None:
                if not (isinstance(proba, list) and len(proba) == 2):
                    raise SchemaError(f"{at}: 'proba' must be a pair")
                has_proba = True
            b.add_leaf(_number(node["leaf"], at, "leaf"), proba)
            continue
        for key in ("feature", "threshold", "left", "right"):
            if key not in node:
                raise SchemaError(f"{at}: missing {key!r}")
        feat = node["feature"]
        if not isinstance(feat, int) or isinstance(feat, bool) or feat < 0:
            raise SchemaError(f"{at}: 'feature' must be a non-negative integer")
        idx = b.add_split(feat, _number(node["threshold"], at, "threshold"))
        left, right = node["left"], node["right"]
        if not all(isinstance(c, int) and not isinstance(c, bool) for c in (left, right)):
            raise SchemaError(f"{at}: child ids must be integers")
        b.set_children(idx, left, right)
    if not b.feature:
        raise SchemaError(f"{where}: tree has no nodes")
    return b.build(with_proba=has_proba)


def _number(v, at, key) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{at}: {key!r} must be a number")
    return float(v)


def ensemble_to_obj(ens: Ensemble) -> dict:
    obj = {
        "kind": ens.kind,
        "base_score": float(ens.base_score),
        "epsilon_used": ens.epsilon_used,
        "trees": [_tree_to_obj(t) for t in ens.trees],
    }
    if ens.meta:
        obj["meta"] = ens.meta
    return obj


def serialize(ens: Ensemble, indent: Optional[int] = None) -> str:
    """JSON text; floats are written with ``repr`` so they round-trip exactly."""
    return json.dumps(ensemble_to_obj(as_ensemble(ens)), indent=indent)


def deserialize(text: str) -> Ensemble:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise SchemaError("model JSON must be an object")
    for key in ("kind", "base_score", "trees"):
        if key not in obj:
            raise SchemaError(f"missing top-level {key!r}")
    if obj["kind"] not in KINDS:
        raise SchemaError(f"unknown kind {obj['kind']!r}")
    if not isinstance(obj["trees"], list):
        raise SchemaError("'trees' must be a list")
    eps = obj.get("epsilon_used", 0.0)
    if not (isinstance(eps, (int, float)) or
            (isinstance(eps, list) and all(isinstance(e, (int, float)) for e in eps))):
        raise SchemaError("'epsilon_used' must be a number or a list of numbers")
    meta = obj.get("meta", {})
    if not isinstance(meta, dict):
        raise SchemaError("'meta' must be an object")
    trees = [_tree_from_obj(t, f"trees[{k}]") for k, t in enumerate(obj["trees"])]
    return Ensemble(trees, kind=obj["kind"], base_score=_number(obj["base_score"], "model", "base_score"),
                    epsilon_used=eps, meta=meta)
