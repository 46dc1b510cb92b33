"""Natural and robust split finding for binary classification trees.

The robust score of a candidate split is the worst score an l-infinity
adversary can force by moving the points that lie within ``eps`` of the
threshold (the *ambiguity set*) to either side. Exact minimization is a 0-1
program; here the adversary's move is chosen by balancing the left-side class
ratios ``n0/N0`` and ``n1/N1`` (both information gain and Gini gain fall as
those ratios approach each other), evaluated in ``O(|ambiguity set|)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset, RobustConfig
from .tree_model import Tree, TreeBuilder

# Splits must beat this score; guards against rounding noise on zero-gain splits.
MIN_SCORE = 1e-12

SCORE_KINDS = ("info_gain", "gini")


def _score_kind(kind: str) -> str:
    k = kind.replace("-", "_")
    if k not in SCORE_KINDS:
        raise ValueError(f"unknown score kind {kind!r}; expected one of {SCORE_KINDS}")
    return k


@dataclass(frozen=True)
class CountState:
    N0: int
    N1: int
    n0: int
    n1: int

    def __post_init__(self):
        if not (0 <= self.n0 <= self.N0 and 0 <= self.n1 <= self.N1 and self.N0 + self.N1 >= 1):
            raise ValueError(f"invalid count state {self}")


@dataclass(frozen=True)
class AdversarialCounts:
    dn0: int
    dn1: int


@dataclass
class SplitPartition:
    """Row indices of one candidate split, grouped by how an adversary can move them."""

    left_certain: np.ndarray
    right_certain: np.ndarray
    ambiguity_left: np.ndarray
    ambiguity_right: np.ndarray

    @property
    def ambiguity(self) -> np.ndarray:
        return np.concatenate([self.ambiguity_left, self.ambiguity_right])

    @property
    def left(self) -> np.ndarray:
        return np.concatenate([self.left_certain, self.ambiguity_left])

    @property
    def right(self) -> np.ndarray:
        return np.concatenate([self.ambiguity_right, self.right_certain])


@dataclass
class SplitDecision:
    feature: int
    threshold: float
    score: float
    left: np.ndarray
    right: np.ndarray


# -- scores -----------------------------------------------------------------

def _plogp_sum(*counts):
    """-sum c/n log2(c/n) over the given counts, 0 log 0 = 0, arrays allowed."""
    counts = [np.asarray(c, dtype=np.float64) for c in counts]
    total = sum(counts)
    out = np.zeros(np.broadcast(*counts).shape)
    safe_total = np.where(total > 0, total, 1.0)
    for c in counts:
        p = c / safe_total
        with np.errstate(divide="ignore", invalid="ignore"):
            out -= np.where(c > 0, p * np.log2(np.where(c > 0, p, 1.0)), 0.0)
    return out


def ig_from_counts(N0, N1, n0, n1):
    """Information gain (base-2) of a split, vectorized over count arrays."""
    N0, N1, n0, n1 = (np.asarray(a, dtype=np.float64) for a in (N0, N1, n0, n1))
    N = N0 + N1
    L = n0 + n1
    R = N - L
    return (_plogp_sum(N0, N1)
            - (L / N) * _plogp_sum(n0, n1)
            - (R / N) * _plogp_sum(N0 - n0, N1 - n1))


def _gini(a, b):
    t = a + b
    safe = np.where(t > 0, t, 1.0)
    return np.where(t > 0, 1.0 - (a / safe) ** 2 - (b / safe) ** 2, 0.0)


def gini_from_counts(N0, N1, n0, n1):
    """Gini gain: parent impurity minus size-weighted child impurities."""
    N0, N1, n0, n1 = (np.asarray(a, dtype=np.float64) for a in (N0, N1, n0, n1))
    N = N0 + N1
    L = n0 + n1
    R = N - L
    return _gini(N0, N1) - (L / N) * _gini(n0, n1) - (R / N) * _gini(N0 - n0, N1 - n1)


_SCORERS = {"info_gain": ig_from_counts, "gini": gini_from_counts}


def info_gain(c: CountState) -> float:
    return float(ig_from_counts(c.N0, c.N1, c.n0, c.n1))


def gini_gain(c: CountState) -> float:
    return float(gini_from_counts(c.N0, c.N1, c.n0, c.n1))


def count_score(c: CountState, score_kind: str = "info_gain") -> float:
    return float(_SCORERS[_score_kind(score_kind)](c.N0, c.N1, c.n0, c.n1))


# -- adversary --------------------------------------------------------------

def adversary_prefers_left(c: CountState, label: int) -> bool:
    """Whether moving one right-side example of ``label`` to the left lowers the score.

    Label 0 qualifies iff ``n0/N0 < n1/N1`` and ``(n0+1)/N0 <= n1/N1``; label 1
    is symmetric. Compared in integers to avoid rounding.
    """
    N0, N1, n0, n1 = c.N0, c.N1, c.n0, c.n1
    if label == 0:
        return N0 > 0 and n0 * N1 < n1 * N0 and (n0 + 1) * N1 <= n1 * N0
    if label == 1:
        return N1 > 0 and n1 * N0 < n0 * N1 and (n1 + 1) * N0 <= n0 * N1
    raise ValueError("label must be 0 or 1")


def find_adversarial_counts(N0: int, N1: int, n0o: int, n1o: int, a0: int, a1: int) -> AdversarialCounts:
    """How many ambiguous class-0 / class-1 points the adversary sends left.

    Minimizes ``|(n0o + dn0)/N0 - (n1o + dn1)/N1|`` over ``0 <= dn0 <= a0``,
    ``0 <= dn1 <= a1``: for every ``dn0`` the best ``dn1`` is the ceiling or
    floor of the ratio-matching value, clamped to range. The first strict
    improvement wins, starting from ``(0, 0)``.
    """
    if min(N0, N1, n0o, n1o, a0, a1) < 0 or n0o + a0 > N0 or n1o + a1 > N1:
        raise ValueError("invalid counts")
    if N0 == 0 or N1 == 0 or (a0 == 0 and a1 == 0):
        return AdversarialCounts(0, 0)
    # objective scaled by N0*N1 so it is an exact integer
    dn0 = np.arange(a0 + 1, dtype=np.int64)
    target = N1 * (n0o + dn0)
    floor = target // N0 - n1o
    ceil = -((-target) // N0) - n1o
    cand = np.clip(np.stack([ceil, floor], axis=1), 0, a1)
    obj = np.abs(((n0o + dn0)[:, None]) * N1 - (n1o + cand) * N0)
    start = abs(n0o * N1 - n1o * N0)
    flat = obj.ravel()
    k = int(np.argmin(flat))
    if flat[k] >= start:
        return AdversarialCounts(0, 0)
    return AdversarialCounts(int(dn0[k // 2]), int(cand.ravel()[k]))


def ratio_gap(N0: int, N1: int, n0: int, n1: int) -> int:
    """``|n0/N0 - n1/N1|`` scaled by ``N0*N1`` (exact)."""
    return abs(n0 * N1 - n1 * N0)


# -- partitions and robust scores ------------------------------------------

def _eps(config: RobustConfig, d: int, j: int) -> float:
    return float(config.for_features(d)[j])


def partition_split(dataset: Dataset, instances, j: int, eta: float, eps: float) -> SplitPartition:
    idx = np.asarray(instances, dtype=np.int64)
    v = dataset.features[idx, j]
    lo, hi = eta - eps, eta + eps
    amb = (v >= lo) & (v <= hi)
    return SplitPartition(
        left_certain=idx[v < lo],
        right_certain=idx[v > hi],
        ambiguity_left=idx[amb & (v < eta)],
        ambiguity_right=idx[amb & (v >= eta)],
    )


def _class_counts(labels, rows):
    y = labels[rows]
    n1 = int(np.count_nonzero(y == 1))
    return len(rows) - n1, n1


def natural_score_ig(j: int, eta: float, instances, dataset: Dataset, score_kind: str = "info_gain") -> float:
    idx = np.asarray(instances, dtype=np.int64)
    y = dataset.labels
    N0, N1 = _class_counts(y, idx)
    n0, n1 = _class_counts(y, idx[dataset.features[idx, j] < eta])
    return count_score(CountState(N0, N1, n0, n1), score_kind)


def adversarial_left_counts(part: SplitPartition, labels) -> tuple:
    """Left-side class counts after the ratio-balancing adversarial move."""
    N0, N1 = _class_counts(labels, np.concatenate([part.left, part.right]))
    n0o, n1o = _class_counts(labels, part.left_certain)
    a0, a1 = _class_counts(labels, part.ambiguity)
    adv = find_adversarial_counts(N0, N1, n0o, n1o, a0, a1)
    return N0, N1, n0o + adv.dn0, n1o + adv.dn1


def robust_score_ig(j: int, eta: float, instances, dataset: Dataset, config: RobustConfig,
                    score_kind: str = "info_gain") -> float:
    """Approximate worst-case score of splitting ``instances`` on feature ``j`` at ``eta``.

    Two feasible adversarial assignments are scored, the ratio-balancing one
    and the unperturbed one, and the smaller is returned. The result is an
    upper bound on the exact minimum and never exceeds the natural score.
    """
    eps = _eps(config, dataset.feature_count, j)
    natural = natural_score_ig(j, eta, instances, dataset, score_kind)
    if eps == 0:
        return natural
    part = partition_split(dataset, instances, j, eta, eps)
    N0, N1, n0, n1 = adversarial_left_counts(part, dataset.labels)
    adversarial = count_score(CountState(N0, N1, n0, n1), score_kind)
    return min(adversarial, natural)


def candidate_thresholds(values: np.ndarray) -> np.ndarray:
    """Midpoints between consecutive distinct sorted values."""
    u = np.unique(values)
    return (u[:-1] + u[1:]) / 2.0


def _scan_feature(v, y, eps, scorer, robust):
    """(thresholds, scores) for every candidate split of one feature column."""
    thresholds = candidate_thresholds(v)
    if thresholds.size == 0:
        return thresholds, thresholds
    v0 = np.sort(v[y == 0])
    v1 = np.sort(v[y == 1])
    N0, N1 = v0.size, v1.size
    n0 = np.searchsorted(v0, thresholds, side="left")
    n1 = np.searchsorted(v1, thresholds, side="left")
    scores = scorer(N0, N1, n0, n1)
    if not robust or eps == 0:
        return thresholds, scores
    lo = thresholds - eps
    hi = thresholds + eps
    n0o = np.searchsorted(v0, lo, side="left")
    n1o = np.searchsorted(v1, lo, side="left")
    a0 = np.searchsorted(v0, hi, side="right") - n0o
    a1 = np.searchsorted(v1, hi, side="right") - n1o
    adv0 = n0o.copy()
    adv1 = n1o.copy()
    for k in np.flatnonzero((a0 > 0) | (a1 > 0)):
        adv = find_adversarial_counts(N0, N1, int(n0o[k]), int(n1o[k]), int(a0[k]), int(a1[k]))
        adv0[k] += adv.dn0
        adv1[k] += adv.dn1
    return thresholds, np.minimum(scores, scorer(N0, N1, adv0, adv1))


def best_split_ig(instances, dataset: Dataset, config: RobustConfig, score_kind: str = "info_gain",
                  robust: bool = True) -> Optional[SplitDecision]:
    """Highest-scoring (feature, threshold) over all features, or ``None``.

    Ties go to the lowest feature index, then the lowest threshold.
    """
    scorer = _SCORERS[_score_kind(score_kind)]
    idx = np.asarray(instances, dtype=np.int64)
    y = dataset.labels[idx]
    if idx.size < 2 or np.unique(y).size < 2:
        return None
    d = dataset.feature_count
    eps = config.for_features(d)
    best = None
    for j in range(d):
        v = dataset.features[idx, j]
        thresholds, scores = _scan_feature(v, y, float(eps[j]), scorer, robust)
        if thresholds.size == 0:
            continue
        k = int(np.argmax(scores))
        if best is None or scores[k] > best[2]:
            best = (j, float(thresholds[k]), float(scores[k]))
    if best is None or not best[2] > MIN_SCORE:
        return None
    j, eta, score = best
    goes_left = dataset.features[idx, j] < eta
    return SplitDecision(j, eta, score, idx[goes_left], idx[~goes_left])


def _majority_leaf(builder: TreeBuilder, y: np.ndarray) -> int:
    n1 = int(np.count_nonzero(y == 1))
    n0 = y.size - n1
    label = 1 if n1 > n0 else 0
    total = max(y.size, 1)
    return builder.add_leaf(label, (n0 / total, n1 / total))


def train_tree_ig(dataset: Dataset, config: Optional[RobustConfig] = None, max_depth: int = 5,
                  score_kind: str = "info_gain", robust: bool = True, instances=None) -> Tree:
    """Grow a classification tree top-down with :func:`best_split_ig`.

    Children always receive the unperturbed left/right assignment; the
    adversarial assignment only affects which split is chosen. Leaves
    predict the majority class (ties to class 0).
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if not dataset.is_binary():
        raise ValueError("information-gain trees need labels in {0, 1}")
    config = config or RobustConfig(0.0)
    config.for_features(dataset.feature_count)  # validates vector length
    builder = TreeBuilder()

    def grow(idx, depth):
        y = dataset.labels[idx]
        split = None
        if depth < max_depth:
            split = best_split_ig(idx, dataset, config, score_kind, robust)
        if split is None:
            return _majority_leaf(builder, y)
        node = builder.add_split(split.feature, split.threshold)
        left = grow(split.left, depth + 1)
        right = grow(split.right, depth + 1)
        builder.set_children(node, left, right)
        return node

    root = np.arange(dataset.example_count) if instances is None else np.asarray(instances)
    grow(root, 0)
    return builder.build(with_proba=True)
