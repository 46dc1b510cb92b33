"""Gradient boosted regression trees (natural and robust splits) and random forests."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import List, Optional

import numpy as np

from .data import Dataset, RobustConfig
from .split_ig import SplitDecision, candidate_thresholds, train_tree_ig
from .tree_model import Ensemble, Tree, TreeBuilder, predict_ensemble_batch


@dataclass(frozen=True)
class GradPair:
    g: float
    h: float


@dataclass(frozen=True)
class GHSums:
    GL: float
    HL: float
    GR: float
    HR: float


@dataclass
class BoostParams:
    num_trees: int = 10
    max_depth: int = 5
    shrinkage: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    loss: str = "logistic"
    robust: RobustConfig = field(default_factory=RobustConfig)

    def __post_init__(self):
        if self.num_trees < 0:
            raise ValueError("num_trees must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.shrinkage <= 1:
            raise ValueError("shrinkage must lie in (0, 1]")
        if self.reg_lambda < 0 or self.gamma < 0:
            raise ValueError("lambda and gamma must be >= 0")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_meta(self) -> dict:
        meta = asdict(self)
        meta["robust"] = self.robust.to_jsonable()
        return meta


# -- losses -----------------------------------------------------------------

def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def logistic_loss(y, yhat):
    """Negative log-likelihood of label ``y`` under margin ``yhat``."""
    yhat = np.asarray(yhat, dtype=np.float64)
    return np.logaddexp(0.0, yhat) - np.asarray(y) * yhat


def mse_loss(y, yhat):
    return 0.5 * (np.asarray(y) - np.asarray(yhat)) ** 2


def logistic_grad_hess(y, yhat):
    """``g = p - y`` and ``h = p (1 - p)`` with ``p = sigmoid(yhat)``; arrays allowed."""
    p = _sigmoid(yhat)
    g = p - np.asarray(y, dtype=np.float64)
    h = p * (1.0 - p)
    if np.ndim(g) == 0:
        return GradPair(float(g), float(h))
    return g, h


def mse_grad_hess(y, yhat):
    g = np.asarray(yhat, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    h = np.ones_like(g)
    if np.ndim(g) == 0:
        return GradPair(float(g), 1.0)
    return g, h


LOSSES = {
    "logistic": (logistic_loss, logistic_grad_hess),
    "mse": (mse_loss, mse_grad_hess),
}


# -- scores -----------------------------------------------------------------

def _gain_term(G, H, lam):
    G = np.asarray(G, dtype=np.float64)
    denom = np.asarray(H, dtype=np.float64) + lam
    safe = np.where(denom > 0, denom, 1.0)
    # an empty side with lambda = 0 is 0/0; it contributes nothing
    return np.where(denom > 0, G * G / safe, 0.0)


def split_score(GL, HL, GR, HR, lam: float, gamma: float):
    """Second-order split gain, vectorized over the sums."""
    return 0.5 * (_gain_term(GL, HL, lam) + _gain_term(GR, HR, lam)
                  - _gain_term(np.add(GL, GR), np.add(HL, HR), lam)) - gamma


def xgb_split_score(s: GHSums, lam: float, gamma: float) -> float:
    return float(split_score(s.GL, s.HL, s.GR, s.HR, lam, gamma))


def leaf_weight(G: float, H: float, lam: float) -> float:
    """Minimizer ``-G / (H + lambda)`` of the regularized quadratic leaf objective."""
    if H + lam <= 0:
        raise ValueError("leaf weight needs H + lambda > 0")
    return -G / (H + lam)


# -- robust four-case score -------------------------------------------------

def _sums(g, h, mask):
    return float(g[mask].sum()), float(h[mask].sum())


def robust_score_gbdt(j: int, eta: float, instances, dataset: Dataset, grad, hess,
                      config: RobustConfig, lam: float, gamma: float) -> float:
    """Minimum of the split score over four assignments of the ambiguity set.

    The cases are: unperturbed, everything ambiguous sent right, everything
    sent left, and the two ambiguous halves swapped.
    """
    idx = np.asarray(instances, dtype=np.int64)
    v = dataset.features[idx, j]
    g = np.asarray(grad, dtype=np.float64)[idx]
    h = np.asarray(hess, dtype=np.float64)[idx]
    eps = float(config.for_features(dataset.feature_count)[j])
    lo, hi = eta - eps, eta + eps
    groups = {
        "Lo": v < lo,
        "dL": (v >= lo) & (v < eta),
        "dR": (v >= eta) & (v <= hi),
        "Ro": v > hi,
    }
    G = {k: _sums(g, h, m) for k, m in groups.items()}

    def score(left_keys):
        gl = sum(G[k][0] for k in left_keys)
        hl = sum(G[k][1] for k in left_keys)
        right_keys = [k for k in G if k not in left_keys]
        gr = sum(G[k][0] for k in right_keys)
        hr = sum(G[k][1] for k in right_keys)
        return float(split_score(gl, hl, gr, hr, lam, gamma))

    cases = [("Lo", "dL"), ("Lo",), ("Lo", "dL", "dR"), ("Lo", "dR")]
    return min(score(c) for c in cases)


def _scan_feature_gbdt(v, g, h, eps, lam, gamma, robust):
    thresholds = candidate_thresholds(v)
    if thresholds.size == 0:
        return thresholds, thresholds
    order = np.argsort(v, kind="stable")
    vs = v[order]
    cg = np.concatenate([[0.0], np.cumsum(g[order])])
    ch = np.concatenate([[0.0], np.cumsum(h[order])])
    Gt, Ht = cg[-1], ch[-1]

    def prefix(k):
        return cg[k], ch[k]

    k_eta = np.searchsorted(vs, thresholds, side="left")
    GL, HL = prefix(k_eta)
    s1 = split_score(GL, HL, Gt - GL, Ht - HL, lam, gamma)
    if not robust or eps == 0:
        return thresholds, s1
    G_lo, H_lo = prefix(np.searchsorted(vs, thresholds - eps, side="left"))
    G_hi, H_hi = prefix(np.searchsorted(vs, thresholds + eps, side="right"))
    # left sets: Lo; Lo + ambiguity; Lo + (ambiguity right of eta)
    s2 = split_score(G_lo, H_lo, Gt - G_lo, Ht - H_lo, lam, gamma)
    s3 = split_score(G_hi, H_hi, Gt - G_hi, Ht - H_hi, lam, gamma)
    G4 = G_lo + (G_hi - GL)
    H4 = H_lo + (H_hi - HL)
    s4 = split_score(G4, H4, Gt - G4, Ht - H4, lam, gamma)
    return thresholds, np.minimum(np.minimum(s1, s2), np.minimum(s3, s4))


def best_split_gbdt(instances, dataset: Dataset, grad, hess, config: RobustConfig,
                    params: BoostParams, robust: bool = True) -> Optional[SplitDecision]:
    """Best (feature, threshold) by natural or four-case robust score.

    Returns ``None`` unless the best score is strictly positive. Ties go to the
    lowest feature index, then the lowest threshold.
    """
    idx = np.asarray(instances, dtype=np.int64)
    if idx.size < 2:
        return None
    g = np.asarray(grad, dtype=np.float64)[idx]
    h = np.asarray(hess, dtype=np.float64)[idx]
    eps = config.for_features(dataset.feature_count)
    best = None
    for j in range(dataset.feature_count):
        v = dataset.features[idx, j]
        thresholds, scores = _scan_feature_gbdt(v, g, h, float(eps[j]), params.reg_lambda,
                                                params.gamma, robust)
        if thresholds.size == 0:
            continue
        k = int(np.argmax(scores))
        if best is None or scores[k] > best[2]:
            best = (j, float(thresholds[k]), float(scores[k]))
    if best is None or not best[2] > 0:
        return None
    j, eta, score = best
    goes_left = dataset.features[idx, j] < eta
    return SplitDecision(j, eta, score, idx[goes_left], idx[~goes_left])


def build_regression_tree(dataset: Dataset, grad, hess, params: BoostParams,
                          robust: bool = True, instances=None) -> Tree:
    """One boosting round's tree; leaves hold shrinkage-scaled weights."""
    grad = np.asarray(grad, dtype=np.float64)
    hess = np.asarray(hess, dtype=np.float64)
    builder = TreeBuilder()
    lam = params.reg_lambda

    def leaf(idx):
        G, H = float(grad[idx].sum()), float(hess[idx].sum())
        w = leaf_weight(G, H, lam) if H + lam > 0 else 0.0
        return builder.add_leaf(params.shrinkage * w)

    def grow(idx, depth):
        split = None
        if depth < params.max_depth:
            split = best_split_gbdt(idx, dataset, grad, hess, params.robust, params, robust)
        if split is None:
            return leaf(idx)
        node = builder.add_split(split.feature, split.threshold)
        builder.set_children(node, grow(split.left, depth + 1), grow(split.right, depth + 1))
        return node

    root = np.arange(dataset.example_count) if instances is None else np.asarray(instances)
    grow(root, 0)
    return builder.build()


@dataclass
class BoostHistory:
    loss: List[float] = field(default_factory=list)
    predictions: Optional[np.ndarray] = None


def train_gbdt(dataset: Dataset, params: BoostParams, robust: bool = True,
               history: Optional[BoostHistory] = None) -> Ensemble:
    """Fit ``params.num_trees`` trees additively on second-order loss expansions.

    Base score is margin 0 for logistic loss and the label mean for mse. Pass
    a :class:`BoostHistory` to record the training loss before the first round
    and after every round, plus the final prediction cache.
    """
    loss_fn, grad_fn = LOSSES[params.loss]
    y = dataset.labels
    if params.loss == "logistic":
        if not dataset.is_binary():
            raise ValueError("logistic loss needs labels in {0, 1}")
        base, kind = 0.0, "gbdt-binary"
    else:
        base, kind = float(np.mean(y)), "gbdt-regression"
    pred = np.full(dataset.example_count, base)
    if history is not None:
        history.loss.append(float(np.mean(loss_fn(y, pred))))
    trees = []
    for _ in range(params.num_trees):
        g, h = grad_fn(y, pred)
        tree = build_regression_tree(dataset, g, h, params, robust)
        pred += tree.value[tree.apply_batch(dataset.features)]
        trees.append(tree)
        if history is not None:
            history.loss.append(float(np.mean(loss_fn(y, pred))))
    if history is not None:
        history.predictions = pred
    eps = params.robust.to_jsonable() if robust else 0.0
    return Ensemble(trees, kind=kind, base_score=base, epsilon_used=eps,
                    meta={"trainer": "gbdt", "robust": bool(robust), **params.to_meta()})


def _remap_features(tree: Tree, columns) -> Tree:
    columns = np.asarray(columns)
    feature = np.where(tree.feature >= 0, columns[np.maximum(tree.feature, 0)], -1)
    return Tree(feature, tree.threshold, tree.left, tree.right, tree.value, tree.proba)


def train_random_forest(dataset: Dataset, num_trees: int = 10, max_depth: int = 5,
                        config: Optional[RobustConfig] = None, score_kind: str = "info_gain",
                        robust: bool = True, row_rate: float = 0.5, col_rate: float = 0.5,
                        seed: int = 0) -> Ensemble:
    """Majority-vote forest of information-gain trees.

    Each tree sees a row sample drawn without replacement and a column sample,
    both at the given rates, from a generator seeded with ``seed``.
    """
    if not dataset.is_binary():
        raise ValueError("random forests here are binary classifiers")
    if not (0 < row_rate <= 1 and 0 < col_rate <= 1):
        raise ValueError("sampling rates must lie in (0, 1]")
    config = config or RobustConfig(0.0)
    rng = np.random.default_rng(seed)
    n, d = dataset.example_count, dataset.feature_count
    n_rows = max(1, int(round(row_rate * n)))
    n_cols = max(1, int(round(col_rate * d)))
    trees = []
    for _ in range(num_trees):
        rows = np.sort(rng.choice(n, size=n_rows, replace=False))
        cols = np.sort(rng.choice(d, size=n_cols, replace=False))
        sub = dataset.subset(rows=rows, columns=cols)
        tree = train_tree_ig(sub, config.subset(cols), max_depth, score_kind, robust)
        trees.append(_remap_features(tree, cols))
    return Ensemble(trees, kind="random-forest", epsilon_used=config.to_jsonable() if robust else 0.0,
                    meta={"trainer": "random-forest", "robust": bool(robust), "num_trees": num_trees,
                          "max_depth": max_depth, "score": score_kind, "row_rate": row_rate,
                          "col_rate": col_rate, "seed": seed})


def training_loss(ens: Ensemble, dataset: Dataset, loss: str) -> float:
    return float(np.mean(LOSSES[loss][0](dataset.labels, predict_ensemble_batch(ens, dataset.features))))
