"""Adversarial evaluation of tree models in the normalized cube ``[0, 1]^d``.

Three attacks are provided:

* :func:`papernot_attack` - greedy leaf-neighbourhood search on a single tree;
* :func:`cheng_attack_linf` - hard-label attack that minimizes the distance to
  the decision boundary along a ray, ``g(theta)``, with randomized
  gradient-free updates;
* :func:`exact_attack_small` - exhaustive search over the cells cut out by the
  ensemble's thresholds. Exact, but only feasible for small models.
"""
from __future__ import annotations

import csv
import io
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .tree_model import Ensemble, Tree, as_ensemble, predict_label, predict_label_batch, score_to_label

PAPERNOT_DELTA = 1e-6
EXACT_DELTA = 1e-9
CELL_GUARD = 10 ** 7
ATTACKS = ("papernot", "boundary", "exact")


class CellGuardError(RuntimeError):
    """The cell grid of the model is too large for exhaustive search."""


@dataclass
class AttackResult:
    success: bool
    adversarial_x: Optional[np.ndarray] = None
    linf: float = math.nan
    l1: float = math.nan
    l2: float = math.nan
    queries: int = 0
    attack: str = ""

    @classmethod
    def found(cls, x, x_adv, queries, attack):
        diff = np.asarray(x_adv, dtype=float) - np.asarray(x, dtype=float)
        a = np.abs(diff)
        return cls(True, np.asarray(x_adv, dtype=float), float(a.max(initial=0.0)), float(a.sum()),
                   float(np.sqrt((diff * diff).sum())), queries, attack)

    @classmethod
    def failed(cls, queries, attack):
        return cls(False, None, queries=queries, attack=attack)


class _Oracle:
    """Hard-label access to a model with a query counter."""

    def __init__(self, model):
        self.model = as_ensemble(model)
        if not self.model.is_classifier:
            raise ValueError("attacks need a classification model")
        self.queries = 0

    def label(self, x) -> int:
        self.queries += 1
        return predict_label(self.model, x)


def _verified(model: Ensemble, x_adv, y) -> bool:
    x_adv = np.asarray(x_adv)
    return bool(np.all((x_adv >= 0) & (x_adv <= 1))) and predict_label(model, x_adv) != y


def _check_start(model: Ensemble, x, y):
    if predict_label(model, x) != y:
        raise ValueError("the model does not classify x as y")


# -- Papernot ---------------------------------------------------------------

def _leaf_label(ens: Ensemble, tree: Tree, leaf: int) -> int:
    value = float(tree.value[leaf])
    if ens.kind == "random-forest":
        return int(value >= 0.5)
    if ens.kind == "single-tree":
        return score_to_label("single-tree", value)
    return score_to_label(ens.kind, ens.base_score + value)


def _leaves_by_tree_distance(tree: Tree, start: int) -> List[int]:
    adj = {i: [] for i in range(tree.node_count)}
    for i in range(tree.node_count):
        if tree.feature[i] >= 0:
            for c in (int(tree.left[i]), int(tree.right[i])):
                adj[i].append(c)
                adj[c].append(i)
    seen = {start}
    order = []
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if tree.feature[node] < 0:
            order.append(node)
        for nb in sorted(adj[node]):
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return order


def _reach_leaf(tree: Tree, leaf: int, x, delta: float):
    """Closest point to ``x`` (per feature) satisfying the path to ``leaf``."""
    lo = {}
    hi = {}
    for f, t, went_left in tree.path_to(leaf):
        if went_left:
            hi[f] = min(hi.get(f, math.inf), t)
        else:
            lo[f] = max(lo.get(f, -math.inf), t)
    x_new = np.array(x, dtype=float)
    for f in set(lo) | set(hi):
        a = max(lo.get(f, 0.0), 0.0)
        b = hi.get(f, math.inf)
        upper = min(b - delta, 1.0)
        if a > upper:
            return None
        if x_new[f] < a:
            x_new[f] = a
        elif x_new[f] >= b or x_new[f] > 1.0:
            x_new[f] = upper
    return x_new


def papernot_attack(tree, x, y: int, delta: float = PAPERNOT_DELTA) -> AttackResult:
    """Move ``x`` into the nearest (by tree distance) leaf with a different label.

    Each feature on the target leaf's path is set to the nearest value meeting
    its predicates: the threshold itself for ``>=`` constraints and
    ``threshold - delta`` for ``<`` constraints. Unconstrained features, and
    those already satisfied, keep their values.
    """
    ens = as_ensemble(tree)
    if len(ens.trees) != 1:
        raise ValueError("Papernot's attack targets a single tree")
    t = ens.trees[0]
    x = np.asarray(x, dtype=float)
    _check_start(ens, x, y)
    queries = 0
    for leaf in _leaves_by_tree_distance(t, t.apply(x)):
        if _leaf_label(ens, t, leaf) == y:
            continue
        x_adv = _reach_leaf(t, leaf, x, delta)
        if x_adv is None:
            continue
        queries += 1
        if _verified(ens, x_adv, y):
            return AttackResult.found(x, x_adv, queries, "papernot")
    return AttackResult.failed(queries, "papernot")


# -- boundary distance and Cheng's attack -----------------------------------

def _ray_limit(d: int) -> float:
    return 2.0 * math.sqrt(d)


class _Ray:
    def __init__(self, oracle: _Oracle, x, y, tol: float):
        self.oracle = oracle
        self.x = np.asarray(x, dtype=float)
        self.y = y
        self.tol = tol
        self.limit = _ray_limit(self.x.size)

    def point(self, direction, lam):
        return np.clip(self.x + lam * direction, 0.0, 1.0)

    def flipped(self, direction, lam) -> bool:
        return self.oracle.label(self.point(direction, lam)) != self.y

    def distance(self, theta, initial: Optional[float] = None) -> float:
        """``g(theta)``; ``initial`` is a guess used to bracket locally."""
        theta = np.asarray(theta, dtype=float)
        norm = np.abs(theta).max(initial=0.0)
        if not norm > 0:
            raise ValueError("direction must be non-zero")
        direction = theta / norm
        if initial is not None and math.isfinite(initial) and initial > 0:
            hi = min(initial, self.limit)
            if self.flipped(direction, hi):
                lo = hi * 0.95
                while self.flipped(direction, lo):
                    hi = lo
                    lo *= 0.9
                    if lo < self.tol:
                        lo = 0.0
                        break
            else:
                lo = hi
                hi = min(hi * 1.05, self.limit)
                while not self.flipped(direction, hi):
                    if hi >= self.limit:
                        return math.inf
                    lo = hi
                    hi = min(hi * 1.2, self.limit)
        else:
            lo, hi = 0.0, min(0.01, self.limit)
            while not self.flipped(direction, hi):
                if hi >= self.limit:
                    return math.inf
                lo = hi
                hi = min(hi * 2.0, self.limit)
        while hi - lo > self.tol:
            mid = 0.5 * (lo + hi)
            if self.flipped(direction, mid):
                hi = mid
            else:
                lo = mid
        return hi


def boundary_distance(model, x, y: int, theta, tol: float = 1e-5) -> float:
    """Smallest ``lam`` such that ``clip(x + lam * theta / ||theta||_inf)`` is not labelled ``y``.

    Exponential bracketing then bisection to ``tol``; returns ``inf`` when the
    label does not change for ``lam <= 2 sqrt(d)``.
    """
    oracle = _Oracle(model)
    return _Ray(oracle, x, y, tol).distance(theta)


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def _restart(ray: _Ray, rng, best_theta, best_g: float, tries: int, budget: int):
    """Best of ``tries`` fresh random directions that beat ``best_g``, else the incumbent."""
    d = ray.x.size
    for _ in range(tries):
        if ray.oracle.queries >= budget:
            break
        theta = _unit(rng.standard_normal(d) if rng.random() < 0.5 else rng.random(d) - ray.x)
        if not np.any(theta) or not ray.flipped(theta / np.abs(theta).max(), best_g):
            continue
        g = ray.distance(theta, initial=best_g)
        if g < best_g:
            return theta, g
    return best_theta, best_g


def cheng_attack_linf(model, x, y: int, budget: int = 20000, seed: int = 0, reference=None,
                      k0: int = 20, n_reference: int = 20, beta: float = 0.01, alpha0: float = 0.2,
                      tol: float = 1e-5, final_tol: float = 1e-9) -> AttackResult:
    """Hard-label l-infinity attack by minimizing the boundary distance ``g(theta)``.

    The search starts from the best of ``k0`` random directions and directions
    towards the nearest ``reference`` points the model labels differently.
    Each step estimates a directional derivative with one random unit vector
    ``u`` (``(g(theta + beta u) - g(theta)) / beta * u``), steps against it
    and adapts the step size: x1.5 after an improvement, /2 otherwise.
    When the step size collapses the search restarts from a fresh random
    direction that beats the best distance so far, if one turns up. Stops
    once ``budget`` model queries are spent, then re-bisects the best ray to
    ``final_tol``.
    """
    oracle = _Oracle(model)
    ens = oracle.model
    x = np.asarray(x, dtype=float)
    _check_start(ens, x, y)
    rng = np.random.default_rng(seed)
    ray = _Ray(oracle, x, y, tol)
    d = x.size

    starts = [rng.standard_normal(d) for _ in range(k0)]
    if reference is not None and n_reference > 0:
        ref = np.atleast_2d(np.asarray(reference, dtype=float))
        order = np.argsort(np.abs(ref - x).max(axis=1), kind="stable")
        found = 0
        for i in order:
            if found >= n_reference or oracle.queries >= budget:
                break
            diff = ref[i] - x
            if np.abs(diff).max() > 0 and oracle.label(ref[i]) != y:
                starts.append(diff)
                found += 1

    best_theta, best_g = None, math.inf
    for theta in starts:
        if oracle.queries >= budget:
            break
        theta = _unit(theta)
        if not np.any(theta):
            continue
        if math.isfinite(best_g):
            # cheap rejection: no flip at the current best radius
            if not ray.flipped(theta / np.abs(theta).max(), best_g):
                continue
            g = ray.distance(theta, initial=best_g)
        else:
            g = ray.distance(theta)
        if g < best_g:
            best_theta, best_g = theta, g
    while best_theta is None and oracle.queries < budget:
        # bracketing can step over narrow regions: probe uniform box points instead
        p = rng.random(d)
        gap = np.abs(p - x).max()
        if gap > 0 and oracle.label(p) != y:
            best_theta = _unit(p - x)
            best_g = ray.distance(best_theta, initial=gap)
    if best_theta is None:
        return AttackResult.failed(oracle.queries, "boundary")

    theta, g_theta = best_theta, best_g
    alpha = alpha0
    while oracle.queries < budget:
        u = _unit(rng.standard_normal(d))
        probe = _unit(theta + beta * u)
        g_probe = ray.distance(probe, initial=g_theta)
        if not math.isfinite(g_probe):
            continue
        if g_probe < best_g:
            best_theta, best_g = probe, g_probe
        grad = (g_probe - g_theta) / beta * u
        candidate = _unit(theta - alpha * grad)
        if not np.any(candidate) or oracle.queries >= budget:
            break
        if ray.flipped(candidate / np.abs(candidate).max(), g_theta):
            g_new = ray.distance(candidate, initial=g_theta)
        else:
            g_new = math.inf
        if g_new < g_theta:
            theta, g_theta = candidate, g_new
            alpha *= 1.5
            if g_new < best_g:
                best_theta, best_g = candidate, g_new
        else:
            alpha /= 2.0
            if alpha < 1e-6:
                alpha = alpha0
                theta, g_theta = _restart(ray, rng, best_theta, best_g, k0, budget)
                if g_theta < best_g:
                    best_theta, best_g = theta, g_theta

    fine = _Ray(oracle, x, y, final_tol).distance(best_theta, initial=best_g)
    if fine < best_g:
        best_g = fine
    x_adv = ray.point(best_theta / np.abs(best_theta).max(), best_g)
    if not _verified(ens, x_adv, y):
        return AttackResult.failed(oracle.queries, "boundary")
    return AttackResult.found(x, x_adv, oracle.queries, "boundary")


# -- exact oracle -----------------------------------------------------------

@dataclass
class CellGrid:
    """Per-feature sorted thresholds; cells are products of the gaps between them.

    Interval ``k`` of feature ``j`` is ``[t[k-1], t[k])`` with ``t[-1] = 0`` and
    the last interval closed at 1.
    """

    thresholds: dict
    feature_count: int

    @classmethod
    def from_model(cls, model) -> "CellGrid":
        ens = as_ensemble(model)
        raw = ens.thresholds_by_feature()
        d = 1 + max(raw, default=-1)
        # thresholds outside (0, 1] cut nothing inside the cube
        kept = {f: [t for t in ts if 0.0 < t <= 1.0] for f, ts in raw.items()}
        return cls({f: ts for f, ts in kept.items() if ts}, d)

    def cell_count(self) -> int:
        n = 1
        for ts in self.thresholds.values():
            n *= len(ts) + 1
        return n

    def nearest_in_intervals(self, x, delta: float = EXACT_DELTA):
        """For each split feature: candidate coordinates and their distances to ``x``."""
        out = {}
        for f, ts in sorted(self.thresholds.items()):
            bounds = [0.0] + list(ts) + [1.0]
            xf = float(x[f])
            coords = []
            for k in range(len(ts) + 1):
                lo, hi = bounds[k], bounds[k + 1]
                closed = k == len(ts)
                if xf < lo:
                    c = lo
                elif xf < hi or (closed and xf <= hi):
                    c = xf
                else:
                    c = hi if closed else hi - delta
                    if c < lo:
                        c = 0.5 * (lo + hi)
                coords.append(c)
            coords = np.array(coords)
            out[f] = (coords, np.abs(coords - xf))
        return out


def exact_attack_small(model, x, y: int, guard: int = CELL_GUARD, delta: float = EXACT_DELTA,
                       chunk: int = 1 << 16) -> AttackResult:
    """Minimum l-infinity adversarial distortion by enumerating every cell.

    Within a cell the model is constant, so the closest point of the cell to
    ``x`` decides it; strict ``<`` boundaries are approached to within
    ``delta``. Raises :class:`CellGuardError` when the grid exceeds ``guard``.
    """
    ens = as_ensemble(model)
    if not ens.is_classifier:
        raise ValueError("attacks need a classification model")
    x = np.asarray(x, dtype=float)
    _check_start(ens, x, y)
    grid = CellGrid.from_model(ens)
    total = grid.cell_count()
    if total > guard:
        raise CellGuardError(f"model has {total} cells, above the exhaustive-search guard of {guard}")
    per_feature = grid.nearest_in_intervals(x, delta)
    feats = list(per_feature)
    shape = [per_feature[f][0].size for f in feats]
    best_dist, best_point = math.inf, None
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        pts = np.tile(x, (flat.size, 1))
        dist = np.zeros(flat.size)
        if feats:
            ks = np.unravel_index(flat, shape)
            for f, k in zip(feats, ks):
                coords, dists = per_feature[f]
                pts[:, f] = coords[k]
                dist = np.maximum(dist, dists[k])
        flipped = predict_label_batch(ens, pts) != y
        if np.any(flipped):
            cand = np.flatnonzero(flipped)
            i = cand[np.argmin(dist[cand])]
            if dist[i] < best_dist:
                best_dist, best_point = float(dist[i]), pts[i].copy()
    if best_point is None or not _verified(ens, best_point, y):
        return AttackResult.failed(total, "exact")
    return AttackResult.found(x, best_point, total, "exact")


# -- evaluation -------------------------------------------------------------

REPORT_FIELDS = ["example_id", "true_label", "pred_label", "attack", "success", "linf", "l1", "l2", "queries"]


@dataclass
class RobustnessReport:
    attack: str
    n_examples: int
    n_correct: int
    rows: List[dict] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_examples if self.n_examples else math.nan

    @property
    def n_attacked(self) -> int:
        return sum(1 for r in self.rows if r["attack"] != "none")

    @property
    def successes(self) -> List[dict]:
        return [r for r in self.rows if r["success"]]

    @property
    def success_rate(self) -> float:
        n = self.n_attacked
        return len(self.successes) / n if n else math.nan

    def _mean(self, key):
        vals = [r[key] for r in self.successes]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def avg_linf(self) -> float:
        return self._mean("linf")

    @property
    def avg_l1(self) -> float:
        return self._mean("l1")

    @property
    def avg_l2(self) -> float:
        return self._mean("l2")

    def summary(self) -> str:
        if self.n_attacked == 0:
            return (f"accuracy={self.accuracy:.4f} success_rate=nan avg_linf=nan "
                    "(no correctly classified examples to attack)")
        return (f"accuracy={self.accuracy:.4f} success_rate={self.success_rate:.4f} "
                f"avg_linf={self.avg_linf:.6f}")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()


def run_attack(attack: str, model, x, y, budget: int = 20000, seed: int = 0, reference=None) -> AttackResult:
    if attack == "papernot":
        return papernot_attack(model, x, y)
    if attack == "boundary":
        return cheng_attack_linf(model, x, y, budget=budget, seed=seed, reference=reference)
    if attack == "exact":
        return exact_attack_small(model, x, y)
    raise ValueError(f"unknown attack {attack!r}; expected one of {ATTACKS}")


def evaluate_robustness(model, X, y, attack: str = "boundary", budget: int = 20000, seed: int = 0,
                        reference=None, threads: int = 1, max_examples: Optional[int] = None
                        ) -> RobustnessReport:
    """Accuracy on ``(X, y)`` plus attack statistics over correctly classified rows.

    Example ``i`` is attacked with seed ``(seed, i)``, so results do not depend
    on ``threads``. ``max_examples`` keeps the first rows only.
    """
    ens = as_ensemble(model)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y).astype(int)
    if max_examples is not None:
        X, y = X[:max_examples], y[:max_examples]
    if attack == "exact":
        total = CellGrid.from_model(ens).cell_count()
        if total > CELL_GUARD:
            raise CellGuardError(f"model has {total} cells, above the exhaustive-search guard of {CELL_GUARD}")
    if attack not in ATTACKS:
        raise ValueError(f"unknown attack {attack!r}; expected one of {ATTACKS}")
    pred = predict_label_batch(ens, X) if len(X) else np.array([], dtype=int)
    correct = np.flatnonzero(pred == y)

    def one(i):
        s = int(np.random.SeedSequence([seed, int(i)]).generate_state(1)[0])
        return run_attack(attack, ens, X[i], int(y[i]), budget, s, reference)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(zip(correct.tolist(), pool.map(one, correct)))
    else:
        results = {int(i): one(i) for i in correct}
    rows = []
    for i in range(len(X)):
        res = results.get(i)
        rows.append({
            "example_id": i, "true_label": int(y[i]), "pred_label": int(pred[i]),
            "attack": attack if res is not None else "none",
            "success": int(res.success) if res is not None else 0,
            "linf": res.linf if res is not None else math.nan,
            "l1": res.l1 if res is not None else math.nan,
            "l2": res.l2 if res is not None else math.nan,
            "queries": res.queries if res is not None else 0,
        })
    return RobustnessReport(attack, len(X), int(correct.size), rows)
