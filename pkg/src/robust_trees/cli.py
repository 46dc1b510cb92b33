"""Command-line interface: ``robust-trees {train,attack,eval,boundary,sweep}``.

Data goes to files or stdout; diagnostics go to stderr. The scaler fitted at
training time is written next to the model (``<model>.scaler.json``) and
applied automatically by the other commands.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import attacks
from .boosting import BoostParams, train_gbdt, train_random_forest
from .data import (DataError, RobustConfig, Scaler, apply_scaler, fit_scaler, load_libsvm,
                   to_binary_labels)
from .split_ig import train_tree_ig
from .tree_model import (Ensemble, SchemaError, deserialize, predict_ensemble_batch,
                         predict_label_batch, serialize)

log = logging.getLogger("robust_trees")


def scaler_path(model_path) -> Path:
    p = Path(model_path)
    return p.with_name(p.stem + ".scaler.json")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {text}")
    return v


def _epsilon(text):
    try:
        return RobustConfig.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text):
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("list entries must be integers >= 1")
    return values


def _add_model_flags(p):
    p.add_argument("--kind", choices=["tree", "gbdt", "forest"], default="tree")
    p.add_argument("--score", choices=["info-gain", "gini"], default="info-gain")
    p.add_argument("--loss", choices=["logistic", "mse"], default="logistic")
    p.add_argument("--epsilon", type=_epsilon, default=RobustConfig(0.0),
                   help="robust radius, scalar or comma-separated per feature; 0 = natural training")
    p.add_argument("--depth", type=_positive_int, default=5)
    p.add_argument("--num-trees", type=_nonneg_int, default=10)
    p.add_argument("--shrinkage", type=float, default=0.1)
    p.add_argument("--lambda", dest="reg_lambda", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--row-rate", type=float, default=0.5, help="forest row sampling rate")
    p.add_argument("--col-rate", type=float, default=0.5, help="forest column sampling rate")


def _add_attack_flags(p):
    p.add_argument("--attack", choices=list(attacks.ATTACKS), default="boundary")
    p.add_argument("--budget", type=_positive_int, default=20000, help="query budget of the boundary attack")
    p.add_argument("--max-examples", type=_positive_int, default=None)
    p.add_argument("--threads", type=_positive_int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-trees", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a tree, GBDT or forest and write model JSON")
    p.add_argument("--train", required=True, help="LIBSVM training file")
    p.add_argument("--test", help="LIBSVM test file, for reporting accuracy")
    p.add_argument("--model", "--out", dest="model", required=True, help="output model JSON path")
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p)

    for name in ("attack", "eval"):
        p = sub.add_parser(name, help="attack correctly classified test points, write a CSV report")
        p.add_argument("--model", required=True)
        p.add_argument("--test", required=True)
        p.add_argument("--train", help="reference points for initializing the boundary attack")
        p.add_argument("--out", help="CSV report path (default: stdout)")
        p.add_argument("--seed", type=int, default=0)
        _add_attack_flags(p)

    p = sub.add_parser("boundary", help="evaluate a 2-feature model on a grid over [0,1]^2")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", type=_positive_int, default=256)
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("sweep", help="train/attack over depths and tree counts, long-format CSV")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--depth-list", type=_int_list, default=None)
    p.add_argument("--num-trees-list", type=_int_list, default=None)
    _add_model_flags(p)
    _add_attack_flags(p)
    return parser


# -- helpers ----------------------------------------------------------------

def _load_scaled(path, scaler: Scaler, classification: bool):
    data = apply_scaler(scaler, load_libsvm(path))
    return to_binary_labels(data) if classification else data


def _train_model(args, train, seed) -> Ensemble:
    config = args.epsilon
    robust = not config.is_zero()
    score = args.score.replace("-", "_")
    if args.kind == "tree":
        tree = train_tree_ig(train, config, args.depth, score, robust)
        return Ensemble([tree], kind="single-tree", epsilon_used=config.to_jsonable(),
                        meta={"trainer": "tree", "max_depth": args.depth, "score": score})
    if args.kind == "forest":
        return train_random_forest(train, args.num_trees, args.depth, config, score, robust,
                                   args.row_rate, args.col_rate, seed)
    params = BoostParams(num_trees=args.num_trees, max_depth=args.depth, shrinkage=args.shrinkage,
                         reg_lambda=args.reg_lambda, gamma=args.gamma, loss=args.loss, robust=config)
    return train_gbdt(train, params, robust)


def _accuracy(ens: Ensemble, data) -> float:
    if ens.is_classifier:
        return float(np.mean(predict_label_batch(ens, data.features) == data.labels))
    return float(np.sqrt(np.mean((predict_ensemble_batch(ens, data.features) - data.labels) ** 2)))


def _write(out, text):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_model(path):
    ens = deserialize(Path(path).read_text())
    sp = scaler_path(path)
    scaler = Scaler.from_json(sp.read_text()) if sp.exists() else None
    return ens, scaler


# -- commands ---------------------------------------------------------------

def cmd_train(args) -> int:
    classification = args.kind != "gbdt" or args.loss == "logistic"
    raw = load_libsvm(args.train)
    scaler = fit_scaler(raw)
    train = apply_scaler(scaler, raw)
    if classification:
        train = to_binary_labels(train)
    args.epsilon.for_features(train.feature_count)
    ens = _train_model(args, train, args.seed)
    Path(args.model).write_text(serialize(ens, indent=1))
    scaler_path(args.model).write_text(scaler.to_json())
    metric = "accuracy" if ens.is_classifier else "rmse"
    line = f"train_{metric}={_accuracy(ens, train):.4f}"
    if args.test:
        test = _load_scaled(args.test, scaler, classification)
        line += f" test_{metric}={_accuracy(ens, test):.4f}"
    print(line)
    return 0


def _load_eval(path, scaler):
    if scaler is None:
        return to_binary_labels(load_libsvm(path))
    return _load_scaled(path, scaler, True)


def cmd_attack(args) -> int:
    ens, scaler = _load_model(args.model)
    if scaler is None:
        log.warning("no scaler next to %s; using features as-is", args.model)
    test = _load_eval(args.test, scaler)
    reference = _load_eval(args.train, scaler).features if args.train else None
    report = attacks.evaluate_robustness(ens, test.features, test.labels, args.attack, args.budget,
                                         args.seed, reference, args.threads, args.max_examples)
    _write(args.out, report.to_csv())
    # keep stdout clean when it carries the CSV
    print(report.summary(), file=sys.stdout if args.out else sys.stderr)
    return 0


def boundary_grid(ens: Ensemble, grid: int):
    """Grid points at cell centres of a ``grid x grid`` partition of ``[0,1]^2``."""
    centres = (np.arange(grid) + 0.5) / grid
    x1, x2 = np.meshgrid(centres, centres, indexing="ij")
    pts = np.column_stack([x1.ravel(), x2.ravel()])
    if ens.is_classifier:
        labels = predict_label_batch(ens, pts)
    else:
        labels = predict_ensemble_batch(ens, pts)
    return pts, labels


def cmd_boundary(args) -> int:
    ens, scaler = _load_model(args.model)
    used = {f for t in ens.trees for f in t.feature.tolist() if f >= 0}
    d = scaler.feature_count if scaler is not None else 1 + max(used, default=1)
    if d != 2:
        raise DataError(f"boundary export needs a model over exactly 2 features, got {d}")
    pts, labels = boundary_grid(ens, args.grid)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x1", "x2", "label"])
    for (a, b), lab in zip(pts.tolist(), labels.tolist()):
        w.writerow([repr(a), repr(b), lab])
    _write(args.out, buf.getvalue())
    return 0


def _truncate(ens: Ensemble, k: int) -> Ensemble:
    return Ensemble(ens.trees[:k], kind=ens.kind, base_score=ens.base_score,
                    epsilon_used=ens.epsilon_used, meta=dict(ens.meta, num_trees=k))


def cmd_sweep(args) -> int:
    classification = args.kind != "gbdt" or args.loss == "logistic"
    if not classification:
        raise DataError("sweep attacks classifiers only; use --loss logistic")
    raw = load_libsvm(args.train)
    scaler = fit_scaler(raw)
    train = to_binary_labels(apply_scaler(scaler, raw))
    test = _load_scaled(args.test, scaler, True)
    depths = args.depth_list or [args.depth]
    counts = args.num_trees_list or [args.num_trees]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "epsilon", "depth", "num_trees", "accuracy", "success_rate",
                "avg_linf", "avg_l1", "avg_l2"])
    eps_text = ",".join(str(e) for e in np.atleast_1d(args.epsilon.to_jsonable()))
    for depth in depths:
        args.depth = depth
        if args.kind == "gbdt":
            args.num_trees = max(counts)
            full = _train_model(args, train, args.seed)
            models = [(k, _truncate(full, k)) for k in counts]
        elif args.kind == "forest":
            models = []
            for k in counts:
                args.num_trees = k
                models.append((k, _train_model(args, train, args.seed)))
        else:
            models = [(1, _train_model(args, train, args.seed))]
        for k, ens in models:
            rep = attacks.evaluate_robustness(ens, test.features, test.labels, args.attack, args.budget,
                                              args.seed, train.features, args.threads, args.max_examples)
            w.writerow([args.kind, eps_text, depth, k, repr(rep.accuracy), repr(rep.success_rate),
                        repr(rep.avg_linf), repr(rep.avg_l1), repr(rep.avg_l2)])
            log.info("depth=%d trees=%d %s", depth, k, rep.summary())
    _write(args.out, buf.getvalue())
    return 0


COMMANDS = {"train": cmd_train, "attack": cmd_attack, "eval": cmd_attack,
            "boundary": cmd_boundary, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (DataError, SchemaError, attacks.CellGuardError, ValueError, OSError) as exc:
        print(f"robust-trees: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
