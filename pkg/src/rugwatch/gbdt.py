"""Boosted decision trees for tabular token features.

Second-order (Newton) boosting of the logistic loss with L1/L2
regularised leaves, exact greedy split search over midpoint thresholds,
and a learned per-split default branch for missing values.  Models
serialize to flat-array JSON and reload bit-identically.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateData, InvalidParams, TooFewTokens, WidthMismatch
from .features import TRAINABLE_FEATURES

log = logging.getLogger(__name__)

ROUNDS = 200
PATIENCE = 20
N_SPLITS = 5


@dataclass(frozen=True)
class Params:
    max_depth: int = 6
    learning_rate: float = 0.3
    subsample: float = 1.0
    gamma: float = 0.0
    reg_lambda: float = 1.0
    alpha: float = 0.0

    def validate(self) -> "Params":
        if self.max_depth < 1:
            raise InvalidParams("max_depth must be at least 1")
        if not 0 < self.subsample <= 1:
            raise InvalidParams("subsample must be in (0, 1]")
        if self.learning_rate <= 0:
            raise InvalidParams("learning_rate must be positive")
        if min(self.gamma, self.reg_lambda, self.alpha) < 0:
            raise InvalidParams("regularisation terms must be non-negative")
        return self

    def as_dict(self) -> dict:
        return asdict(self)


def _soft_threshold(G, alpha: float):
    return np.maximum(G - alpha, 0.0) + np.minimum(G + alpha, 0.0)


def _score(G, H, params: Params):
    t = _soft_threshold(G, params.alpha)
    denom = H + params.reg_lambda
    return np.divide(t * t, denom, out=np.zeros_like(t + denom), where=denom > 0)


def _leaf_weight(G: float, H: float, params: Params) -> float:
    denom = H + params.reg_lambda
    if denom <= 0:
        return 0.0
    return -_soft_threshold(G, params.alpha) / denom


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


@dataclass
class Tree:
    """One regression tree as parallel flat arrays indexed by node."""

    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        idx = np.zeros(len(X), dtype=np.int32)
        while True:
            feats = self.feature[idx]
            active = feats >= 0
            if not active.any():
                return self.value[idx]
            where = np.flatnonzero(active)
            node = idx[where]
            x = X[where, self.feature[node]]
            go_left = (x < self.threshold[node]) | (np.isnan(x) & self.missing_left[node])
            idx[where] = np.where(go_left, self.left[node], self.right[node])

    def to_json_obj(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "missing_left": self.missing_left.astype(int).tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "gain": self.gain.tolist(),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Tree":
        return cls(
            feature=np.asarray(obj["feature"], dtype=np.int32),
            threshold=np.asarray(obj["threshold"], dtype=np.float64),
            missing_left=np.asarray(obj["missing_left"], dtype=bool),
            left=np.asarray(obj["left"], dtype=np.int32),
            right=np.asarray(obj["right"], dtype=np.int32),
            value=np.asarray(obj["value"], dtype=np.float64),
            gain=np.asarray(obj["gain"], dtype=np.float64),
        )


class _TreeBuilder:
    def __init__(self, X: np.ndarray, g: np.ndarray, h: np.ndarray, params: Params, learning_rate: float):
        self.X, self.g, self.h = X, g, h
        self.params = params
        self.learning_rate = learning_rate
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.missing_left: list[bool] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.gain: list[float] = []

    def build(self, rows: np.ndarray) -> Tree:
        self._node(rows, depth=0)
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int32),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            missing_left=np.asarray(self.missing_left, dtype=bool),
            left=np.asarray(self.left, dtype=np.int32),
            right=np.asarray(self.right, dtype=np.int32),
            value=np.asarray(self.value, dtype=np.float64),
            gain=np.asarray(self.gain, dtype=np.float64),
        )

    def _append(self) -> int:
        index = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.missing_left.append(True)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.gain.append(0.0)
        return index

    def _node(self, rows: np.ndarray, depth: int) -> int:
        G = float(self.g[rows].sum())
        H = float(self.h[rows].sum())
        index = self._append()
        split = None
        if depth < self.params.max_depth and rows.size >= 2:
            split = self._best_split(rows, G, H)
        if split is None:
            self.value[index] = self.learning_rate * _leaf_weight(G, H, self.params)
            return index
        feature, threshold, missing_left, gain = split
        column = self.X[rows, feature]
        go_left = (column < threshold) | (np.isnan(column) & missing_left)
        self.feature[index] = feature
        self.threshold[index] = threshold
        self.missing_left[index] = missing_left
        self.gain[index] = gain
        self.left[index] = self._node(rows[go_left], depth + 1)
        self.right[index] = self._node(rows[~go_left], depth + 1)
        return index

    def _best_split(self, rows: np.ndarray, G: float, H: float):
        """Exact greedy search: every feature, every midpoint between
        adjacent distinct present values, missing routed to whichever
        side gains more (ties keep it left).  Candidates are ranked on
        float gains; when float gains tie, the lowest feature index and
        then the lowest threshold wins.  Candidates whose exact gains
        tie but round differently follow their float images, so the
        pick is deterministic either way."""
        Xn = self.X[rows]
        m, n_features = Xn.shape
        order = np.argsort(Xn, axis=0, kind="stable")  # NaN sorts last
        Xs = np.take_along_axis(Xn, order, axis=0)
        g_rows, h_rows = self.g[rows], self.h[rows]
        csg = np.cumsum(g_rows[order], axis=0)
        csh = np.cumsum(h_rows[order], axis=0)

        present = m - np.isnan(Xn).sum(axis=0)
        cols = np.arange(n_features)
        last = np.maximum(present - 1, 0)
        G_present = np.where(present > 0, csg[last, cols], 0.0)
        H_present = np.where(present > 0, csh[last, cols], 0.0)
        G_missing, H_missing = G - G_present, H - H_present

        if m < 2:
            return None
        boundary = Xs[:-1] < Xs[1:]  # False wherever either side is NaN
        GL, HL = csg[:-1], csh[:-1]
        GR, HR = G_present - GL, H_present - HL
        parent = _score(np.float64(G), np.float64(H), self.params)
        gain_left = 0.5 * (
            _score(GL + G_missing, HL + H_missing, self.params) + _score(GR, HR, self.params) - parent
        ) - self.params.gamma
        gain_right = 0.5 * (
            _score(GL, HL, self.params) + _score(GR + G_missing, HR + H_missing, self.params) - parent
        ) - self.params.gamma

        missing_left = gain_left >= gain_right
        gains = np.where(boundary, np.where(missing_left, gain_left, gain_right), -np.inf)
        flat = np.argmax(gains.flatten(order="F"))
        boundary_index, feature = flat % (m - 1), flat // (m - 1)
        best_gain = gains[boundary_index, feature]
        if not best_gain > 0:
            return None
        threshold = (Xs[boundary_index, feature] + Xs[boundary_index + 1, feature]) / 2.0
        return int(feature), float(threshold), bool(missing_left[boundary_index, feature]), float(best_gain)


@dataclass
class Model:
    base_score: float
    trees: list[Tree]
    params: Params
    feature_names: tuple[str, ...]
    seed: int | list = 0

    def predict_margin(self, X) -> np.ndarray:
        X = _as_matrix(X, len(self.feature_names))
        margin = np.full(len(X), self.base_score)
        for tree in self.trees:
            margin += tree.predict(X)
        return margin

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.predict_margin(X))

    def predict_label(self, X) -> np.ndarray:
        return (self.predict_margin(X) > 0).astype(np.int64)

    @property
    def n_rounds(self) -> int:
        return len(self.trees)

    def to_json_obj(self) -> dict:
        return {
            "kind": "gbdt-logistic",
            "base_score": self.base_score,
            "params": self.params.as_dict(),
            "seed": self.seed,
            "feature_names": list(self.feature_names),
            "trees": [tree.to_json_obj() for tree in self.trees],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Model":
        if obj.get("kind") != "gbdt-logistic":
            raise InvalidParams(f"not a model file: kind={obj.get('kind')!r}")
        return cls(
            base_score=float(obj["base_score"]),
            trees=[Tree.from_json_obj(t) for t in obj["trees"]],
            params=Params(**obj["params"]).validate(),
            feature_names=tuple(obj["feature_names"]),
            seed=obj.get("seed", 0),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_json_obj(), handle, sort_keys=True)
            handle.write("\n")

    @classmethod
    def load(cls, path) -> "Model":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_json_obj(json.load(handle))


def _as_matrix(X, width: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise WidthMismatch(f"expected a 2-d matrix, got shape {X.shape}")
    if width is not None and X.shape[1] != width:
        raise WidthMismatch(f"expected {width} feature columns, got {X.shape[1]}")
    return X


def design_matrix(rows: list[dict]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Feature-CSV rows to (X, y, groups, eval_blocks); missing -> NaN."""
    if not rows:
        raise DegenerateData("no feature rows")
    X = np.full((len(rows), len(TRAINABLE_FEATURES)), np.nan)
    for i, row in enumerate(rows):
        for j, name in enumerate(TRAINABLE_FEATURES):
            value = row[name]
            if value is not None:
                X[i, j] = float(value)
    y = np.asarray([int(row["label"]) for row in rows], dtype=np.int64)
    groups = np.asarray([row["token"] for row in rows])
    eval_blocks = np.asarray([int(row["eval_block"]) for row in rows], dtype=np.int64)
    return X, y, groups, eval_blocks


def train(
    X,
    y,
    params: Params,
    seed=0,
    rounds: int = ROUNDS,
    eval_set=None,
    patience: int = PATIENCE,
    feature_names=None,
) -> Model:
    """Boost `rounds` trees; with eval_set, stop once the holdout F1 has
    not improved for `patience` rounds and keep only the best prefix."""
    params.validate()
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if len(X) != len(y):
        raise WidthMismatch(f"{len(X)} rows vs {len(y)} labels")
    if len(X) == 0:
        raise DegenerateData("cannot train on an empty matrix")
    names = tuple(feature_names) if feature_names else tuple(f"f{j}" for j in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise WidthMismatch(f"{len(names)} feature names for {X.shape[1]} columns")

    rng = np.random.default_rng(seed)
    prevalence = min(max(float(y.mean()), 1e-6), 1 - 1e-6)
    base_score = math.log(prevalence / (1 - prevalence))
    margin = np.full(len(y), base_score)
    if eval_set is not None:
        X_eval = _as_matrix(eval_set[0], X.shape[1])
        y_eval = np.asarray(eval_set[1], dtype=np.int64)
        eval_margin = np.full(len(y_eval), base_score)

    n = len(y)
    trees: list[Tree] = []
    best_f1, best_round = -1.0, -1
    for r in range(rounds):
        p = _sigmoid(margin)
        g = p - y
        h = p * (1.0 - p)
        if params.subsample < 1.0:
            k = max(1, int(params.subsample * n))
            rows = np.sort(rng.choice(n, size=k, replace=False))
        else:
            rows = np.arange(n)
        tree = _TreeBuilder(X, g, h, params, params.learning_rate).build(rows)
        trees.append(tree)
        margin += tree.predict(X)
        if eval_set is not None:
            eval_margin += tree.predict(X_eval)
            f1 = binary_metrics(y_eval, (eval_margin > 0).astype(np.int64))["f1"]
            if f1 > best_f1:
                best_f1, best_round = f1, r
            elif r - best_round >= patience:
                break
    if eval_set is not None:
        trees = trees[: best_round + 1]
    seed_used = [int(part) for part in seed] if isinstance(seed, (list, tuple)) else int(seed)
    return Model(base_score, trees, params, names, seed_used)


# ------------------------------------------------------------- metrics


def binary_metrics(y_true, y_pred) -> dict:
    """Accuracy, sensitivity, precision, and F1 with class 1 positive."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if len(y_true) != len(y_pred):
        raise WidthMismatch(f"{len(y_true)} labels vs {len(y_pred)} predictions")
    tp = int(((y_true == 1) & (y_pred == 1)).sum())
    tn = int(((y_true == 0) & (y_pred == 0)).sum())
    fp = int(((y_true == 0) & (y_pred == 1)).sum())
    fn = int(((y_true == 1) & (y_pred == 0)).sum())
    total = tp + tn + fp + fn
    sensitivity = tp / (tp + fn) if tp + fn else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * precision * sensitivity / (precision + sensitivity) if precision + sensitivity else 0.0
    return {
        "accuracy": (tp + tn) / total if total else 0.0,
        "sensitivity": sensitivity,
        "precision": precision,
        "f1": f1,
        "tp": tp,
        "tn": tn,
        "fp": fp,
        "fn": fn,
    }


# ------------------------------------------------------ cross-validation


def grouped_stratified_folds(groups, labels, n_splits: int = N_SPLITS, seed=0):
    """Token-level stratified folds: a token's rows never straddle a
    fold boundary, and each fold holds each class's tokens to within
    one.  Tokens are shuffled per class, then dealt round-robin."""
    groups = np.asarray(groups)
    labels = np.asarray(labels, dtype=np.int64)
    if n_splits < 2:
        raise InvalidParams("need at least two folds")
    label_of: dict = {}
    for group, label in zip(groups, labels):
        if label_of.setdefault(group, label) != label:
            raise DegenerateData(f"group {group} carries both labels")
    rng = np.random.default_rng(seed)
    fold_of: dict = {}
    for cls in sorted(set(label_of.values())):
        tokens = np.asarray(sorted(g for g, lbl in label_of.items() if lbl == cls))
        if len(tokens) < n_splits:
            raise TooFewTokens(f"class {cls} has {len(tokens)} tokens for {n_splits} folds")
        rng.shuffle(tokens)
        for i, token in enumerate(tokens):
            fold_of[token] = i % n_splits
    row_fold = np.asarray([fold_of[g] for g in groups])
    folds = []
    for k in range(n_splits):
        test = np.flatnonzero(row_fold == k)
        train_rows = np.flatnonzero(row_fold != k)
        folds.append((train_rows, test))
    return folds


def sample_params(rng: np.random.Generator) -> Params:
    """One random-search draw; the draw order is part of the contract."""
    return Params(
        max_depth=int(rng.integers(3, 11)),
        subsample=float(rng.uniform(0.5, 1.0)),
        learning_rate=float(rng.uniform(1e-5, 1.0)),
        gamma=float(10.0 ** rng.uniform(-8.0, 2.0)),
        reg_lambda=float(10.0 ** rng.uniform(-8.0, 2.0)),
        alpha=float(10.0 ** rng.uniform(-8.0, 2.0)),
    )


METRIC_KEYS = ("accuracy", "sensitivity", "precision", "f1")


@dataclass(frozen=True)
class FoldResult:
    """Outcome of one outer fold: the hyperparameters that won the
    inner search, and the retrained model's validation metrics."""

    fold: int
    trial: int
    params: Params
    inner_f1: float
    rounds: int
    metrics: dict


@dataclass
class CvReport:
    folds: list[FoldResult]
    models: list[Model]
    model: Model

    def per_fold(self, key: str) -> list[float]:
        return [fold.metrics[key] for fold in self.folds]

    def mean(self, key: str) -> float:
        return float(np.mean(self.per_fold(key)))

    def std(self, key: str) -> float:
        return float(np.std(self.per_fold(key), ddof=1))

    def summary(self) -> dict:
        return {key: {"mean": self.mean(key), "std": self.std(key)} for key in METRIC_KEYS}


def _run_trial(args) -> tuple:
    """One (fold, trial) search step: draw hyperparameters, fit on the
    inner 80% with early stopping on the inner 20% holdout, and score
    that holdout.  Keyed by (fold, trial) so thread count is moot."""
    fold, trial, X, y, inner_train, inner_hold, seed, rounds, patience = args
    params = sample_params(np.random.default_rng([seed, fold, trial]))
    model = train(
        X[inner_train],
        y[inner_train],
        params,
        seed=[seed, fold, trial],
        rounds=rounds,
        eval_set=(X[inner_hold], y[inner_hold]),
        patience=patience,
    )
    f1 = binary_metrics(y[inner_hold], model.predict_label(X[inner_hold]))["f1"]
    return fold, trial, params, f1, model.n_rounds


def cross_validate(
    X,
    y,
    groups,
    seed: int = 0,
    n_trials: int = 30,
    n_splits: int = N_SPLITS,
    threads: int = 1,
    rounds: int = ROUNDS,
    patience: int = PATIENCE,
    feature_names=None,
) -> CvReport:
    """Nested token-grouped cross-validation.

    Each outer fold runs its own random search: every trial trains on
    80% of the fold-training tokens and is scored by F1 on the held-out
    20%; the best trial's hyperparameters are refit on the whole
    fold-training set and measured on the fold-validation rows at
    threshold 0.5.  A final model with the best fold's hyperparameters
    is fit on all rows.  All randomness is keyed by (seed, fold, trial),
    so the thread count never changes any result.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.int64)
    groups = np.asarray(groups)
    classes = set(np.unique(y))
    if classes != {0, 1}:
        raise DegenerateData(f"need both classes present, got {sorted(classes)}")
    if n_trials < 1:
        raise InvalidParams("need at least one search trial")
    folds = grouped_stratified_folds(groups, y, n_splits, seed)

    jobs = []
    for fold, (train_rows, valid_rows) in enumerate(folds):
        inner_train_local, inner_hold_local = grouped_stratified_folds(
            groups[train_rows], y[train_rows], 5, [seed, fold]
        )[0]
        inner_train = train_rows[inner_train_local]
        inner_hold = train_rows[inner_hold_local]
        for trial in range(n_trials):
            jobs.append((fold, trial, X, y, inner_train, inner_hold, seed, rounds, patience))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_run_trial, jobs))
    else:
        outcomes = [_run_trial(job) for job in jobs]

    fold_results: list[FoldResult] = []
    models: list[Model] = []
    for fold, (train_rows, valid_rows) in enumerate(folds):
        trials = outcomes[fold * n_trials : (fold + 1) * n_trials]
        best = trials[0]
        for candidate in trials[1:]:
            if candidate[3] > best[3]:
                best = candidate
        _, trial, params, inner_f1, n_rounds = best
        model = train(
            X[train_rows],
            y[train_rows],
            params,
            seed=[seed, fold, trial],
            rounds=n_rounds,
            feature_names=feature_names,
        )
        metrics = binary_metrics(y[valid_rows], model.predict_label(X[valid_rows]))
        log.info("fold %d: trial %d (inner f1 %.4f) -> validation f1 %.4f", fold, trial, inner_f1, metrics["f1"])
        fold_results.append(FoldResult(fold, trial, params, inner_f1, n_rounds, metrics))
        models.append(model)

    best_fold = fold_results[0]
    for fold_result in fold_results[1:]:
        if fold_result.metrics["f1"] > best_fold.metrics["f1"]:
            best_fold = fold_result
    final = train(
        X,
        y,
        best_fold.params,
        seed=[seed, best_fold.fold, best_fold.trial, 1],
        rounds=best_fold.rounds,
        feature_names=feature_names,
    )
    return CvReport(fold_results, models, final)


CV_CSV_FIELDS = [
    "fold",
    "trial",
    "max_depth",
    "learning_rate",
    "subsample",
    "gamma",
    "reg_lambda",
    "alpha",
    "rounds",
    "inner_f1",
    "accuracy",
    "sensitivity",
    "precision",
    "f1",
]


def write_cv_csv(report: CvReport, path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CV_CSV_FIELDS)
        for fold in report.folds:
            p = fold.params
            writer.writerow(
                [
                    fold.fold,
                    fold.trial,
                    p.max_depth,
                    repr(p.learning_rate),
                    repr(p.subsample),
                    repr(p.gamma),
                    repr(p.reg_lambda),
                    repr(p.alpha),
                    fold.rounds,
                    repr(fold.inner_f1),
                ]
                + [repr(fold.metrics[key]) for key in METRIC_KEYS]
            )
        for stat, value_of in (("mean", report.mean), ("std", report.std)):
            writer.writerow([stat] + [""] * 9 + [repr(value_of(key)) for key in METRIC_KEYS])


# ----------------------------------------------------------- importance


def gain_importance(model: Model) -> dict[str, float]:
    """Total split gain contributed by each feature across all trees."""
    totals = np.zeros(len(model.feature_names))
    for tree in model.trees:
        internal = tree.feature >= 0
        np.add.at(totals, tree.feature[internal], tree.gain[internal])
    return {name: float(total) for name, total in zip(model.feature_names, totals)}


def permutation_importance(model: Model, X, y, seed: int = 0, repeats: int = 3) -> dict[str, float]:
    """Drop in F1 when one column is shuffled, averaged over repeats."""
    X = _as_matrix(X, len(model.feature_names))
    y = np.asarray(y, dtype=np.int64)
    baseline = binary_metrics(y, model.predict_label(X))["f1"]
    out = {}
    for j, name in enumerate(model.feature_names):
        drops = []
        for repeat in range(repeats):
            rng = np.random.default_rng([seed, j, repeat])
            shuffled = X.copy()
            shuffled[:, j] = shuffled[rng.permutation(len(X)), j]
            drops.append(baseline - binary_metrics(y, model.predict_label(shuffled))["f1"])
        out[name] = float(np.mean(drops))
    return out
