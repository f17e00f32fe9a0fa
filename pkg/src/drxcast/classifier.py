"""Application classification: Gini decision trees, random forests and an LSTM with a softmax head.

Trees split on ``x[feature] <= threshold`` where the threshold is an observed
training value, so a tree's predictions are unchanged when a feature is
passed through any strictly increasing map at both fit and predict time.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .featurize import FeatureSeries, Normalizer
from .neural_forecast import Activation, LstmCellParams, _RecurrentNet, lstm_forward
from .trace_io import App

N_CLASSES = len(App)
REPORT_HEADER = ["feature_set", "window_len_s", "accuracy",
                 "recall_surf", "recall_vcall", "recall_voice", "recall_stream"]


# ---------------------------------------------------------------- trees

@dataclass
class DecisionTree:
    """Binary tree in flat arrays; ``feature[i] < 0`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray          # majority class at every node
    n_classes: int
    max_depth: Optional[int] = None
    min_samples_leaf: int = 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):        # children always come after parents
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node].copy()
            idx = np.nonzero(inner)[0]
            go_left = X[idx, f[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])

    def used_features(self) -> set:
        return {int(f) for f in self.feature if f >= 0}


def _gini_split(x: np.ndarray, y1h: np.ndarray, min_leaf: int):
    """Best ``x <= t`` split of one feature: (weighted impurity, threshold) or None."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    left = np.cumsum(y1h[order], axis=0)[:-1]
    total = y1h.sum(axis=0)
    n = len(x)
    n_left = np.arange(1, n)
    valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
    if not valid.any():
        return None
    right = total - left
    n_right = n - n_left
    imp = (n_left - (left ** 2).sum(axis=1) / n_left) + (n_right - (right ** 2).sum(axis=1) / n_right)
    imp = np.where(valid, imp, np.inf)
    k = int(np.argmin(imp))
    return float(imp[k]), float(xs[k])


def fit_tree(X, y, max_depth: Optional[int] = None, min_samples_leaf: int = 1, seed: int = 0,
             max_features: Optional[int] = None, n_classes: Optional[int] = None) -> DecisionTree:
    """Greedy CART tree minimising weighted Gini impurity.

    Impure nodes are split even when no split lowers the impurity (the XOR
    case needs this). ``max_features`` draws a random feature subset at every
    node from ``seed``; ties between equally good splits go to the lowest
    feature index and then the lowest threshold.
    """
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("cannot fit a tree on an empty training set")
    if len(X) != len(y):
        raise ValueError("X and y lengths differ")
    if min_samples_leaf < 1:
        raise ValueError("min_samples_leaf must be >= 1")
    n_classes = int(n_classes if n_classes is not None else y.max() + 1)
    d = X.shape[1]
    rng = np.random.default_rng(seed)
    y1h = np.eye(n_classes)[y]

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        counts = np.bincount(y[idx], minlength=n_classes)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(int(np.argmax(counts)))
        return len(feature) - 1, counts

    root, counts = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0, counts)]
    while stack:
        node, idx, depth, counts = stack.pop()
        if (counts > 0).sum() < 2 or (max_depth is not None and depth >= max_depth) \
                or len(idx) < 2 * min_samples_leaf:
            continue
        feats = np.arange(d)
        if max_features is not None and max_features < d:
            feats = np.sort(rng.choice(d, size=max_features, replace=False))
        best = None
        for f in feats:
            res = _gini_split(X[idx, f], y1h[idx], min_samples_leaf)
            if res is not None and (best is None or res[0] < best[0]):
                best = (res[0], res[1], int(f))
        if best is None:
            continue
        _, thr, f = best
        mask = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        li, lc = new_node(idx[mask])
        ri, rc = new_node(idx[~mask])
        left[node], right[node] = li, ri
        # right pushed first so the left subtree is expanded first (stable node order)
        stack.append((ri, idx[~mask], depth + 1, rc))
        stack.append((li, idx[mask], depth + 1, lc))
    return DecisionTree(np.array(feature), np.array(threshold), np.array(left), np.array(right),
                        np.array(value), n_classes, max_depth, min_samples_leaf)


@dataclass
class RandomForest:
    trees: list
    n_classes: int
    seed: int = 0

    @property
    def k(self) -> int:
        return len(self.trees)

    def votes(self, X) -> np.ndarray:
        """(n_samples, n_classes) vote counts."""
        preds = np.stack([t.predict(X) for t in self.trees], axis=1)
        out = np.zeros((len(preds), self.n_classes), dtype=np.int64)
        for c in range(self.n_classes):
            out[:, c] = (preds == c).sum(axis=1)
        return out

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.votes(X), axis=1)     # argmax keeps the smallest index on ties


def fit_forest(X, y, k: int = 50, max_depth: Optional[int] = None, min_samples_leaf: int = 1,
               max_features="sqrt", bootstrap: bool = True, seed: int = 0,
               n_classes: Optional[int] = None) -> RandomForest:
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, dtype=np.int64)
    if k < 1:
        raise ValueError("forest needs at least one tree")
    if len(y) == 0:
        raise ValueError("cannot fit a forest on an empty training set")
    n_classes = int(n_classes if n_classes is not None else y.max() + 1)
    d = X.shape[1]
    if max_features == "sqrt":
        max_features = max(1, int(math.sqrt(d)))
    seqs = np.random.SeedSequence(seed).spawn(k)
    trees = []
    for ss in seqs:
        rng = np.random.default_rng(ss)
        rows = rng.integers(0, len(y), len(y)) if bootstrap else np.arange(len(y))
        trees.append(fit_tree(X[rows], y[rows], max_depth, min_samples_leaf,
                              seed=int(rng.integers(2 ** 31)), max_features=max_features,
                              n_classes=n_classes))
    return RandomForest(trees, n_classes, seed)


def forest_classify(forest: RandomForest, x) -> int:
    """Majority vote for one feature vector (a single row)."""
    return int(forest.predict(np.asarray(x, float).reshape(1, -1))[0])


# ---------------------------------------------------------------- LSTM classifier

def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ClassifierNet(_RecurrentNet):
    """[LSTM, fully connected, softmax] with a class distribution at every step."""

    head = "softmax"

    @classmethod
    def create(cls, n_inputs: int, n_classes: int = N_CLASSES, hidden: int = 32,
               variant=Activation.STANDARD_TANH, seed: int = 0) -> "ClassifierNet":
        rng = np.random.default_rng(seed)
        cell = LstmCellParams.init(hidden, n_inputs, rng)
        bound = 1.0 / np.sqrt(hidden)
        return cls(cell, rng.uniform(-bound, bound, (n_classes, hidden)), np.zeros(n_classes),
                   Activation(variant))

    def forward(self, Xn):
        cache = lstm_forward(self.cell, Xn, self.variant)
        logits = cache["hs"][1:] @ self.fc_w.T + self.fc_b      # (T, N, C)
        return logits, cache

    def loss(self, Xn, Yn) -> float:
        logits, _ = self.forward(Xn)
        return self._xent(logits, Yn)

    @staticmethod
    def _xent(logits, Yn) -> float:
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        T, N = Yn.shape[1], Yn.shape[0]
        picked = logp[np.arange(T)[:, None], np.arange(N)[None, :], Yn.T]
        return float(-picked.mean())

    def loss_and_grads(self, Xn, Yn):
        """Mean per-step cross-entropy; ``Yn`` holds integer labels (N, T)."""
        logits, cache = self.forward(Xn)
        loss = self._xent(logits, Yn)
        T, N = Yn.shape[1], Yn.shape[0]
        dlogits = _softmax(logits)
        dlogits[np.arange(T)[:, None], np.arange(N)[None, :], Yn.T] -= 1.0
        dlogits /= T * N
        hs = cache["hs"][1:]
        grads = self._gradients(cache, dlogits @ self.fc_w)
        grads["fc_w"] = dlogits.reshape(-1, dlogits.shape[-1]).T @ hs.reshape(-1, hs.shape[-1])
        grads["fc_b"] = dlogits.sum(axis=(0, 1))
        return loss, grads

    def prepare(self, X, Y):
        return self._norm_x(X), np.asarray(Y, dtype=np.int64)

    def fit_normalizers(self, X, Y) -> None:
        X = np.asarray(X, float)
        self.x_norm = Normalizer.fit(X.reshape(-1, X.shape[-1]))

    def predict_proba(self, X) -> np.ndarray:
        """Per-step class probabilities (N, T, C) for raw windows (N, T, d)."""
        logits, _ = self.forward(self._norm_x(X))
        return np.transpose(_softmax(logits), (1, 0, 2))


# ---------------------------------------------------------------- windows and evaluation

def window_bins(series: FeatureSeries, window_len: float) -> int:
    if not window_len > 0:
        raise ValueError("window length must be positive")
    ratio = window_len / series.tau
    w = int(round(ratio))
    if w < 1 or not math.isclose(ratio, w, rel_tol=1e-9, abs_tol=1e-9):
        raise ValueError(f"window {window_len}s is not a positive multiple of tau={series.tau}s")
    return w


def _majority(labels: np.ndarray, n_classes: int) -> int:
    return int(np.argmax(np.bincount(labels, minlength=n_classes)))


def split_windows(series: FeatureSeries, window_len: float, stride: Optional[int] = None):
    """Stacked windows (n, w, d) and, for labeled series, their per-bin labels (n, w)."""
    w = window_bins(series, window_len)
    stride = stride or w
    starts = np.arange(0, len(series) - w + 1, stride)
    X = np.stack([series.data[s:s + w] for s in starts]) if len(starts) else np.zeros((0, w, series.data.shape[1]))
    Y = None
    if series.labels is not None:
        Y = np.stack([series.labels[s:s + w] for s in starts]) if len(starts) else np.zeros((0, w), dtype=int)
    return X, Y


def window_truth(Y: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    return np.array([_majority(row, n_classes) for row in np.asarray(Y, dtype=np.int64)], dtype=np.int64)


def classify_window(model, series: FeatureSeries, window_len: float) -> np.ndarray:
    """One class label per non-overlapping window.

    Forests see the mean feature vector of the window; the LSTM sees the
    window's bins as a sequence and votes with its step-averaged softmax.
    """
    X, _ = split_windows(series, window_len)
    if len(X) == 0:
        return np.zeros(0, dtype=np.int64)
    if isinstance(model, ClassifierNet):
        return np.argmax(model.predict_proba(X).mean(axis=1), axis=1)
    return model.predict(X.mean(axis=1))


@dataclass(frozen=True)
class Evaluation:
    accuracy: float
    recall: np.ndarray          # nan where a class never occurs
    correct: np.ndarray         # per-class hits
    actual: np.ndarray          # per-class support

    @property
    def total(self) -> int:
        return int(self.actual.sum())


def evaluate_classification(predictions, truth, n_classes: int = N_CLASSES) -> Evaluation:
    pred = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if len(truth) == 0:
        raise ValueError("nothing to evaluate")
    actual = np.bincount(truth, minlength=n_classes)
    correct = np.bincount(truth[pred == truth], minlength=n_classes)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(actual > 0, correct / np.maximum(actual, 1), np.nan)
    return Evaluation(float(correct.sum() / len(truth)), recall, correct, actual)


@dataclass
class ReportRow:
    feature_set: str
    window_len_s: float
    accuracy: float
    recall: Sequence[float] = field(default_factory=list)


def write_classification_report(rows: Sequence[ReportRow], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in rows:
            w.writerow([r.feature_set, repr(float(r.window_len_s)), repr(float(r.accuracy)),
                        *(repr(float(v)) for v in r.recall)])


def read_classification_report(path) -> list:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != REPORT_HEADER:
        raise ValueError(f"unexpected header {rows[0]}")
    return [ReportRow(r[0], float(r[1]), float(r[2]), [float(v) for v in r[3:]]) for r in rows[1:]]
