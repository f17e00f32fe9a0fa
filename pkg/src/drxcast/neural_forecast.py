"""Numpy LSTM networks: forward pass, backpropagation through time, training.

Gate blocks are stacked in the order forget, input, output, candidate, so
``W`` is (4h x d), ``U`` is (4h x h) and ``b`` has 4h entries.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .featurize import Normalizer

CHECKPOINT_VERSION = 1


class Activation(str, Enum):
    """``LOGISTIC`` uses the logistic function for the candidate and the
    cell squash; ``STANDARD_TANH`` uses tanh for both."""

    LOGISTIC = "logistic"
    STANDARD_TANH = "standard_tanh"


class TrainingDiverged(RuntimeError):
    pass


def sigm(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _squash(variant):
    if variant == Activation.LOGISTIC:
        return sigm, lambda s: s * (1.0 - s)
    return np.tanh, lambda s: 1.0 - s * s


@dataclass
class LstmCellParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        h4, d = self.W.shape
        if h4 % 4 or self.U.shape != (h4, h4 // 4) or self.b.shape != (h4,):
            raise ValueError("inconsistent LSTM parameter shapes")

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def inputs(self) -> int:
        return self.W.shape[1]

    def gate(self, name: str):
        """(W, U, b) block of gate ``f``, ``i``, ``o`` or ``c``."""
        k = "fioc".index(name)
        h = self.hidden
        s = slice(k * h, (k + 1) * h)
        return self.W[s], self.U[s], self.b[s]

    @classmethod
    def init(cls, hidden: int, inputs: int, rng: np.random.Generator) -> "LstmCellParams":
        bound = 1.0 / np.sqrt(hidden)
        return cls(
            rng.uniform(-bound, bound, (4 * hidden, inputs)),
            rng.uniform(-bound, bound, (4 * hidden, hidden)),
            rng.uniform(-bound, bound, 4 * hidden),
        )

    @classmethod
    def from_gates(cls, gates: dict) -> "LstmCellParams":
        """Build from ``{"f": (W, U, b), "i": ..., "o": ..., "c": ...}``."""
        W = np.vstack([np.atleast_2d(gates[g][0]) for g in "fioc"])
        U = np.vstack([np.atleast_2d(gates[g][1]) for g in "fioc"])
        b = np.concatenate([np.atleast_1d(gates[g][2]) for g in "fioc"])
        return cls(W.astype(float), U.astype(float), b.astype(float))


def cell_step(params: LstmCellParams, x_t, h_prev, c_prev, variant=Activation.STANDARD_TANH):
    """One LSTM step; works on single vectors or row batches."""
    x_t, h_prev, c_prev = np.asarray(x_t, float), np.asarray(h_prev, float), np.asarray(c_prev, float)
    if x_t.shape[-1] != params.inputs or h_prev.shape[-1] != params.hidden or c_prev.shape != h_prev.shape:
        raise ValueError("dimension mismatch in cell_step")
    h = params.hidden
    z = x_t @ params.W.T + h_prev @ params.U.T + params.b
    act, _ = _squash(Activation(variant))
    f = sigm(z[..., :h])
    i = sigm(z[..., h:2 * h])
    o = sigm(z[..., 2 * h:3 * h])
    g = act(z[..., 3 * h:])
    c = f * c_prev + i * g
    return o * act(c), c


def lstm_forward(params: LstmCellParams, X: np.ndarray, variant) -> dict:
    """Run a batch of sequences X (N, T, d); returns the cache used by :func:`lstm_backward`."""
    N, T, _ = X.shape
    h = params.hidden
    act, _ = _squash(variant)
    hs = np.zeros((T + 1, N, h))
    cs = np.zeros((T + 1, N, h))
    gates = np.zeros((T, N, 4 * h))
    sq = np.zeros((T, N, h))
    xw = X @ params.W.T + params.b        # (N, T, 4h), input projection for all steps
    for t in range(T):
        z = xw[:, t] + hs[t] @ params.U.T
        gz = gates[t]
        gz[:, :3 * h] = sigm(z[:, :3 * h])
        gz[:, 3 * h:] = act(z[:, 3 * h:])
        cs[t + 1] = gz[:, :h] * cs[t] + gz[:, h:2 * h] * gz[:, 3 * h:]
        sq[t] = act(cs[t + 1])
        hs[t + 1] = gz[:, 2 * h:3 * h] * sq[t]
    return {"X": X, "hs": hs, "cs": cs, "gates": gates, "sq": sq, "variant": variant}


def lstm_backward(params: LstmCellParams, cache: dict, dh_out: np.ndarray):
    """BPTT given dL/dh_t for every step (T, N, h); returns (dW, dU, db)."""
    X, hs, cs, gates, sq = cache["X"], cache["hs"], cache["cs"], cache["gates"], cache["sq"]
    _, dact = _squash(cache["variant"])
    T = X.shape[1]
    h = params.hidden
    dZ = np.zeros_like(gates)
    dh_next = np.zeros_like(hs[0])
    dc_next = np.zeros_like(cs[0])
    for t in reversed(range(T)):
        g = gates[t]
        f, i, o, cand = g[:, :h], g[:, h:2 * h], g[:, 2 * h:3 * h], g[:, 3 * h:]
        dh = dh_out[t] + dh_next
        dc = dc_next + dh * o * dact(sq[t])
        dz = dZ[t]
        dz[:, :h] = dc * cs[t] * f * (1.0 - f)
        dz[:, h:2 * h] = dc * cand * i * (1.0 - i)
        dz[:, 2 * h:3 * h] = dh * sq[t] * o * (1.0 - o)
        dz[:, 3 * h:] = dc * i * dact(cand)
        dh_next = dz @ params.U
        dc_next = dc * f
    flat = dZ.reshape(-1, dZ.shape[-1])
    dW = flat.T @ X.transpose(1, 0, 2).reshape(flat.shape[0], -1)
    dU = flat.T @ hs[:-1].reshape(flat.shape[0], -1)
    db = flat.sum(axis=0)
    return dW, dU, db


@dataclass
class _RecurrentNet:
    """LSTM layer followed by a fully connected layer; subclasses add the output head."""

    cell: LstmCellParams
    fc_w: np.ndarray
    fc_b: np.ndarray
    variant: Activation = Activation.STANDARD_TANH
    x_norm: Optional[Normalizer] = None
    extra: dict = field(default_factory=dict)

    PARAM_NAMES = ("W", "U", "b", "fc_w", "fc_b")
    head = "none"

    def __post_init__(self):
        self.variant = Activation(self.variant)
        if self.fc_w.shape != (len(self.fc_b), self.cell.hidden) or len(self.fc_b) < 1:
            raise ValueError("fully connected layer shape mismatch")

    @property
    def n_out(self) -> int:
        return len(self.fc_b)

    def params(self) -> dict:
        return {"W": self.cell.W, "U": self.cell.U, "b": self.cell.b, "fc_w": self.fc_w, "fc_b": self.fc_b}

    def set_params(self, values: dict) -> None:
        self.cell = LstmCellParams(values["W"], values["U"], values["b"])
        self.fc_w, self.fc_b = values["fc_w"], values["fc_b"]

    def copy(self):
        clone = self.__class__.__new__(self.__class__)
        clone.__dict__.update(self.__dict__)
        clone.set_params({k: v.copy() for k, v in self.params().items()})
        clone.extra = dict(self.extra)
        return clone

    def _norm_x(self, X):
        X = np.asarray(X, float)
        return self.x_norm.transform(X) if self.x_norm is not None else X

    # subclasses: loss_and_grads(Xn, Yn) on normalised arrays

    def _gradients(self, cache, d_hidden_top):
        dW, dU, db = lstm_backward(self.cell, cache, d_hidden_top)
        return {"W": dW, "U": dU, "b": db}

    def to_json(self) -> dict:
        out = {
            "version": CHECKPOINT_VERSION,
            "kind": self.__class__.__name__,
            "variant": self.variant.value,
            "params": {k: v.tolist() for k, v in self.params().items()},
            "extra": self.extra,
        }
        for name in ("x_norm", "y_norm"):
            norm = getattr(self, name, None)
            out[name] = None if norm is None else {"mean": norm.mean.tolist(), "std": norm.std.tolist()}
        return out


@dataclass
class RegressionNet(_RecurrentNet):
    """[LSTM, fully connected, regression]: the last hidden state feeds a linear head.

    ``mode`` is ``"multi"`` (one output per horizon step) or ``"recursive"``
    (single output fed back as the next target observation).
    """

    y_norm: Optional[Normalizer] = None
    mode: str = "multi"
    target_column: int = 0

    head = "regression"

    @classmethod
    def create(cls, n_inputs: int, n_outputs: int = 1, hidden: int = 100,
               variant=Activation.STANDARD_TANH, seed: int = 0, mode: str = "multi",
               target_column: int = 0) -> "RegressionNet":
        rng = np.random.default_rng(seed)
        cell = LstmCellParams.init(hidden, n_inputs, rng)
        bound = 1.0 / np.sqrt(hidden)
        return cls(cell, rng.uniform(-bound, bound, (n_outputs, hidden)), np.zeros(n_outputs),
                   Activation(variant), mode=mode, target_column=target_column)

    def forward(self, Xn):
        cache = lstm_forward(self.cell, Xn, self.variant)
        return cache["hs"][-1] @ self.fc_w.T + self.fc_b, cache

    def loss_and_grads(self, Xn, Yn):
        """Mean squared error over batch and output window, with its gradients."""
        pred, cache = self.forward(Xn)
        diff = pred - Yn
        loss = float(np.mean(diff ** 2))
        dy = 2.0 * diff / diff.size
        h_last = cache["hs"][-1]
        dh = np.zeros_like(cache["hs"][1:])
        dh[-1] = dy @ self.fc_w
        grads = self._gradients(cache, dh)
        grads["fc_w"] = dy.T @ h_last
        grads["fc_b"] = dy.sum(axis=0)
        return loss, grads

    def loss(self, Xn, Yn) -> float:
        pred, _ = self.forward(Xn)
        return float(np.mean((pred - Yn) ** 2))

    def prepare(self, X, Y):
        return self._norm_x(X), (self.y_norm.transform(Y) if self.y_norm is not None else np.asarray(Y, float))

    def fit_normalizers(self, X, Y) -> None:
        X, Y = np.asarray(X, float), np.asarray(Y, float)
        self.x_norm = Normalizer.fit(X.reshape(-1, X.shape[-1]))
        y_flat = Y.reshape(-1, 1)
        base = Normalizer.fit(y_flat)
        self.y_norm = Normalizer(np.full(Y.shape[-1], base.mean[0]), np.full(Y.shape[-1], base.std[0]))

    def to_json(self) -> dict:
        out = super().to_json()
        out["extra"] = {**self.extra, "mode": self.mode, "target_column": self.target_column}
        return out

    def predict(self, X) -> np.ndarray:
        """Outputs in target units for a batch of raw windows (N, T, d)."""
        pred, _ = self.forward(self._norm_x(X))
        return self.y_norm.inverse(pred) if self.y_norm is not None else pred


def clip_by_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class SGD:
    def __init__(self, params: dict, lr: float):
        self.lr = lr

    def step(self, params: dict, grads: dict) -> None:
        for k, g in grads.items():
            params[k] -= self.lr * g


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 0.005
    batch_size: int = 32
    optimizer: str = "adam"
    clip: float = 1.0
    seed: int = 0


def train(net, inputs, targets, config: TrainConfig = TrainConfig(), fit_normalizers: bool = True):
    """Minibatch training; returns ``(net, losses)``.

    ``losses[0]`` is the training loss before the first update and
    ``losses[k]`` the full-data loss after epoch k (normalised units).
    """
    if fit_normalizers and hasattr(net, "fit_normalizers"):
        net.fit_normalizers(inputs, targets)
    Xn, Yn = net.prepare(inputs, targets)
    if len(Xn) != len(Yn) or len(Xn) == 0:
        raise ValueError("inputs and targets must be non-empty and aligned")
    rng = np.random.default_rng(config.seed)
    params = {k: v.copy() for k, v in net.params().items()}
    net.set_params(params)
    opt = {"adam": Adam, "sgd": SGD}[config.optimizer](params, config.lr)
    losses = [net.loss(Xn, Yn)]
    n = len(Xn)
    bs = max(1, min(config.batch_size, n))
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            loss, grads = net.loss_and_grads(Xn[idx], Yn[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became {loss} in epoch {epoch + 1}; lower the learning rate (now {config.lr})")
            clip_by_norm(grads, config.clip)
            opt.step(params, grads)
            net.set_params(params)
        epoch_loss = net.loss(Xn, Yn)
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(
                f"loss became {epoch_loss} after epoch {epoch + 1}; lower the learning rate (now {config.lr})")
        losses.append(epoch_loss)
    return net, np.array(losses)


def gradient_check(net, X, Y, epsilon: float = 1e-5, floor: float = 1e-7) -> float:
    """Worst relative gap between BPTT and central-difference gradients.

    X and Y are already normalised. Relative error is |a - n| / max(|a| + |n|, floor).
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    _, analytic = net.loss_and_grads(X, Y)
    params = net.params()
    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        ga = analytic[name].reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + epsilon
            up = net.loss(X, Y)
            flat[j] = old - epsilon
            down = net.loss(X, Y)
            flat[j] = old
            num = (up - down) / (2 * epsilon)
            err = abs(ga[j] - num) / max(abs(ga[j]) + abs(num), floor)
            worst = max(worst, err)
    return worst


def make_windows(data, target, window: int, horizon: int):
    """Sliding (inputs, targets): inputs rows data[s:s+window], targets target[s+window:s+window+horizon]."""
    data = np.asarray(data, float)
    if data.ndim == 1:
        data = data[:, None]
    target = np.asarray(target, float)
    n = len(data) - window - horizon + 1
    if n <= 0:
        return np.zeros((0, window, data.shape[1])), np.zeros((0, horizon))
    X = sliding_window_view(data, (window, data.shape[1]))[:n, 0]
    Y = sliding_window_view(target[window:], horizon)[:n]
    return np.ascontiguousarray(X), np.ascontiguousarray(Y)


def predict_horizon(net: RegressionNet, recent_window, horizon: int) -> np.ndarray:
    """Forecast ``horizon`` target values after a raw (T, d) window.

    Multi-output nets return their first ``horizon`` outputs. Recursive nets
    feed each prediction back into the target column and carry the other
    features forward unchanged.
    """
    window = np.asarray(getattr(recent_window, "data", recent_window), float)
    if window.ndim == 1:
        window = window[:, None]
    if len(window) < 1:
        raise ValueError("recent window is empty")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if net.mode == "multi":
        if horizon > net.n_out:
            raise ValueError(f"horizon {horizon} exceeds the network's {net.n_out} outputs")
        return net.predict(window[None])[0, :horizon]
    out = []
    w = window.copy()
    for _ in range(horizon):
        y = float(net.predict(w[None])[0, 0])
        out.append(y)
        nxt = w[-1].copy()
        nxt[net.target_column] = y
        w = np.vstack([w[1:], nxt])
    return np.array(out)


def save_checkpoint(net, path) -> None:
    Path(path).write_text(json.dumps(net.to_json()), encoding="utf-8")


def load_checkpoint(path, cls=None):
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    if cls is None:
        if blob["kind"] == "RegressionNet":
            cls = RegressionNet
        else:
            from .classifier import ClassifierNet
            cls = ClassifierNet
    p = {k: np.array(v, dtype=float) for k, v in blob["params"].items()}
    net = cls(LstmCellParams(p["W"], p["U"], p["b"]), p["fc_w"], p["fc_b"], Activation(blob["variant"]))
    for name in ("x_norm", "y_norm"):
        if blob.get(name) is not None:
            setattr(net, name, Normalizer(np.array(blob[name]["mean"]), np.array(blob[name]["std"])))
    net.extra = blob.get("extra", {})
    for key in ("mode", "target_column"):
        if key in net.extra:
            setattr(net, key, net.extra[key])
    return net


def save_loss_curve(losses, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mse"])
        for k, v in enumerate(losses):
            w.writerow([k, repr(float(v))])
