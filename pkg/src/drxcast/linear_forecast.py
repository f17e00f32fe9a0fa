"""AR / MA / ARIMA models fitted by conditional least squares.

The differenced series ``w`` follows

    w(t) = c + sum_i ar[i] w(t-1-i) + e(t) + sum_j ma[j] e(t-1-j)

with pre-sample residuals set to zero. Pure AR orders are solved by ordinary
least squares; MA terms use Gauss-Newton on the conditional sum of squares,
starting from a Hannan-Rissanen estimate.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy.signal import lfilter


def difference(series, d: int) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if d < 0:
        raise ValueError("d must be non-negative")
    if len(x) <= d:
        raise ValueError(f"series of length {len(x)} too short for differencing order {d}")
    return np.diff(x, n=d) if d else x.copy()


def integrate(diffs, heads) -> np.ndarray:
    """Invert :func:`difference`: ``heads`` are the first values of each level.

    ``heads[k]`` is the first element of the k-times differenced series, so
    ``integrate(difference(x, d), [difference(x, k)[0] for k in range(d)])``
    returns ``x``.
    """
    out = np.asarray(diffs, dtype=float)
    for head in reversed(list(heads)):
        out = np.concatenate([[head], head + np.cumsum(out)])
    return out


@dataclass(frozen=True)
class ArimaModel:
    p: int
    d: int
    q: int
    ar: np.ndarray
    ma: np.ndarray
    const: float
    obs_history: np.ndarray          # last p values of the differenced series
    resid_history: np.ndarray        # last q one-step residuals
    level_tails: np.ndarray          # last value of each differencing level 0..d-1
    sigma2: float = float("nan")
    converged: bool = True
    diagnostics: str = ""
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def __post_init__(self):
        if min(self.p, self.d, self.q) < 0:
            raise ValueError("orders must be non-negative")
        if len(self.ar) != self.p or len(self.ma) != self.q:
            raise ValueError("coefficient lengths do not match orders")

    @property
    def order(self) -> tuple:
        return (self.p, self.d, self.q)

    @property
    def mean(self) -> float:
        """Implied mean of the differenced process (nan for a unit root)."""
        denom = 1.0 - float(np.sum(self.ar))
        return self.const / denom if abs(denom) > 1e-12 else float("nan")


def persistence_model(history) -> ArimaModel:
    """The last-observation baseline: AR(1) with coefficient 1 and no constant."""
    x = np.asarray(history, dtype=float)
    if len(x) == 0:
        raise ValueError("persistence needs at least one observation")
    return ArimaModel(1, 0, 0, np.array([1.0]), np.zeros(0), 0.0, x[-1:].copy(), np.zeros(0), np.zeros(0))


def _lagmat(w: np.ndarray, lags: int, start: int) -> np.ndarray:
    n = len(w)
    return np.column_stack([w[start - i: n - i] for i in range(1, lags + 1)]) if lags else np.zeros((n - start, 0))


def _css_residuals(w, const, ar, ma):
    """Residuals e(t) for t >= len(ar); earlier residuals are zero by convention."""
    p = len(ar)
    u = w[p:] - const - (_lagmat(w, p, p) @ ar if p else 0.0)
    return lfilter([1.0], np.r_[1.0, ma], u) if len(ma) else u


def _invertible(ma) -> bool:
    if len(ma) == 0:
        return True
    return bool(np.all(np.abs(np.roots(np.r_[1.0, ma])) < 1.0 - 1e-6))


def _ols(y, X):
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return beta


def _hannan_rissanen(w, p, q):
    n = len(w)
    m = min(max(p, q) + 6, max(1, n // 5))
    X = np.column_stack([np.ones(n - m), _lagmat(w, m, m)])
    long_resid = np.zeros(n)
    long_resid[m:] = w[m:] - X @ _ols(w[m:], X)
    s = m + q
    X2 = np.column_stack([np.ones(n - s), _lagmat(w, p, s), _lagmat(long_resid, q, s)])
    if len(X2) <= X2.shape[1]:
        return 0.0, np.zeros(p), np.zeros(q)
    beta = _ols(w[s:], X2)
    c, ar, ma = beta[0], beta[1:1 + p], beta[1 + p:]
    if not _invertible(ma):
        ma = np.zeros(q)
    return float(c), ar, ma


def _gauss_newton(w, p, q, c, ar, ma, max_iter, tol):
    theta = np.r_[c, ar, ma]

    def unpack(th):
        return th[0], th[1:1 + p], th[1 + p:]

    e = _css_residuals(w, *unpack(theta))
    sse = float(e @ e)
    for it in range(max_iter):
        c, ar, ma = unpack(theta)
        a = np.r_[1.0, ma]
        n_eff = len(e)
        cols = [lfilter([1.0], a, -np.ones(n_eff))]
        for i in range(1, p + 1):
            cols.append(lfilter([1.0], a, -w[p - i: len(w) - i]))
        for j in range(1, q + 1):
            lagged = np.r_[np.zeros(j), e[:-j]] if j < n_eff else np.zeros(n_eff)
            cols.append(lfilter([1.0], a, -lagged))
        J = np.column_stack(cols)
        step, *_ = np.linalg.lstsq(J, -e, rcond=None)
        scale = 1.0
        improved = False
        while scale > 1e-4:
            cand = theta + scale * step
            if _invertible(unpack(cand)[2]):
                e_new = _css_residuals(w, *unpack(cand))
                sse_new = float(e_new @ e_new)
                if np.isfinite(sse_new) and sse_new <= sse:
                    improved = True
                    break
            scale *= 0.5
        if not improved:
            return theta, e, True, f"stationary point after {it} iterations"
        rel = (sse - sse_new) / max(sse, 1e-300)
        theta, e, sse = cand, e_new, sse_new
        if rel < tol or np.linalg.norm(scale * step) < 1e-9 * (1 + np.linalg.norm(theta)):
            return theta, e, True, f"converged in {it + 1} iterations"
    return theta, e, False, f"no convergence after {max_iter} iterations (sse={sse:.6g})"


def fit_arima(train, p: int, d: int, q: int, max_iter: int = 100, tol: float = 1e-10) -> ArimaModel:
    """Conditional-least-squares ARIMA(p, d, q) fit.

    Raises ValueError if ``train`` has fewer than ``max(p, q) + d + 10`` points.
    A non-converged Gauss-Newton run still returns a model, flagged through
    ``converged`` and ``diagnostics``.
    """
    x = np.asarray(train, dtype=float)
    if min(p, d, q) < 0:
        raise ValueError("orders must be non-negative")
    need = max(p, q) + d + 10
    if len(x) < need:
        raise ValueError(f"ARIMA({p},{d},{q}) needs at least {need} samples, got {len(x)}")
    if not np.all(np.isfinite(x)):
        raise ValueError("training series contains non-finite values")
    w = difference(x, d)
    tails = np.array([difference(x, k)[-1] for k in range(d)])

    if np.ptp(w) == 0.0:
        return ArimaModel(p, d, q, np.zeros(p), np.zeros(q), float(w[0]),
                          w[-p:].copy() if p else np.zeros(0), np.zeros(q), tails,
                          sigma2=0.0, diagnostics="constant series", residuals=np.zeros(len(w) - p))

    converged, diag = True, "ordinary least squares"
    if q == 0:
        X = np.column_stack([np.ones(len(w) - p), _lagmat(w, p, p)])
        beta = _ols(w[p:], X)
        c, ar, ma = float(beta[0]), beta[1:], np.zeros(0)
        e = w[p:] - X @ beta
    else:
        c, ar, ma = _hannan_rissanen(w, p, q)
        theta, e, converged, diag = _gauss_newton(w, p, q, c, ar, ma, max_iter, tol)
        c, ar, ma = float(theta[0]), theta[1:1 + p], theta[1 + p:]
    resid_hist = np.zeros(q)
    if q:
        k = min(q, len(e))
        resid_hist[q - k:] = e[len(e) - k:]
    return ArimaModel(
        p, d, q, np.asarray(ar, float), np.asarray(ma, float), c,
        w[-p:].copy() if p else np.zeros(0), resid_hist, tails,
        sigma2=float(e @ e / max(1, len(e))), converged=converged, diagnostics=diag, residuals=e,
    )


def _reintegrate(w_paths: np.ndarray, tails: np.ndarray) -> np.ndarray:
    """Undo differencing along axis 1; ``tails[:, k]`` is the last level-k value at each origin."""
    out = w_paths
    for k in reversed(range(tails.shape[1])):
        out = tails[:, k:k + 1] + np.cumsum(out, axis=1)
    return out


def _recurse(model: ArimaModel, obs: np.ndarray, resid: np.ndarray, horizon: int) -> np.ndarray:
    """Iterate the one-step recurrence from many origins at once (rows)."""
    p, q = model.p, model.q
    rows = obs.shape[0]
    w = np.concatenate([obs, np.zeros((rows, horizon))], axis=1)
    e = np.concatenate([resid, np.zeros((rows, horizon))], axis=1)
    for k in range(horizon):
        val = np.full(rows, model.const)
        for i in range(p):
            val += model.ar[i] * w[:, p + k - 1 - i]
        for j in range(q):
            val += model.ma[j] * e[:, q + k - 1 - j]
        w[:, p + k] = val
    return w[:, p:]


def forecast(model: ArimaModel, horizon: int) -> np.ndarray:
    """Iterated forecasts for steps 1..horizon with future shocks set to zero."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    w_hat = _recurse(model, model.obs_history[None, :], model.resid_history[None, :], horizon)
    return _reintegrate(w_hat, model.level_tails[None, :])[0]


def rolling_forecast(model: ArimaModel, history, future, horizon: int = 1) -> np.ndarray:
    """Fixed-coefficient forecasts of every point of ``future``.

    Entry t is the ``horizon``-step-ahead forecast made with data up to
    ``t - horizon`` (actual observations, not earlier forecasts). The history
    must cover the model's lags.
    """
    hist = np.asarray(history, dtype=float)
    fut = np.asarray(future, dtype=float)
    x = np.concatenate([hist, fut])
    p, d, q = model.order
    n_hist = len(hist)
    if n_hist < p + d + horizon:
        raise ValueError("history too short for the model lags and horizon")
    w = np.diff(x, n=d) if d else x
    e_full = np.zeros(len(w))
    e_full[p:] = _css_residuals(w, model.const, model.ar, model.ma)
    if horizon == 1:
        # one-step error in levels equals the error in the differenced domain
        return fut - e_full[n_hist - d:]

    targets = np.arange(n_hist, len(x))
    origins_w = targets - horizon - d       # index in w of last known differenced value
    obs = np.column_stack([w[origins_w - i] for i in range(p - 1, -1, -1)]) if p else np.zeros((len(targets), 0))
    res = np.column_stack([e_full[origins_w - j] for j in range(q - 1, -1, -1)]) if q else np.zeros((len(targets), 0))
    w_hat = _recurse(model, obs, res, horizon)
    tails = np.column_stack([
        np.diff(x, n=k)[targets - horizon - k] if k else x[targets - horizon] for k in range(d)
    ]) if d else np.zeros((len(targets), 0))
    return _reintegrate(w_hat, tails)[:, -1]


def rmse(pred, truth) -> float:
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError("rmse needs equal-length, non-empty inputs")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


@dataclass(frozen=True)
class GridResult:
    best: tuple
    best_rmse: float
    table: list          # rows (p, d, q, rmse, converged)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["p", "d", "q", "rmse", "converged"])
            for p, d, q, r, ok in self.table:
                w.writerow([p, d, q, repr(float(r)), int(ok)])


def grid_search(train, validation, p_range: Iterable[int] = range(9), d_range: Iterable[int] = range(3),
                q_range: Iterable[int] = range(4), horizon: int = 1) -> GridResult:
    """Pick the order minimising validation RMSE of rolling forecasts.

    Ties go to the smallest p + d + q, then the smallest p.
    """
    p_range, d_range, q_range = list(p_range), list(d_range), list(q_range)
    if not (p_range and d_range and q_range):
        raise ValueError("grid ranges must be non-empty")
    train = np.asarray(train, float)
    validation = np.asarray(validation, float)
    table, failures = [], []
    for p, d, q in product(p_range, d_range, q_range):
        try:
            model = fit_arima(train, p, d, q)
            err = rmse(rolling_forecast(model, train, validation, horizon), validation)
            if not math.isfinite(err):
                raise FloatingPointError("non-finite validation error")
            table.append((p, d, q, err, model.converged))
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            failures.append(f"({p},{d},{q}): {exc}")
            table.append((p, d, q, float("nan"), False))
    ok = [row for row in table if math.isfinite(row[3])]
    if not ok:
        raise RuntimeError("every ARIMA fit failed: " + "; ".join(failures))
    best = min(ok, key=lambda r: (r[3], r[0] + r[1] + r[2], r[0]))
    return GridResult(best[:3], best[3], table)


@dataclass
class OptimizedArima:
    """Grid-searched ARIMA: order chosen on the tail of the training slice, then refitted."""

    p_range: Iterable[int] = range(9)
    d_range: Iterable[int] = range(3)
    q_range: Iterable[int] = range(4)
    validation_fraction: float = 0.2
    grid: Optional[GridResult] = None
    model: Optional[ArimaModel] = None

    def fit(self, train) -> "OptimizedArima":
        train = np.asarray(train, float)
        n_val = max(1, int(round(len(train) * self.validation_fraction)))
        self.grid = grid_search(train[:-n_val], train[-n_val:], self.p_range, self.d_range, self.q_range)
        self.model = fit_arima(train, *self.grid.best)
        return self

    def predict(self, history, future, horizon: int = 1) -> np.ndarray:
        return rolling_forecast(self.model, history, future, horizon)
