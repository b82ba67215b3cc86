"""L2-regularised hinge-loss linear classifier (dual coordinate descent).

The bias is learned through an augmented constant feature, so the minimised
objective is::

    0.5 * (||w||^2 + (b / bias_scale)^2) + C * sum_i weight_i * max(0, 1 - y_i (<w, x_i> + b))

With ``bias_scale=1`` this is the usual liblinear convention: the bias is
regularised like any other weight.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .data import LinearModel, NumericError


@dataclass
class TrainingSet:
    """Examples for one binary problem: features, labels in {-1, +1}, weights."""

    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray | None = None
    C: float = 10.0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-D array")
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if len(self.y) != len(self.X):
            raise ValueError("X and y differ in length")
        if self.weights is None:
            self.weights = np.ones(len(self.y))
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(self.weights) != len(self.y):
            raise ValueError("weights and y differ in length")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if np.any(self.weights < 0):
            raise ValueError("example weights must be >= 0")
        if not self.C > 0:
            raise ValueError("C must be > 0")


@numba.njit(cache=True, nogil=True)
def _dcd_pass(Z, y, upper, qdiag, alpha, v, perm):
    dim = Z.shape[1]
    for i in perm:
        g = 0.0
        for d in range(dim):
            g += v[d] * Z[i, d]
        g = y[i] * g - 1.0
        a = alpha[i]
        if a == 0.0:
            pg = min(g, 0.0)
        elif a == upper[i]:
            pg = max(g, 0.0)
        else:
            pg = g
        if pg != 0.0:
            new = min(max(a - g / qdiag[i], 0.0), upper[i])
            delta = (new - a) * y[i]
            if delta != 0.0:
                alpha[i] = new
                for d in range(dim):
                    v[d] += delta * Z[i, d]


def _primal(Z, y, upper, v):
    margins = 1.0 - y * (Z @ v)
    return 0.5 * float(v @ v) + float(upper @ np.maximum(margins, 0.0))


def objective(model: LinearModel, ts: TrainingSet, bias_scale: float = 1.0) -> float:
    """Value of the minimised primal objective at ``model``."""
    w, b = model.weights, model.bias
    margins = 1.0 - ts.y * (ts.X @ w + b)
    reg = 0.5 * (float(w @ w) + (b / bias_scale) ** 2)
    return reg + ts.C * float(ts.weights @ np.maximum(margins, 0.0))


def fit(
    ts: TrainingSet,
    seed: int = 0,
    action_id: str = "",
    *,
    bias_scale: float = 1.0,
    max_passes: int = 1000,
    tol: float = 1e-6,
    info: dict | None = None,
) -> LinearModel:
    """Train a linear classifier on ``ts``.

    Coordinates are visited in a fresh seeded permutation each pass.  The
    returned model is the best primal iterate seen; optimisation stops when
    the duality gap falls below ``tol`` relative to that objective, or after
    ``max_passes``.  If ``info`` is given it receives ``objective_history``
    (best objective after each pass), ``passes`` and ``gap``.
    """
    X, y = ts.X, ts.y
    if not np.all(np.isfinite(X)):
        raise NumericError("non-finite feature values in training set")
    keep = ts.weights > 0
    if not (np.any(y[keep] > 0) and np.any(y[keep] < 0)):
        raise NumericError("degenerate labels: need positive and negative examples")
    Z = np.hstack([X[keep], np.full((int(keep.sum()), 1), bias_scale)])
    Z = np.ascontiguousarray(Z)
    yk = np.ascontiguousarray(y[keep])
    upper = ts.C * ts.weights[keep]
    qdiag = np.einsum("ij,ij->i", Z, Z)
    alpha = np.zeros(len(yk))
    v = np.zeros(Z.shape[1])
    rng = np.random.default_rng(seed)

    best_v = v.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        best = _primal(Z, yk, upper, v)
    if not np.isfinite(best):
        raise NumericError(f"objective overflows at C={ts.C:g}")
    history = []
    gap = np.inf
    passes = 0
    for passes in range(1, max_passes + 1):
        _dcd_pass(Z, yk, upper, qdiag, alpha, v, rng.permutation(len(yk)))
        with np.errstate(over="ignore", invalid="ignore"):
            p = _primal(Z, yk, upper, v)
        if not (np.isfinite(p) and np.all(np.isfinite(v))):
            raise NumericError(f"solver diverged at C={ts.C:g} (non-finite iterate)")
        if p < best:
            best, best_v = p, v.copy()
        history.append(best)
        dual = float(alpha.sum()) - 0.5 * float(v @ v)
        gap = best - dual
        if gap <= tol * max(1.0, abs(best)):
            break
    if info is not None:
        info.update(objective_history=history, passes=passes, gap=gap)
    return LinearModel(action_id, best_v[:-1].copy(), float(best_v[-1] * bias_scale))


def score(m: LinearModel, x) -> float | np.ndarray:
    """``<w, x> + b`` for one feature vector or each row of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != m.feature_dim:
        raise ValueError(f"feature dimension {x.shape[-1]} != model dimension {m.feature_dim}")
    out = x @ m.weights + m.bias
    return float(out) if np.ndim(out) == 0 else out
