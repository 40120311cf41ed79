"""Lasso regression by cyclic coordinate descent."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .preprocessing import ModelError


@dataclass(frozen=True)
class LassoParams:
    l1_penalty: float = 1e-3
    max_sweeps: int = 1000
    tol: float = 1e-8
    fit_intercept: bool = True

    def validate(self):
        if not self.l1_penalty >= 0:
            raise ModelError("lasso l1_penalty must be >= 0")
        if self.max_sweeps < 1 or self.tol <= 0:
            raise ModelError("lasso needs max_sweeps >= 1 and tol > 0")


@dataclass
class LassoModel:
    coef: np.ndarray
    intercept: float
    n_sweeps: int
    objective_history: list = field(default_factory=list)

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coef + self.intercept


def soft_threshold(z, t):
    return np.sign(z) * max(abs(z) - t, 0.0)


def lasso_objective(X, y, w, b, lam):
    r = y - X @ w - b
    return 0.5 * float(r @ r) / len(y) + lam * float(np.abs(w).sum())


def lasso_fit(X, y, params: LassoParams = LassoParams()) -> LassoModel:
    """Minimize ``(1/2n) ||y - Xw - b||^2 + lam ||w||_1``.

    Works on centered data when fitting an intercept, so the intercept is
    ``mean(y) - mean(X) @ w``.  Each sweep updates every coordinate once
    using the Gram matrix; iteration stops when the largest coefficient
    change in a sweep falls below ``tol``.
    """
    params.validate()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],) or len(y) == 0:
        raise ModelError(f"lasso: bad shapes X{X.shape}, y{y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ModelError("lasso: non-finite input")
    n, p = X.shape
    if params.fit_intercept:
        xm, ym = X.mean(axis=0), y.mean()
    else:
        xm, ym = np.zeros(p), 0.0
    Xc = X - xm
    yc = y - ym
    G = Xc.T @ Xc / n
    c = Xc.T @ yc / n
    diag = np.diag(G).copy()
    lam = params.l1_penalty
    w = np.zeros(p)
    Gw = np.zeros(p)
    hist = [lasso_objective(Xc, yc, w, 0.0, lam)]
    sweeps = 0
    for sweeps in range(1, params.max_sweeps + 1):
        max_delta = 0.0
        for j in range(p):
            if diag[j] == 0:
                continue
            rho = c[j] - Gw[j] + diag[j] * w[j]
            new = soft_threshold(rho, lam) / diag[j]
            d = new - w[j]
            if d != 0.0:
                Gw += d * G[:, j]
                w[j] = new
                max_delta = max(max_delta, abs(d))
        hist.append(lasso_objective(Xc, yc, w, 0.0, lam))
        if max_delta < params.tol:
            break
    return LassoModel(w, float(ym - xm @ w), sweeps, hist)
