"""Low-rank imputers over the flattened (stay x bin) row space.

All three work on column-scaled data (divided by the observed standard
deviation); PPCA also centers, while MF and SoftImpute do not, so that an
exactly low-rank input stays exactly low-rank.
"""

from __future__ import annotations

import numpy as np

from .base import FittedImputer, ImputerError, column_scale


def _usable(M: np.ndarray) -> np.ndarray:
    return M.any(axis=0)


def _masked_gram(Of: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``sum_j Of[n, j] * outer(V[j], V[j])`` for every row n, shape (n, k, k)."""
    k = V.shape[1]
    outer = (V[:, :, None] * V[:, None, :]).reshape(len(V), k * k)
    return (Of @ outer).reshape(len(Of), k, k)


class PPCAImputer(FittedImputer):
    """Probabilistic PCA fitted by EM on incomplete rows.

    Missing entries are filled with the posterior-mean reconstruction
    ``mu + W E[x | observed]``.
    """

    method = "PPCA"
    defaults = {"n_components": 10, "tol": 1e-5, "max_iter": 200, "min_variance": 1e-12}

    def check_params(self):
        if self.params["n_components"] < 1 or self.params["max_iter"] < 1:
            raise ImputerError("PPCA: n_components and max_iter must be >= 1")

    def _fit(self, X, M, grid):
        cols = _usable(M)
        self.cols_ = cols
        self.scale_ = column_scale(X, M)
        Y = np.where(M, X, 0.0)[:, cols] / self.scale_[cols]
        O = M[:, cols]
        n, p = Y.shape
        k = int(min(self.params["n_components"], max(p - 1, 1)))
        rng = np.random.default_rng(self.seed)
        mu = np.where(O, Y, 0).sum(0) / np.maximum(O.sum(0), 1)
        W = rng.standard_normal((p, k)) * 0.1
        v = 1.0
        Of = O.astype(float)
        patterns = np.unique(Of, axis=0, return_inverse=True)
        history = []
        for it in range(self.params["max_iter"]):
            xbar, Sigma = self._posterior(Y, Of, mu, W, v, patterns)
            # M-step
            mu_new = (Of * (Y - xbar @ W.T)).sum(0) / np.maximum(Of.sum(0), 1)
            R = (Y - mu_new) * Of
            second = (xbar[:, :, None] * xbar[:, None, :] + Sigma).reshape(n, k * k)
            S = (Of.T @ second).reshape(p, k, k)
            b = R.T @ xbar
            W_new = np.linalg.solve(S + 1e-12 * np.eye(k), b[:, :, None])[:, :, 0]
            fitted = xbar @ W_new.T + mu_new
            resid = ((Y - fitted) ** 2 * Of).sum()
            WW = (W_new[:, :, None] * W_new[:, None, :]).reshape(p, k * k)
            trace = float((Of * (Sigma.reshape(n, k * k) @ WW.T)).sum())
            v_new = max((resid + trace) / max(Of.sum(), 1), self.params["min_variance"])
            delta = max(np.abs(W_new - W).max(), np.abs(mu_new - mu).max(), abs(v_new - v) / v)
            mu, W, v = mu_new, W_new, v_new
            history.append(delta)
            if delta < self.params["tol"]:
                break
        self.mu_, self.W_, self.v_ = mu, W, v
        self.n_iter_ = len(history)
        self.history_ = history

    @staticmethod
    def _posterior(Y, Of, mu, W, v, patterns=None):
        """Posterior mean and covariance of the latent coordinates per row.

        Rows sharing a missingness pattern share a covariance, so the
        inverse is taken once per distinct pattern.
        """
        k = W.shape[1]
        if patterns is None:
            patterns = np.unique(Of, axis=0, return_inverse=True)
        uniq, inverse = patterns
        Ainv = np.linalg.inv(_masked_gram(uniq, W) + v * np.eye(k))[inverse.ravel()]
        rhs = ((Y - mu) * Of) @ W
        xbar = (Ainv @ rhs[:, :, None])[:, :, 0]
        return xbar, v * Ainv

    def reconstruct(self, X, M):
        """Posterior-mean reconstruction in original units for all usable columns."""
        cols = self.cols_
        Y = np.where(M, X, 0.0)[:, cols] / self.scale_[cols]
        xbar, _ = self._posterior(Y, M[:, cols].astype(float), self.mu_, self.W_, self.v_)
        out = np.tile(self.means_, (len(X), 1))
        out[:, cols] = (xbar @ self.W_.T + self.mu_) * self.scale_[cols]
        return out

    def _fill(self, X, M, grid):
        return self.reconstruct(X, M)


def _ridge_rows(Z: np.ndarray, O: np.ndarray, V: np.ndarray, lam: float) -> np.ndarray:
    """Per-row ridge solve of ``z_O ~ u V_O``."""
    r = V.shape[1]
    Of = O.astype(float)
    A = _masked_gram(Of, V) + lam * np.eye(r)
    b = (Z * Of) @ V
    return np.linalg.solve(A, b[:, :, None])[:, :, 0]


class MFImputer(FittedImputer):
    """Rank-``rank`` factorization ``Z ~ U V^T`` by alternating ridge least squares."""

    method = "MF"
    defaults = {"rank": 10, "l2_penalty": 1e-2, "n_sweeps": 100, "tol": 1e-8}

    def check_params(self):
        if self.params["rank"] < 1 or self.params["l2_penalty"] < 0:
            raise ImputerError("MF: rank must be >= 1 and l2_penalty >= 0")

    def _fit(self, X, M, grid):
        cols = _usable(M)
        self.cols_ = cols
        self.scale_ = column_scale(X, M)
        Z = np.where(M, X, 0.0)[:, cols] / self.scale_[cols]
        O = M[:, cols]
        n, p = Z.shape
        r = int(min(self.params["rank"], p, max(n, 1)))
        lam = self.params["l2_penalty"]
        # initialise from the SVD of the mean-filled matrix
        col_mean = np.where(O, Z, 0).sum(0) / np.maximum(O.sum(0), 1)
        _, s, Vt = np.linalg.svd(np.where(O, Z, col_mean), full_matrices=False)
        V = Vt[:r].T * np.sqrt(s[:r])
        losses = []
        for _ in range(self.params["n_sweeps"]):
            U = _ridge_rows(Z, O, V, lam)
            V = _ridge_rows(Z.T, O.T, U, lam)
            loss = (((Z - U @ V.T) * O) ** 2).sum() + lam * ((U ** 2).sum() + (V ** 2).sum())
            losses.append(loss)
            if len(losses) > 1 and abs(losses[-2] - loss) <= self.params["tol"] * max(losses[-2], 1e-300):
                break
        self.V_ = V
        self.loss_history_ = losses

    def _fill(self, X, M, grid):
        cols = self.cols_
        Z = np.where(M, X, 0.0)[:, cols] / self.scale_[cols]
        U = _ridge_rows(Z, M[:, cols], self.V_, self.params["l2_penalty"])
        out = np.tile(self.means_, (len(X), 1))
        has_obs = M[:, cols].any(axis=1)
        recon = (U @ self.V_.T) * self.scale_[cols]
        block = out[:, cols]
        block[has_obs] = recon[has_obs]
        out[:, cols] = block
        return out


def soft_threshold_svd(A: np.ndarray, lam: float, max_rank: int | None = None):
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    s_shr = np.maximum(s - lam, 0.0)
    if max_rank is not None:
        s_shr[max_rank:] = 0.0
    keep = s_shr > 0
    return U[:, keep], s_shr[keep], Vt[keep], s[keep]


def soft_impute_objective(Z: np.ndarray, Y: np.ndarray, O: np.ndarray, lam: float) -> float:
    """``0.5 * ||P_O(Y - Z)||_F^2 + lam * ||Z||_*``."""
    resid = np.where(O, Y - Z, 0.0)
    return 0.5 * float((resid ** 2).sum()) + lam * float(np.linalg.svd(Z, compute_uv=False).sum())


class SoftImputeImputer(FittedImputer):
    """Iterative soft-thresholded SVD over a decreasing shrinkage path.

    The path is geometric from the largest singular value of the zero-filled
    matrix down to ``lambda_min_ratio`` times it, in ``n_lambdas`` steps,
    with warm starts.  The regularized objective at each iterate is kept in
    ``objective_history_`` (one list per shrinkage value).
    """

    method = "SoftImpute"
    defaults = {
        "n_lambdas": 10,
        "lambda_min_ratio": 1 / 50,
        "tol": 1e-4,
        "max_iter": 100,
        "max_rank": None,
        "track_objective": False,
    }

    def check_params(self):
        if not 0 < self.params["lambda_min_ratio"] <= 1 or self.params["n_lambdas"] < 1:
            raise ImputerError("SoftImpute: need 0 < lambda_min_ratio <= 1 and n_lambdas >= 1")

    def _fit(self, X, M, grid):
        cols = _usable(M)
        self.cols_ = cols
        self.scale_ = column_scale(X, M)
        Y = np.where(M, X, 0.0)[:, cols] / self.scale_[cols]
        O = M[:, cols]
        max_rank = self.params["max_rank"]
        lam_max = np.linalg.svd(Y, compute_uv=False)[0] if Y.size else 0.0
        lambdas = lam_max * np.geomspace(1.0, self.params["lambda_min_ratio"], self.params["n_lambdas"])
        Z = np.zeros_like(Y)
        self.objective_history_ = []
        self.n_iter_ = []
        parts = None
        for lam in lambdas:
            hist = []
            for it in range(self.params["max_iter"]):
                filled = np.where(O, Y, Z)
                parts = soft_threshold_svd(filled, lam, max_rank)
                U, s, Vt, _ = parts
                Z_new = (U * s) @ Vt
                denom = max((Z ** 2).sum(), 1e-300)
                change = ((Z_new - Z) ** 2).sum() / denom
                Z = Z_new
                if self.params["track_objective"]:
                    hist.append(soft_impute_objective(Z, Y, O, lam))
                if change < self.params["tol"]:
                    break
            self.objective_history_.append(hist)
            self.n_iter_.append(it + 1)
        self.lambda_ = float(lambdas[-1]) if len(lambdas) else 0.0
        if parts is None or len(parts[1]) == 0:
            self.V_ = np.zeros((Y.shape[1], 0))
            self.shrink_ = np.zeros(0)
        else:
            _, s_shr, Vt, s_raw = parts
            self.V_ = Vt.T
            self.shrink_ = s_shr / s_raw
        self.completed_ = Z

    def _fill(self, X, M, grid):
        cols = self.cols_
        Y = np.where(M, X, 0.0)[:, cols] / self.scale_[cols]
        O = M[:, cols]
        P = (self.V_ * self.shrink_) @ self.V_.T
        Z = np.zeros_like(Y)
        for _ in range(self.params["max_iter"] * self.params["n_lambdas"]):
            Z_new = np.where(O, Y, Z) @ P
            change = ((Z_new - Z) ** 2).sum() / max((Z ** 2).sum(), 1e-300)
            Z = Z_new
            if change < self.params["tol"] ** 2:
                break
        out = np.tile(self.means_, (len(X), 1))
        out[:, cols] = Z * self.scale_[cols]
        return out
