"""Denoising autoencoder imputer (numpy MLP trained with Adam)."""

from __future__ import annotations

import numpy as np

from ..models.optim import Adam
from .base import FittedImputer, ImputerError, column_scale, mean_fill


def _widths(p: int, ratios) -> list[int]:
    return [p] + [max(1, int(round(r * p))) for r in ratios] + [p]


class AEImputer(FittedImputer):
    """Autoencoder with widths ``p -> 0.5p -> 0.25p -> 0.5p -> p``.

    Hidden layers use tanh, the output layer is linear.  Inputs are
    standardized with training statistics.  Training gaps are pre-filled
    with the training means; at inference gaps are pre-filled with zero in
    the network's input space.  The loss is the mean squared reconstruction
    error over observed entries only, and inputs are corrupted by dropout
    during training.

    After fit, ``train_input_`` holds the mean-prefilled training matrix
    (original units) and ``last_input_`` the standardized matrix fed to the
    network by the latest transform.
    """

    method = "AE"
    defaults = {
        "hidden_ratios": (0.5, 0.25, 0.5),
        "epochs": 50,
        "batch_size": 128,
        "learning_rate": 1e-3,
        "input_dropout": 0.5,
    }

    def check_params(self):
        p = self.params
        if p["epochs"] < 1 or p["batch_size"] < 1 or p["learning_rate"] <= 0:
            raise ImputerError("AE: epochs, batch_size and learning_rate must be positive")
        if not 0 <= p["input_dropout"] < 1:
            raise ImputerError("AE: input_dropout must lie in [0, 1)")
        if any(r <= 0 for r in p["hidden_ratios"]):
            raise ImputerError("AE: hidden_ratios must be positive")

    # -- network ----------------------------------------------------------
    def _init(self, p, rng):
        sizes = _widths(p, self.params["hidden_ratios"])
        params = {}
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            params[f"W{i}"] = rng.standard_normal((a, b)) * np.sqrt(2.0 / (a + b))
            params[f"b{i}"] = np.zeros(b)
        self.n_layers_ = len(sizes) - 1
        return params

    def _forward(self, Z, params):
        acts = [Z]
        h = Z
        for i in range(self.n_layers_):
            h = h @ params[f"W{i}"] + params[f"b{i}"]
            if i < self.n_layers_ - 1:
                h = np.tanh(h)
            acts.append(h)
        return acts

    def _backward(self, acts, dout, params):
        grads = {}
        d = dout
        for i in reversed(range(self.n_layers_)):
            grads[f"W{i}"] = acts[i].T @ d
            grads[f"b{i}"] = d.sum(axis=0)
            if i > 0:
                d = (d @ params[f"W{i}"].T) * (1.0 - acts[i] ** 2)
        return grads

    # -- contract ---------------------------------------------------------
    def _fit(self, X, M, grid):
        self.scale_ = column_scale(X, M)
        self.train_input_ = mean_fill(X, M, self.means_)
        Z = (self.train_input_ - self.means_) / self.scale_
        W = M.astype(float)
        n, p = Z.shape
        rng = np.random.default_rng(self.seed)
        params = self._init(p, rng)
        opt = Adam(params, lr=self.params["learning_rate"])
        keep = 1.0 - self.params["input_dropout"]
        bs = self.params["batch_size"]
        self.loss_history_ = []
        for _ in range(self.params["epochs"]):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                zb, wb = Z[idx], W[idx]
                drop = (rng.random(zb.shape) < keep) / keep
                acts = self._forward(zb * drop, params)
                err = (acts[-1] - zb) * wb
                denom = max(wb.sum(), 1.0)
                total += float((err ** 2).sum())
                grads = self._backward(acts, 2.0 * err / denom, params)
                opt.step(grads)
            self.loss_history_.append(total / max(W.sum(), 1.0))
            if not np.isfinite(self.loss_history_[-1]):
                raise ImputerError("AE: training loss became non-finite; lower learning_rate")
        self.params_ = params

    def _fill(self, X, M, grid):
        Z = np.where(M, (X - self.means_) / self.scale_, 0.0)
        self.last_input_ = Z
        out = self._forward(Z, self.params_)[-1]
        return out * self.scale_ + self.means_
