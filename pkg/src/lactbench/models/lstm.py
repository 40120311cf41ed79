"""Stacked LSTM sequence regressor in numpy, trained by BPTT with Adam.

Gate layout along the last axis of every ``4H`` block is ``i, f, o, g``
(input, forget, output, candidate), keeping the sigmoid gates contiguous.
Padded steps are masked out of the recurrence: where the mask is 0 the cell and hidden states are carried
through unchanged, so the final state equals the state after the last
real step and padding contributes nothing to the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .optim import Adam
from .preprocessing import ModelError


@dataclass(frozen=True)
class LstmParams:
    layers: int = 2
    units: int = 64
    dropout: float = 0.6
    learning_rate: float = 1e-4
    epochs: int = 20
    batch_size: int = 100
    forget_bias: float = 1.0
    rng_seed: int = 0
    dtype: str = "float32"

    def validate(self):
        if self.layers < 1 or self.units < 1:
            raise ModelError("lstm layers and units must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ModelError("lstm dropout must lie in [0, 1)")
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ModelError("lstm learning_rate, epochs and batch_size must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ModelError("lstm dtype must be float32 or float64")


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _glorot(rng, fan_in, fan_out):
    return rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / (fan_in + fan_out))


def init_params(n_inputs: int, params: LstmParams, rng, head_bias: float = 0.0) -> dict:
    """Glorot-normal kernels, zero biases except the forget gate."""
    H = params.units
    out = {}
    d = n_inputs
    for l in range(params.layers):
        out[f"Wx{l}"] = _glorot(rng, d, 4 * H)
        out[f"Wh{l}"] = _glorot(rng, H, 4 * H)
        b = np.zeros(4 * H)
        b[H:2 * H] = params.forget_bias
        out[f"b{l}"] = b
        d = H
    out["w_out"] = _glorot(rng, H, 1)[:, 0]
    out["b_out"] = np.array([head_bias])
    return out


def pack(sequences, max_len: int | None = None):
    """Left-pad ``(steps, features)`` sequences into ``(B, T, D)`` plus a step mask."""
    lengths = [len(s) for s in sequences]
    if min(lengths, default=1) < 1:
        raise ModelError("empty sequence")
    T = max(lengths) if max_len is None else max_len
    if max(lengths) > T:
        raise ModelError(f"sequence longer than max_len={T}")
    D = sequences[0].shape[1]
    X = np.zeros((len(sequences), T, D))
    m = np.zeros((len(sequences), T))
    for i, s in enumerate(sequences):
        X[i, T - len(s):] = s
        m[i, T - len(s):] = 1.0
    return X, m


def _layer_forward(X, m, Wx, Wh, b):
    B, T, _ = X.shape
    H = Wh.shape[0]
    P = X @ Wx + b
    h = np.zeros((B, H), dtype=X.dtype)
    c = np.zeros((B, H), dtype=X.dtype)
    hs = np.empty((B, T, H), dtype=X.dtype)
    G = np.empty((B, T, 4 * H), dtype=X.dtype)
    Hp = np.empty((B, T, H), dtype=X.dtype)
    Cp = np.empty((B, T, H), dtype=X.dtype)
    TC = np.empty((B, T, H), dtype=X.dtype)
    for t in range(T):
        a = P[:, t] + h @ Wh
        gt = G[:, t]
        gt[:, :3 * H] = _sigmoid(a[:, :3 * H])
        gt[:, 3 * H:] = np.tanh(a[:, 3 * H:])
        i, f, o, g = gt[:, :H], gt[:, H:2 * H], gt[:, 2 * H:3 * H], gt[:, 3 * H:]
        Hp[:, t] = h
        Cp[:, t] = c
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        TC[:, t] = tc
        mt = m[:, t, None]
        c = c + mt * (c_new - c)
        h = h + mt * (o * tc - h)
        hs[:, t] = h
    return hs, (G, Hp, Cp, TC)


def _layer_backward(X, m, Wx, Wh, cache, dH):
    B, T, D = X.shape
    H = Wh.shape[0]
    G, Hp, Cp, TC = cache
    dP = np.empty((B, T, 4 * H), dtype=X.dtype)
    dh = np.zeros((B, H), dtype=X.dtype)
    dc = np.zeros((B, H), dtype=X.dtype)
    WhT = Wh.T
    for t in reversed(range(T)):
        gt = G[:, t]
        i, f, o, g = gt[:, :H], gt[:, H:2 * H], gt[:, 2 * H:3 * H], gt[:, 3 * H:]
        tc = TC[:, t]
        mt = m[:, t, None]
        dh_tot = dH[:, t] + dh
        dh_new = mt * dh_tot
        dc_new = mt * dc + dh_new * o * (1 - tc * tc)
        da = dP[:, t]
        da[:, :H] = dc_new * g * i * (1 - i)
        da[:, H:2 * H] = dc_new * Cp[:, t] * f * (1 - f)
        da[:, 2 * H:3 * H] = dh_new * tc * o * (1 - o)
        da[:, 3 * H:] = dc_new * i * (1 - g * g)
        dh = da @ WhT + (1 - mt) * dh_tot
        dc = dc_new * f + (1 - mt) * dc
    flat = dP.reshape(B * T, 4 * H)
    dWx = X.reshape(B * T, D).T @ flat
    dWh = Hp.reshape(B * T, H).T @ flat
    db = flat.sum(axis=0)
    dX = dP @ Wx.T
    return dWx, dWh, db, dX


def forward(params: dict, X, m, drop_masks=None):
    """Network output ``(B,)`` and the cache needed by :func:`backward`.

    ``drop_masks`` is ``None`` at inference, else one scaled 0/1 mask per
    layer, shaped like that layer's output sequence.
    """
    n_layers = sum(1 for k in params if k.startswith("Wx"))
    inp = X
    caches = []
    for l in range(n_layers):
        hs, cache = _layer_forward(inp, m, params[f"Wx{l}"], params[f"Wh{l}"], params[f"b{l}"])
        out = hs if drop_masks is None else hs * drop_masks[l]
        caches.append((inp, cache))
        inp = out
    last = inp[:, -1]
    y = last @ params["w_out"] + params["b_out"][0]
    return y, (caches, last, drop_masks, m)


def backward(params: dict, fcache, dy) -> dict:
    caches, last, drop_masks, m = fcache
    grads = {"w_out": last.T @ dy, "b_out": np.array([dy.sum()])}
    n_layers = len(caches)
    B, T = m.shape
    dOut = np.zeros((B, T, params["w_out"].shape[0]), dtype=last.dtype)
    dOut[:, -1] = dy[:, None] * params["w_out"][None, :]
    for l in reversed(range(n_layers)):
        inp, cache = caches[l]
        dH = dOut if drop_masks is None else dOut * drop_masks[l]
        dWx, dWh, db, dX = _layer_backward(inp, m, params[f"Wx{l}"], params[f"Wh{l}"], cache, dH)
        grads[f"Wx{l}"], grads[f"Wh{l}"], grads[f"b{l}"] = dWx, dWh, db
        dOut = dX
    return grads


def loss_and_grads(params: dict, X, m, y, drop_masks=None):
    """Mean squared error over the batch and its gradient for every parameter."""
    yhat, fcache = forward(params, X, m, drop_masks)
    err = yhat - y
    loss = float(np.mean(err * err))
    grads = backward(params, fcache, 2.0 * err / len(y))
    return loss, grads


@dataclass
class LstmModel:
    params: LstmParams
    weights: dict
    max_len: int
    loss_history: list = field(default_factory=list)

    def predict(self, sequences, batch_size: int = 512) -> np.ndarray:
        return lstm_predict(self, sequences, batch_size)


def lstm_fit(sequences, targets, params: LstmParams = LstmParams(), max_len: int | None = None) -> LstmModel:
    """Train on ``(steps, features)`` sequences with mini-batch Adam.

    The head bias starts at the mean training target.  Each epoch visits
    the samples in a fresh permutation drawn from the seeded generator,
    which also draws the dropout masks, so training is deterministic.
    ``loss_history`` holds the mean training loss per epoch.
    """
    params.validate()
    seqs = [np.asarray(s, dtype=float) for s in sequences]
    y = np.asarray(targets, dtype=float)
    if len(seqs) == 0 or len(seqs) != len(y):
        raise ModelError("lstm: need equally many sequences and targets, at least one")
    if not all(np.all(np.isfinite(s)) for s in seqs) or not np.all(np.isfinite(y)):
        raise ModelError("lstm: non-finite input")
    T = max(len(s) for s in seqs) if max_len is None else max_len
    dt = np.dtype(params.dtype)
    X, m = pack(seqs, T)
    X, m, y = X.astype(dt), m.astype(dt), y.astype(dt)
    rng = np.random.default_rng(params.rng_seed)
    weights = init_params(X.shape[2], params, rng, head_bias=float(y.mean()))
    weights = {k: v.astype(dt) for k, v in weights.items()}
    opt = Adam(weights, lr=params.learning_rate)
    keep = 1.0 - params.dropout
    n = len(y)
    history = []
    for epoch in range(params.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, params.batch_size):
            idx = order[start:start + params.batch_size]
            drops = None
            if params.dropout > 0:
                drops = [
                    ((rng.random((len(idx), T, params.units)) < keep) / keep).astype(dt)
                    for _ in range(params.layers)
                ]
            loss, grads = loss_and_grads(weights, X[idx], m[idx], y[idx], drops)
            if not np.isfinite(loss):
                scale = {k: float(np.abs(v).max()) for k, v in weights.items()}
                raise ModelError(
                    f"lstm: non-finite loss at epoch {epoch}, batch starting {start}; "
                    f"learning_rate={params.learning_rate}, max |weight| per tensor={scale}"
                )
            opt.step(grads)
            total += loss * len(idx)
        history.append(total / n)
    return LstmModel(params, weights, T, history)


def lstm_predict(model: LstmModel, sequences, batch_size: int = 512) -> np.ndarray:
    """Predictions for a list of sequences, or a scalar for a single 2-D sequence."""
    single = isinstance(sequences, np.ndarray) and sequences.ndim == 2
    seqs = [sequences] if single else [np.asarray(s, dtype=float) for s in sequences]
    out = np.empty(len(seqs))
    for start in range(0, len(seqs), batch_size):
        chunk = seqs[start:start + batch_size]
        X, m = pack(chunk, max(model.max_len, max(len(s) for s in chunk)))
        dt = model.weights["b_out"].dtype
        out[start:start + len(chunk)] = forward(model.weights, X.astype(dt), m.astype(dt))[0]
    return float(out[0]) if single else out
