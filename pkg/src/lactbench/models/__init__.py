"""Lasso, random-forest and LSTM regressors over lactate samples."""

from __future__ import annotations

import pickle

from .. import __version__
from .forest import ForestModel, ForestParams, forest_fit, forest_predict
from .lasso import LassoModel, LassoParams, lasso_fit
from .lstm import LstmModel, LstmParams, lstm_fit, lstm_predict
from .preprocessing import ModelError, Standardizer, pad_and_flatten

MODELS = ("LR", "RF", "LSTM")
STATE_FORMAT_VERSION = 1


def save_model(model, path) -> None:
    """Pickle a fitted model together with a format tag."""
    payload = {"format_version": STATE_FORMAT_VERSION, "package_version": __version__, "model": model}
    with open(path, "wb") as fh:
        pickle.dump(payload, fh, protocol=pickle.HIGHEST_PROTOCOL)


def load_model(path):
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if not isinstance(payload, dict) or payload.get("format_version") != STATE_FORMAT_VERSION:
        raise ModelError(f"{path}: not a model state file of version {STATE_FORMAT_VERSION}")
    return payload["model"]


__all__ = [
    "MODELS",
    "ModelError",
    "Standardizer",
    "pad_and_flatten",
    "LassoParams",
    "LassoModel",
    "lasso_fit",
    "ForestParams",
    "ForestModel",
    "forest_fit",
    "forest_predict",
    "LstmParams",
    "LstmModel",
    "lstm_fit",
    "lstm_predict",
    "save_model",
    "load_model",
]
