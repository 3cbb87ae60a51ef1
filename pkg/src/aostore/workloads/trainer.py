"""The forecasting workload as a persistent ``workload.trainer`` object.

The object owns its data and model: ``prepare`` builds the normalised series
next to where training will happen, so neither the dataset nor the weights
ever need to reach the client.
"""

from __future__ import annotations

import numpy as np

from ..registry import ActiveClass
from ..values import Kind, encoded_size, pairs
from . import lstm

CLASS_NAME = "workload.trainer"

trainer = ActiveClass(CLASS_NAME, {
    "series_length": Kind.INT,
    "dataset_seed": Kind.INT,
    "csv_path": Kind.TEXT,
    "hidden": Kind.INT,
    "lags": Kind.INT,
    "epochs": Kind.INT,
    "batch_size": Kind.INT,
    "learning_rate": Kind.FLOAT,
    "seed": Kind.INT,
    "series": Kind.FLOAT_ARRAY,
    "bounds": Kind.FLOAT_ARRAY,
    "params": Kind.FLOAT_ARRAY,
    "adam_m": Kind.FLOAT_ARRAY,
    "adam_v": Kind.FLOAT_ARRAY,
    "adam_step": Kind.INT,
    "history": Kind.LIST,
})

DEFAULTS = {
    "series_length": 2000,
    "dataset_seed": 0,
    "hidden": lstm.HIDDEN,
    "lags": lstm.LAGS,
    "epochs": 100,
    "batch_size": 64,
    "learning_rate": 0.001,
    "seed": 0,
}


def _get(obj, name):
    v = obj[name]
    return DEFAULTS[name] if v is None else v


def _config(obj) -> lstm.TrainConfig:
    return lstm.TrainConfig(epochs=_get(obj, "epochs"), batch_size=_get(obj, "batch_size"),
                            learning_rate=_get(obj, "learning_rate"), seed=_get(obj, "seed"))


def _model(obj) -> lstm.LstmModel:
    series = obj.array("series")
    if series is None:
        raise lstm.DatasetTooShort("trainer has no data; call prepare() first")
    return lstm.LstmModel(_get(obj, "hidden"), series.shape[1], obj.array("params"))


@trainer.method(returns=Kind.INT)
def prepare(obj) -> int:
    """Load or generate the series, normalise it, initialise the model."""
    lags = _get(obj, "lags")
    if obj["csv_path"]:
        ds = lstm.load_series_csv(obj["csv_path"], lags)
    else:
        ds = lstm.generate_synthetic_series(_get(obj, "series_length"),
                                            _get(obj, "dataset_seed"), lags)
    series, bounds = ds.normalized()
    obj.set_array("series", series)
    obj.set_array("bounds", bounds)
    model = lstm.LstmModel.initialized(_get(obj, "hidden"), series.shape[1], _get(obj, "seed"))
    obj.set_array("params", model.params)
    obj["adam_m"] = obj["adam_v"] = None
    obj["adam_step"] = 0
    obj["history"] = []
    return ds.length


@trainer.method(returns=Kind.FLOAT)
def train(obj) -> float:
    """Train for the configured epochs; returns the final epoch's train MSE."""
    model = _model(obj)
    windows = lstm.make_windows(obj.array("series"), _get(obj, "lags"))
    m, v = obj.array("adam_m"), obj.array("adam_v")
    adam = (lstm.AdamState(m, v, obj["adam_step"]) if m is not None
            else lstm.AdamState.zeros(model.params.size))
    history = lstm.train(model, windows, _config(obj), adam)
    obj.set_array("params", model.params)
    obj.set_array("adam_m", adam.m)
    obj.set_array("adam_v", adam.v)
    obj["adam_step"] = adam.step
    obj["history"] = list(obj["history"] or []) + [
        [r.epoch, r.train_mse, r.val_mse, r.seconds] for r in history
    ]
    return history[-1].train_mse


@trainer.method(returns=Kind.LIST)
def evaluate(obj) -> list:
    """Validation metrics per covariate, plus model size, as name/value pairs."""
    model = _model(obj)
    windows = lstm.make_windows(obj.array("series"), _get(obj, "lags"))
    metrics = lstm.evaluate(model, *windows.validation, obj.array("bounds"))
    flat = {f"{cov}.{name}": val for cov, ms in metrics.items() for name, val in ms.items()}
    flat["val_mse_normalized"] = float(np.mean((model.forward(windows.validation[0])
                                                - windows.validation[1]) ** 2))
    flat["parameters"] = int(model.params.size)
    flat["model_mb"] = encoded_size(obj["params"]) / 2**20
    return pairs(flat)


@trainer.method(returns=Kind.LIST)
def history(obj) -> list:
    return obj["history"] or []


def register(registry) -> None:
    trainer.register(registry)
