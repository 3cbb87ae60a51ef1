"""Bivariate utilization forecasting with a from-scratch LSTM.

Pipeline: series -> min-max normalisation -> sliding windows of ``lags``
rows -> one LSTM layer -> linear head on the last hidden state.  Trained
with Adam on MSE, evaluated with MSE/MAE/SMAPE/RMSE on denormalised values.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from ..errors import DataOrderError, DatasetTooShort, DivergenceError, ParseError, ShapeError

LAGS = 6
HIDDEN = 64
COVARIATES = ("cpu", "mem")
SAMPLE_INTERVAL = 300.0  # seconds between rows
TRAIN_FRACTION = 0.8
DAY = 288  # rows per day at 5-minute sampling


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.001
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


@dataclass
class TimeSeriesDataset:
    samples: np.ndarray  # (T, k), raw units
    names: tuple[str, ...] = COVARIATES
    interval: float = SAMPLE_INTERVAL

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    def bounds(self) -> np.ndarray:
        """Per-covariate (min, max) as a (2, k) array."""
        return np.stack([self.samples.min(axis=0), self.samples.max(axis=0)])

    def normalized(self) -> tuple[np.ndarray, np.ndarray]:
        b = self.bounds()
        return normalize(self.samples, b), b


def normalize(x: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    span = bounds[1] - bounds[0]
    span = np.where(span > 0, span, 1.0)
    return (x - bounds[0]) / span


def denormalize(x: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    span = bounds[1] - bounds[0]
    span = np.where(span > 0, span, 1.0)
    return x * span + bounds[0]


def _ar1(rng: np.random.Generator, n: int, phi: float, sigma: float) -> np.ndarray:
    eps = rng.normal(0.0, sigma, n)
    out = np.empty(n)
    acc = 0.0
    for t in range(n):
        acc = phi * acc + eps[t]
        out[t] = acc
    return out


def generate_synthetic_series(length: int = 2000, seed: int = 0,
                              lags: int = LAGS) -> TimeSeriesDataset:
    """CPU and memory utilisation (percent) with daily and weekly cycles.

    Memory follows CPU with a lag plus its own noise, so the channels are
    correlated.
    """
    if length <= lags:
        raise DatasetTooShort(f"series of {length} rows cannot fill a window of {lags} lags")
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    phase = rng.uniform(0, 2 * np.pi)
    daily = np.sin(2 * np.pi * t / DAY + phase)
    weekly = np.sin(2 * np.pi * t / (7 * DAY) + phase / 3)
    cpu = 40.0 + 20.0 * daily + 6.0 * weekly + _ar1(rng, length, 0.8, 2.5)
    mem = 55.0 + 0.3 * (np.roll(cpu, 3) - 40.0) + 4.0 * daily + _ar1(rng, length, 0.9, 0.6)
    samples = np.clip(np.stack([cpu, mem], axis=1), 0.0, 100.0)
    return TimeSeriesDataset(samples)


def _parse_timestamp(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return datetime.fromisoformat(text).timestamp()


def load_series_csv(path: str | Path, lags: int = LAGS) -> TimeSeriesDataset:
    """Read ``timestamp,cpu,mem`` rows; timestamps must strictly increase."""
    rows: list[tuple[float, float]] = []
    last_ts = -math.inf
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "cpu", "mem"]:
            raise ParseError(f"expected header 'timestamp,cpu,mem', got {header}", line=1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 columns, got {len(row)}", line=line)
            try:
                ts = _parse_timestamp(row[0].strip())
                cpu, mem = float(row[1]), float(row[2])
            except ValueError as exc:
                raise ParseError(str(exc), line=line) from None
            if ts <= last_ts:
                raise DataOrderError(f"line {line}: timestamp {row[0]!r} is not after the previous one")
            last_ts = ts
            rows.append((cpu, mem))
    if len(rows) < lags + 2:
        raise DatasetTooShort(f"{len(rows)} rows, need at least {lags + 2}")
    return TimeSeriesDataset(np.asarray(rows, dtype=np.float64))


@dataclass
class WindowedSet:
    inputs: np.ndarray   # (N, L, k)
    targets: np.ndarray  # (N, k)
    split: int

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs[:self.split], self.targets[:self.split]

    @property
    def validation(self) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs[self.split:], self.targets[self.split:]


def make_windows(series: np.ndarray, lags: int = LAGS,
                 train_fraction: float = TRAIN_FRACTION) -> WindowedSet:
    """Window ``i`` holds rows ``i .. i+lags-1`` in time order; its target is row ``i+lags``."""
    if lags < 1:
        raise ValueError("lags must be >= 1")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    series = np.asarray(series, dtype=np.float64)
    if series.ndim == 1:
        series = series[:, None]
    n = series.shape[0] - lags
    if n < 2:
        raise DatasetTooShort(f"{series.shape[0]} rows give {max(n, 0)} windows of {lags} lags")
    idx = np.arange(n)[:, None] + np.arange(lags)[None, :]
    inputs = series[idx]
    targets = series[lags:].copy()
    split = min(max(int(n * train_fraction), 1), n - 1)
    return WindowedSet(inputs, targets, split)


class LstmModel:
    """Single-layer LSTM with a linear head; all parameters in one flat vector.

    Gate order in the stacked weights is input, forget, candidate, output.
    """

    def __init__(self, hidden: int = HIDDEN, inputs: int = len(COVARIATES),
                 params: np.ndarray | None = None):
        self.hidden = hidden
        self.inputs = inputs
        size = self.parameter_count(hidden, inputs)
        if params is None:
            params = np.zeros(size)
        params = np.ascontiguousarray(params, dtype=np.float64).reshape(-1)
        if params.size != size:
            raise ShapeError(f"expected {size} parameters, got {params.size}")
        self.params = params
        self._bind()

    @staticmethod
    def parameter_count(hidden: int, inputs: int) -> int:
        return 4 * (hidden * inputs + hidden * hidden + hidden) + (hidden * inputs + inputs)

    def _shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        h, k = self.hidden, self.inputs
        return [("w_x", (4 * h, k)), ("w_h", (4 * h, h)), ("b", (4 * h,)),
                ("w_out", (k, h)), ("b_out", (k,))]

    def _bind(self) -> None:
        self.views = split_flat(self.params, self._shapes())
        for name, view in self.views.items():
            setattr(self, name, view)

    @classmethod
    def initialized(cls, hidden: int = HIDDEN, inputs: int = len(COVARIATES),
                    seed: int = 0) -> LstmModel:
        rng = np.random.default_rng(seed)
        bound = 1.0 / math.sqrt(hidden)
        size = cls.parameter_count(hidden, inputs)
        return cls(hidden, inputs, rng.uniform(-bound, bound, size))

    def _check(self, batch: np.ndarray) -> None:
        if batch.ndim != 3 or batch.shape[2] != self.inputs:
            raise ShapeError(f"expected batch of shape (B, L, {self.inputs}), got {batch.shape}")

    def forward(self, batch: np.ndarray, keep: bool = False):
        self._check(batch)
        bsz, steps, _ = batch.shape
        h_dim = self.hidden
        h = np.zeros((bsz, h_dim))
        c = np.zeros((bsz, h_dim))
        cache = []
        for t in range(steps):
            x = batch[:, t, :]
            z = x @ self.w_x.T + h @ self.w_h.T + self.b
            i = _sigmoid(z[:, :h_dim])
            f = _sigmoid(z[:, h_dim:2 * h_dim])
            g = np.tanh(z[:, 2 * h_dim:3 * h_dim])
            o = _sigmoid(z[:, 3 * h_dim:])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            if keep:
                cache.append((x, h_prev, c_prev, i, f, g, o, tc))
        out = h @ self.w_out.T + self.b_out
        return (out, (cache, h)) if keep else out

    def loss_and_grad(self, batch: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean squared error over all outputs and its gradient (flat)."""
        out, (cache, h_last) = self.forward(batch, keep=True)
        if targets.shape != out.shape:
            raise ShapeError(f"targets shape {targets.shape} != predictions {out.shape}")
        diff = out - targets
        loss = float(np.mean(diff * diff))
        d_out = 2.0 * diff / diff.size

        grad = np.zeros_like(self.params)
        g = split_flat(grad, self._shapes())
        g["w_out"][...] = d_out.T @ h_last
        g["b_out"][...] = d_out.sum(axis=0)
        dh = d_out @ self.w_out
        dc = np.zeros_like(dh)
        for x, h_prev, c_prev, i, f, gg, o, tc in reversed(cache):
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * gg
            dg = dc * i
            df = dc * c_prev
            dz = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f),
                                 dg * (1.0 - gg * gg), do * o * (1.0 - o)], axis=1)
            g["w_x"] += dz.T @ x
            g["w_h"] += dz.T @ h_prev
            g["b"] += dz.sum(axis=0)
            dh = dz @ self.w_h
            dc = dc * f
        return loss, grad

    def nbytes(self) -> int:
        return self.params.nbytes


def split_flat(flat: np.ndarray, shapes) -> dict[str, np.ndarray]:
    views = {}
    pos = 0
    for name, shape in shapes:
        n = math.prod(shape)
        views[name] = flat[pos:pos + n].reshape(shape)
        pos += n
    return views


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> AdamState:
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, cfg: TrainConfig) -> None:
    state.step += 1
    state.m *= cfg.beta1
    state.m += (1.0 - cfg.beta1) * grad
    state.v *= cfg.beta2
    state.v += (1.0 - cfg.beta2) * grad * grad
    m_hat = state.m / (1.0 - cfg.beta1 ** state.step)
    v_hat = state.v / (1.0 - cfg.beta2 ** state.step)
    params -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    seconds: float


def train(model: LstmModel, windows: WindowedSet, cfg: TrainConfig,
          adam: AdamState | None = None) -> list[EpochRecord]:
    """Sequential mini-batches, no shuffling; the last partial batch is kept.

    ``train_mse`` is the running mean over the epoch's batches (per sample);
    ``val_mse`` is measured on normalised values after the epoch.
    """
    x_tr, y_tr = windows.train
    x_va, y_va = windows.validation
    if len(x_tr) == 0:
        raise DatasetTooShort("no training windows")
    adam = adam or AdamState.zeros(model.params.size)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        sse = 0.0
        for start in range(0, len(x_tr), cfg.batch_size):
            xb = x_tr[start:start + cfg.batch_size]
            yb = y_tr[start:start + cfg.batch_size]
            loss, grad = model.loss_and_grad(xb, yb)
            if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise DivergenceError(f"non-finite loss in epoch {epoch}")
            sse += loss * yb.size
            adam_step(model.params, grad, adam, cfg)
        train_mse = sse / y_tr.size
        val_mse = float(np.mean((model.forward(x_va) - y_va) ** 2)) if len(x_va) else float("nan")
        history.append(EpochRecord(epoch, train_mse, val_mse, time.perf_counter() - t0))
    return history


# -- metrics ------------------------------------------------------------------


def mse(y: np.ndarray, p: np.ndarray) -> np.ndarray:
    return np.mean((p - y) ** 2, axis=0)


def mae(y: np.ndarray, p: np.ndarray) -> np.ndarray:
    return np.mean(np.abs(p - y), axis=0)


def smape(y: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Percent, in [0, 200]; a term with both values zero counts as zero."""
    num = 2.0 * np.abs(p - y)
    den = np.abs(y) + np.abs(p)
    terms = np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)
    return 100.0 * np.mean(terms, axis=0)


def rmse(y: np.ndarray, p: np.ndarray) -> np.ndarray:
    return np.sqrt(mse(y, p))


METRICS = {"mse": mse, "mae": mae, "smape": smape, "rmse": rmse}


def evaluate(model: LstmModel, inputs: np.ndarray, targets: np.ndarray,
             bounds: np.ndarray, names=COVARIATES) -> dict[str, dict[str, float]]:
    """Per-covariate metrics on denormalised predictions and targets."""
    if len(inputs) == 0:
        raise DatasetTooShort("empty validation set")
    pred = denormalize(model.forward(inputs), bounds)
    true = denormalize(targets, bounds)
    return {name: {m: float(fn(true, pred)[j]) for m, fn in METRICS.items()}
            for j, name in enumerate(names)}
