"""Aggregate demand forecasting from a sliding window of recent load."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _layers
from .numgrad import Adam, GradientTape, Tensor, backward, mse

MAX_BACKTRACK = 8


@dataclass
class ForecastConfig:
    window: int = 16
    horizon: int = 4
    hidden_sizes: list = field(default_factory=lambda: [32])
    learning_rate: float = 1e-3
    epochs: int = 400
    normalization: str = "max-scale"  # none | max-scale
    seed: int = 0

    def __post_init__(self):
        if self.window < 1 or self.horizon < 1:
            raise ValueError("window and horizon must be >= 1")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        if self.normalization not in ("none", "max-scale"):
            raise ValueError(f"unknown normalization {self.normalization!r}")

    @property
    def sizes(self) -> list[int]:
        return [self.window, *self.hidden_sizes, self.horizon]


@dataclass
class LoadSeries:
    times: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)
        if self.times.shape != self.rates.shape:
            raise ValueError("times and rates differ in length")
        if len(self.times) > 1:
            steps = np.diff(self.times)
            if np.any(steps <= 0) or not np.allclose(steps, steps[0]):
                raise ValueError("sample times must be strictly increasing with constant spacing")
        if np.any(self.rates < 0):
            raise ValueError("rates must be >= 0")

    @classmethod
    def from_rates(cls, rates: Sequence[float], interval: float = 1.0) -> LoadSeries:
        rates = np.asarray(rates, dtype=float)
        return cls(interval * np.arange(1, len(rates) + 1), rates)

    def __len__(self) -> int:
        return len(self.rates)


def make_windows(values: np.ndarray, window: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    n = len(values) - window - horizon + 1
    if n < 1:
        return np.empty((0, window)), np.empty((0, horizon))
    idx = np.arange(n)[:, None]
    x = values[idx + np.arange(window)]
    y = values[idx + window + np.arange(horizon)]
    return x, y


class FeedforwardForecaster:
    """Window of ``W`` rates in, ``T`` rates out; outputs clamped at zero."""

    def __init__(self, cfg: ForecastConfig, params: dict, scale: float = 1.0):
        self.cfg = cfg
        self.params = params
        self.scale = scale
        self.losses: list[float] = []

    @classmethod
    def zeros(cls, cfg: ForecastConfig) -> FeedforwardForecaster:
        return cls(cfg, _layers.init_mlp("ff", cfg.sizes, None))

    @property
    def n_layers(self) -> int:
        return len(self.cfg.sizes) - 1

    def _forward(self, p, x: Tensor) -> Tensor:
        return _layers.mlp(p, "ff", x, self.n_layers, activation="relu")

    def predict_batch(self, windows: np.ndarray) -> np.ndarray:
        x = Tensor(np.asarray(windows, dtype=float) / self.scale)
        out = self._forward(_layers.as_constants(self.params), x).data * self.scale
        return np.maximum(out, 0.0)

    def predict_horizon(self, recent: Sequence[float]) -> np.ndarray:
        recent = np.asarray(recent, dtype=float)
        if recent.shape != (self.cfg.window,):
            raise ValueError(f"expected exactly {self.cfg.window} samples, got {recent.shape}")
        return self.predict_batch(recent[None, :])[0]

    def to_json(self) -> dict:
        return {
            "kind": "feedforward",
            "config": asdict(self.cfg),
            "scale": self.scale,
            "params": _layers.params_to_json(self.params),
        }

    @classmethod
    def from_json(cls, obj: dict) -> FeedforwardForecaster:
        return cls(ForecastConfig(**obj["config"]), _layers.params_from_json(obj["params"]), obj["scale"])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> FeedforwardForecaster:
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def fit_forecaster(series: LoadSeries, cfg: ForecastConfig) -> FeedforwardForecaster:
    """Full-batch Adam on mean squared error over all sliding windows.

    Each Adam step is halved until it no longer raises the training loss
    (up to ``MAX_BACKTRACK`` times), so ``model.losses`` never increases.
    """
    need = cfg.window + cfg.horizon + 1
    if len(series) < need:
        raise ValueError(
            f"series has {len(series)} samples; window {cfg.window} + horizon {cfg.horizon} needs >= {need}"
        )
    values = series.rates
    scale = 1.0
    if cfg.normalization == "max-scale" and values.max() > 0:
        scale = float(values.max())
    x, y = make_windows(values / scale, cfg.window, cfg.horizon)

    rng = np.random.default_rng(cfg.seed)
    # zero output weights plus a mean bias: training starts from the
    # per-step mean predictor, which is exact on a constant series
    params = _layers.init_mlp("ff", cfg.sizes, rng, out_scale=0.0)
    params[f"ff.b{len(cfg.sizes) - 2}"][:] = y.mean(axis=0)
    model = FeedforwardForecaster(cfg, params, scale)
    opt = Adam(cfg.learning_rate)
    xt, yt = Tensor(x), Tensor(y)

    def full_loss(ps) -> float:
        return mse(model._forward(_layers.as_constants(ps), xt), yt).item()

    for _ in range(cfg.epochs):
        tape = GradientTape()
        p = _layers.watch_all(tape, params)
        loss = mse(model._forward(p, xt), yt)
        grads = backward(loss, tape)
        current = loss.item()
        model.losses.append(current)
        trial = {k: v.copy() for k, v in params.items()}
        opt.step(trial, {k: grads[t].data for k, t in p.items()})
        step = {k: trial[k] - params[k] for k in params}
        # backtrack so an accepted step never raises the training loss
        frac = 1.0
        for _ in range(MAX_BACKTRACK):
            cand = {k: params[k] + frac * step[k] for k in params}
            if full_loss(cand) <= current:
                params.update(cand)
                break
            frac *= 0.5
    model.losses.append(full_loss(params))
    return model


def predict_horizon(model: FeedforwardForecaster, recent: Sequence[float]) -> np.ndarray:
    return model.predict_horizon(recent)


def moving_average_baseline(recent: Sequence[float], horizon: int) -> np.ndarray:
    recent = np.asarray(recent, dtype=float)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if recent.size == 0:
        raise ValueError("moving average needs at least one sample")
    return np.full(horizon, recent.mean())


class MovingAverageForecaster:
    """Fallback predictor with the same interface as the trained model."""

    def __init__(self, window: int = 16, horizon: int = 4):
        self.cfg = ForecastConfig(window=window, horizon=horizon)

    def predict_horizon(self, recent: Sequence[float]) -> np.ndarray:
        return moving_average_baseline(recent, self.cfg.horizon)

    def to_json(self) -> dict:
        return {"kind": "moving-average", "window": self.cfg.window, "horizon": self.cfg.horizon}


def load_model(path):
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("kind") == "moving-average":
        return MovingAverageForecaster(obj["window"], obj["horizon"])
    return FeedforwardForecaster.from_json(obj)
