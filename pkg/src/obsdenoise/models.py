"""DNN and LSTM position denoisers over five-cycle feature windows."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .dataset import N_FEATURES, Windows, denormalize_position
from .world import Vec2

log = logging.getLogger(__name__)

DEFAULT_LAYERS = {"dnn": (512, 256, 128, 64, 32), "lstm": (512, 256)}
DEFAULT_HEAD = (32,)


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "lstm"
    layers: tuple[int, ...] = ()
    head: tuple[int, ...] = DEFAULT_HEAD
    window: int = 5
    n_features: int = N_FEATURES
    output_dim: int = 2

    def __post_init__(self):
        if self.kind not in DEFAULT_LAYERS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not self.layers:
            object.__setattr__(self, "layers", DEFAULT_LAYERS[self.kind])
        object.__setattr__(self, "layers", tuple(int(n) for n in self.layers))
        object.__setattr__(self, "head", tuple(int(n) for n in self.head))
        if any(n <= 0 for n in self.layers + self.head):
            raise ValueError("layer sizes must be positive")


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float64) -> nn.Model:
    """DNN: flatten -> ReLU dense stack -> linear output.
    LSTM: stacked LSTMs -> last step -> ReLU dense head -> linear output."""
    rng = np.random.default_rng(seed)
    layers: list[nn.Layer] = []
    if spec.kind == "dnn":
        layers.append(nn.Flatten())
        width = spec.window * spec.n_features
        hidden = spec.layers
    else:
        width = spec.n_features
        for k, h in enumerate(spec.layers):
            layers.append(nn.LSTM(width, h, rng=rng, dtype=dtype, name=f"lstm_{k}"))
            width = h
        layers.append(nn.LastStep())
        hidden = spec.head
    for k, h in enumerate(hidden):
        layers.append(nn.Dense(width, h, "relu", rng=rng, dtype=dtype, name=f"dense_{k}"))
        width = h
    layers.append(nn.Dense(width, spec.output_dim, "linear", rng=rng, dtype=dtype, name="output"))
    meta = {"kind": spec.kind, "layers": list(spec.layers), "head": list(spec.head), "window": spec.window}
    return nn.Model(layers, meta)


def predict_normalized(model: nn.Model, x, chunk: int = 8192) -> np.ndarray:
    x = np.asarray(x)
    if len(x) == 0:
        return np.zeros((0, 2))
    return np.concatenate([model.forward(x[i : i + chunk]) for i in range(0, len(x), chunk)])


def predict(model: nn.Model, x) -> np.ndarray:
    """Denormalized (meters) predictions for a batch of windows (N, window, 10)."""
    return denormalize_position(predict_normalized(model, x))


def predict_one(model: nn.Model, sample) -> Vec2:
    out = predict(model, np.asarray(sample)[None])[0]
    return Vec2(float(out[0]), float(out[1]))


@dataclass
class TrainResult:
    model: nn.Model
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]


def train_model(
    spec: ModelSpec,
    train: Windows | tuple,
    val: Windows | tuple,
    cfg: nn.TrainConfig = nn.TrainConfig(),
) -> TrainResult:
    """Mini-batch training; keeps the parameters with the lowest validation loss.

    ``val_loss[0]`` is the untrained model's loss, so ``best_epoch`` 0 means no
    epoch improved on initialization.
    """
    x, y = (train.x, train.y) if isinstance(train, Windows) else train
    vx, vy = (val.x, val.y) if isinstance(val, Windows) else val
    if len(x) == 0 or len(vx) == 0:
        raise ValueError("training and validation sets must be non-empty")
    dtype = np.dtype(cfg.dtype)
    x, y, vx, vy = (np.asarray(a, dtype=dtype) for a in (x, y, vx, vy))
    model = build_model(spec, cfg.seed, dtype)
    optimizer = nn.make_optimizer(cfg)
    rng = np.random.default_rng([cfg.seed, 1])

    def val_loss() -> float:
        return nn.mse(predict_normalized(model, vx), vy)

    result = TrainResult(model, [float("nan")], [val_loss()], 0)
    best = model.copy_params()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = nn.loss_and_grad(model, x[idx], y[idx])
            optimizer.step(model.params(), grads)
            total += loss * len(idx)
        result.train_loss.append(total / len(x))
        result.val_loss.append(val_loss())
        if result.val_loss[-1] < result.val_loss[result.best_epoch]:
            result.best_epoch = epoch
            best = model.copy_params()
        log.info("%s epoch %d train %.6f val %.6f", spec.kind, epoch, result.train_loss[-1], result.val_loss[-1])
    model.set_params(best)
    return result


def rmse(pred, truth) -> float:
    """Root mean squared Euclidean position error."""
    d = np.asarray(pred, dtype=float) - np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1)))) if len(d) else float("nan")
