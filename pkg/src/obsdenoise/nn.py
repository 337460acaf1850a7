"""Small reverse-mode network core: dense and LSTM layers, MSE, SGD/Adam, gradient checks.

Arrays are plain numpy ``ndarray``s. Each layer caches what it needs during
``forward`` and accumulates parameter gradients in ``backward``; a model is a
stack of layers whose ``backward`` runs in reverse order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("linear", "relu", "tanh", "sigmoid")


def sigmoid(x):
    # split on sign to stay finite for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _sigmoid_inplace(x):
    x *= 0.5
    np.tanh(x, out=x)
    x += 1.0
    x *= 0.5


class ShapeError(ValueError):
    pass


class Layer:
    name: str = "layer"

    def params(self) -> list[np.ndarray]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []

    def zero_grad(self) -> None:
        for g in self.grads():
            g[...] = 0.0

    def descriptor(self) -> dict:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, activation: str = "linear", rng=None, dtype=np.float64, name="dense"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.n_in, self.n_out, self.activation, self.name = n_in, n_out, activation, name
        rng = rng if rng is not None else np.random.default_rng(0)
        limit = np.sqrt(6.0 / (n_in + n_out))
        self.W = rng.uniform(-limit, limit, size=(n_in, n_out)).astype(dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = self._y = None

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def descriptor(self):
        return {"type": "dense", "n_in": self.n_in, "n_out": self.n_out, "activation": self.activation}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"{self.name}: expected input (batch, {self.n_in}), got {x.shape}")
        z = x @ self.W + self.b
        if self.activation == "relu":
            y = np.maximum(z, 0.0)
        elif self.activation == "tanh":
            y = np.tanh(z)
        elif self.activation == "sigmoid":
            y = sigmoid(z)
        else:
            y = z
        self._x, self._y = x, y
        return y

    def backward(self, dy):
        y = self._y
        if self.activation == "relu":
            dz = dy * (y > 0)
        elif self.activation == "tanh":
            dz = dy * (1.0 - y * y)
        elif self.activation == "sigmoid":
            dz = dy * y * (1.0 - y)
        else:
            dz = dy
        self.dW += self._x.T @ dz
        self.db += dz.sum(axis=0)
        return dz @ self.W.T


class LSTM(Layer):
    """Standard LSTM over a full sequence; gate column order is input, forget, output, candidate.

    Input (batch, time, n_in) -> hidden states (batch, time, hidden).
    """

    def __init__(self, n_in: int, hidden: int, rng=None, dtype=np.float64, name="lstm"):
        self.n_in, self.hidden, self.name = n_in, hidden, name
        rng = rng if rng is not None else np.random.default_rng(0)
        limit = 1.0 / np.sqrt(hidden)
        self.Wx = rng.uniform(-limit, limit, size=(n_in, 4 * hidden)).astype(dtype)
        self.Wh = rng.uniform(-limit, limit, size=(hidden, 4 * hidden)).astype(dtype)
        self.b = np.zeros(4 * hidden, dtype=dtype)
        self.b[hidden : 2 * hidden] = 1.0  # forget-gate bias
        self.dWx = np.zeros_like(self.Wx)
        self.dWh = np.zeros_like(self.Wh)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return [self.Wx, self.Wh, self.b]

    def grads(self):
        return [self.dWx, self.dWh, self.db]

    def descriptor(self):
        return {"type": "lstm", "n_in": self.n_in, "hidden": self.hidden}

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ShapeError(f"{self.name}: expected input (batch, time, {self.n_in}), got {x.shape}")
        B, T, _ = x.shape
        H = self.hidden
        dtype = self.Wx.dtype
        # time-major buffers keep every per-step slice contiguous
        xt = np.ascontiguousarray(x.transpose(1, 0, 2))
        gates = (xt.reshape(T * B, -1) @ self.Wx).reshape(T, B, 4 * H)
        gates += self.b
        hs = np.zeros((T + 1, B, H), dtype=dtype)
        cs = np.zeros((T + 1, B, H), dtype=dtype)
        tanh_c = np.empty((T, B, H), dtype=dtype)
        for t in range(T):
            g = gates[t]
            g += hs[t] @ self.Wh
            _sigmoid_inplace(g[:, : 3 * H])
            np.tanh(g[:, 3 * H :], out=g[:, 3 * H :])
            c = cs[t + 1]
            np.multiply(g[:, H : 2 * H], cs[t], out=c)
            c += g[:, :H] * g[:, 3 * H :]
            np.tanh(c, out=tanh_c[t])
            np.multiply(g[:, 2 * H : 3 * H], tanh_c[t], out=hs[t + 1])
        self._cache = (xt, hs, cs, gates, tanh_c)
        return hs[1:].transpose(1, 0, 2)

    def backward(self, dhs):
        xt, hs, cs, gates, tanh_c = self._cache
        T, B, _ = xt.shape
        H = self.hidden
        dhs_t = dhs.transpose(1, 0, 2)
        dz_all = np.empty_like(gates)
        dh_next = np.zeros((B, H), dtype=hs.dtype)
        dc_next = np.zeros_like(dh_next)
        for t in reversed(range(T)):
            g = gates[t]
            i, f, o, cand = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
            tc = tanh_c[t]
            dz = dz_all[t]
            dh = dh_next
            dh += dhs_t[t]
            do = dz[:, 2 * H : 3 * H]
            np.multiply(dh, tc, out=do)
            do *= o * (1.0 - o)
            dh *= o
            dc = 1.0 - tc * tc
            dc *= dh
            dc += dc_next
            di = dz[:, :H]
            np.multiply(dc, cand, out=di)
            di *= i * (1.0 - i)
            df = dz[:, H : 2 * H]
            np.multiply(dc, cs[t], out=df)
            df *= f * (1.0 - f)
            dg = dz[:, 3 * H :]
            np.multiply(dc, i, out=dg)
            dg *= 1.0 - cand * cand
            dc *= f
            dc_next = dc
            dh_next = dz @ self.Wh.T
        flat = dz_all.reshape(T * B, 4 * H)
        self.dWh += hs[:T].reshape(T * B, H).T @ flat
        self.dWx += xt.reshape(T * B, -1).T @ flat
        self.db += flat.sum(axis=0)
        return (flat @ self.Wx.T).reshape(T, B, -1).transpose(1, 0, 2)


class LastStep(Layer):
    """(batch, time, features) -> (batch, features) at the final time step."""

    name = "last_step"

    def descriptor(self):
        return {"type": "last_step"}

    def forward(self, x):
        if x.ndim != 3:
            raise ShapeError(f"{self.name}: expected a sequence input, got {x.shape}")
        self._shape = x.shape
        return x[:, -1]

    def backward(self, dy):
        dx = np.zeros(self._shape, dtype=dy.dtype)
        dx[:, -1] = dy
        return dx


class Flatten(Layer):
    name = "flatten"

    def descriptor(self):
        return {"type": "flatten"}

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Model:
    def __init__(self, layers: list[Layer], meta: dict | None = None):
        self.layers = layers
        self.meta = dict(meta or {})

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads()]

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def descriptor(self) -> dict:
        return {"layers": [layer.descriptor() for layer in self.layers], "meta": self.meta}

    def copy_params(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params()]

    def set_params(self, values) -> None:
        for p, v in zip(self.params(), values):
            p[...] = v


def mse(pred, target):
    return float(np.mean((pred - target) ** 2))


def loss_and_grad(model: Model, x, y) -> tuple[float, list[np.ndarray]]:
    """MSE over batch and output dims, and the gradient of every parameter.

    The returned gradients are the model's own gradient buffers.
    """
    if len(x) == 0:
        raise ValueError("empty batch")
    if len(x) != len(y):
        raise ShapeError(f"batch size mismatch: {len(x)} inputs, {len(y)} targets")
    model.zero_grad()
    pred = model.forward(x)
    if pred.shape != y.shape:
        raise ShapeError(f"output shape {pred.shape} does not match target {y.shape}")
    diff = pred - y
    model.backward(2.0 * diff / diff.size)
    return float(np.mean(diff * diff)), model.grads()


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    loss: str = "mse"
    dtype: str = "float64"

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss != "mse":
            raise ValueError("only the mse loss is supported")
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("learning_rate and batch_size must be positive, epochs >= 0")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params, grads):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    return Adam(cfg.learning_rate) if cfg.optimizer == "adam" else SGD(cfg.learning_rate)


def optimizer_step(params, grads, cfg: TrainConfig, state=None):
    """Functional wrapper: applies one update in place and returns the optimizer state."""
    state = state if state is not None else make_optimizer(cfg)
    state.step(params, grads)
    return params, state


# --- gradient verification ----------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    rel_errors: list[np.ndarray]
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(model: Model, x, y, eps: float = 1e-4, tol: float = 1e-4, grads=None, floor: float = 1e-8):
    """Compare analytic gradients with central differences for every parameter.

    ``grads`` overrides the analytic gradients (used for negative controls).
    Relative error is |a - n| / max(|a|, |n|, floor).
    """
    if grads is None:
        _, grads = loss_and_grad(model, x, y)
        grads = [g.copy() for g in grads]
    errors = []
    for p, g in zip(model.params(), grads):
        numeric = np.empty_like(p)
        flat, nflat = p.reshape(-1), numeric.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = mse(model.forward(x), y)
            flat[k] = orig - eps
            down = mse(model.forward(x), y)
            flat[k] = orig
            nflat[k] = (up - down) / (2 * eps)
        denom = np.maximum(np.maximum(np.abs(g), np.abs(numeric)), floor)
        errors.append(np.abs(g - numeric) / denom)
    worst = max((float(e.max()) for e in errors if e.size), default=0.0)
    return GradCheckReport(worst, errors, tol)


# --- checkpoints ------------------------------------------------------------

MAGIC = b"OBSDNNCK"
VERSION = 1


def build_from_descriptor(desc: dict, dtype=np.float64) -> Model:
    layers: list[Layer] = []
    for k, d in enumerate(desc["layers"]):
        kind = d["type"]
        if kind == "dense":
            layers.append(Dense(d["n_in"], d["n_out"], d["activation"], dtype=dtype, name=f"dense_{k}"))
        elif kind == "lstm":
            layers.append(LSTM(d["n_in"], d["hidden"], dtype=dtype, name=f"lstm_{k}"))
        elif kind == "last_step":
            layers.append(LastStep())
        elif kind == "flatten":
            layers.append(Flatten())
        else:
            raise ValueError(f"unknown layer type {kind!r} in checkpoint")
    return Model(layers, desc.get("meta"))


def save_checkpoint(model: Model, path: str | Path) -> None:
    """Header (magic, version, JSON architecture) then little-endian float64 parameters."""
    desc = json.dumps(model.descriptor(), sort_keys=True, separators=(",", ":")).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(desc)))
        fh.write(desc)
        for p in model.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Model:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    offset = len(MAGIC)
    version, n = struct.unpack_from("<II", raw, offset)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset += 8
    desc = json.loads(raw[offset : offset + n])
    offset += n
    model = build_from_descriptor(desc)
    for p in model.params():
        count = p.size
        p[...] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(p.shape)
        offset += 8 * count
    if offset != len(raw):
        raise ValueError(f"{path}: checkpoint size does not match its architecture")
    return model
