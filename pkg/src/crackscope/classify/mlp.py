"""Fully connected ReLU network with softmax output, trained by SGD with momentum.

Class index 0 is P and index 1 is N throughout. The loss of a batch is the
summed cross entropy ``-sum_o sum_c y(o,c) log p(o,c)``; the optimiser steps
along the gradient of the batch mean.
"""

from __future__ import annotations

import math
import struct
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from ..raster import Raster, to_grayscale
from ..rng import SplitMix64, sub_seed
from .base import N_INDEX, P_INDEX, Prediction, softmax

LOG_FLOOR = 1e-12
MODEL_MAGIC = b"CSM1"


class TrainingError(RuntimeError):
    pass


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # layer l maps (in_l,) -> (out_l,) via x @ W + b
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i}: input {w.shape[0]} != previous output")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "MlpModel":
        return cls(
            [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
            [np.zeros(b) for b in sizes[1:]],
        )

    @classmethod
    def glorot(cls, sizes: Sequence[int], seed: int) -> "MlpModel":
        """Weights ~ U(-sqrt(6/(fan_in+fan_out)), +...), zero biases."""
        rng = SplitMix64(seed)
        ws = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / (a + b))
            ws.append((rng.uniform_array(a * b).reshape(a, b) * 2.0 - 1.0) * bound)
        return cls(ws, [np.zeros(b) for b in sizes[1:]])

    def __eq__(self, other):
        if not isinstance(other, MlpModel) or len(self.weights) != len(other.weights):
            return False
        return all(
            np.array_equal(a, b) for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )


def sfnn_sizes(window: int = 227, channels: int = 1, hidden: int = 128) -> list[int]:
    return [window * window * channels, hidden, hidden, 2]


def forward(model: MlpModel, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Return (probabilities, activations) for a batch ``x`` of shape (B, d_in)."""
    acts = [x]
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        h = softmax(z) if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return h, acts


def one_hot(y: np.ndarray, n_classes: int = 2) -> np.ndarray:
    out = np.zeros((len(y), n_classes))
    out[np.arange(len(y)), np.asarray(y, dtype=int)] = 1.0
    return out


def cross_entropy(probs: np.ndarray, y: np.ndarray) -> float:
    """Summed cross entropy with log clamped at p >= 1e-12."""
    p = np.asarray(probs)[np.arange(len(y)), np.asarray(y, dtype=int)]
    return float(-np.log(np.maximum(p, LOG_FLOOR)).sum())


def loss_and_gradients(model: MlpModel, x: np.ndarray, y: np.ndarray):
    """Summed loss and its gradients w.r.t. every weight and bias (backprop)."""
    probs, acts = forward(model, x)
    loss = cross_entropy(probs, y)
    delta = probs - one_hot(y, probs.shape[1])
    gw = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    return loss, gw, gb


def gradient_check(model: MlpModel, x: np.ndarray, y: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences.

    Relative error per parameter is |gA - gN| / max(1e-8, |gA| + |gN|).
    """
    _, gw, gb = loss_and_gradients(model, x, y)
    worst = 0.0
    m = model.copy()
    for params, grads in ((m.weights, gw), (m.biases, gb)):
        for arr, g in zip(params, grads):
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                lp = cross_entropy(forward(m, x)[0], y)
                flat[j] = orig - h
                lm = cross_entropy(forward(m, x)[0], y)
                flat[j] = orig
                gn = (lp - lm) / (2 * h)
                ga = gflat[j]
                worst = max(worst, abs(ga - gn) / max(1e-8, abs(ga) + abs(gn)))
    return worst


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    pixel_scale: float = 1.0 / 255.0
    val_every: int | None = None  # extra validation checkpoints every N iterations
    center_inputs: bool = True  # train on mean-subtracted inputs, folded back into the first bias

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.pixel_scale <= 0:
            raise ValueError("pixel_scale must be positive")


@dataclass
class TrainTrace:
    loss: list[float] = field(default_factory=list)  # batch-mean loss per iteration
    val_accuracy: list[float] = field(default_factory=list)  # one per epoch
    checkpoints: list[tuple[int, float]] = field(default_factory=list)  # (iteration, val acc)
    iterations_per_epoch: int = 0


def predicted_classes(probs: np.ndarray) -> np.ndarray:
    return np.where(probs[:, P_INDEX] >= probs[:, N_INDEX], P_INDEX, N_INDEX)


def accuracy(model: MlpModel, x: np.ndarray, y: np.ndarray, batch: int = 256) -> float:
    if len(y) == 0:
        return float("nan")
    hits = 0
    for s in range(0, len(y), batch):
        probs, _ = forward(model, x[s : s + batch])
        hits += int((predicted_classes(probs) == y[s : s + batch]).sum())
    return hits / len(y)


def fit(
    model: MlpModel,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    x_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
    transform: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[MlpModel, TrainTrace]:
    """Mini-batch SGD with momentum on the rows of ``x``.

    ``transform`` maps a raw row block to network input (used to keep uint8
    pixel matrices in memory and scale per batch). With ``cfg.center_inputs``
    the optimiser sees inputs minus their training-set mean; the shift is
    folded into the first-layer bias so the returned model takes the
    uncentred inputs and computes the same function.
    """
    if len(y) == 0:
        raise TrainingError("empty training set")
    if x.shape[1] != model.layer_sizes[0]:
        raise TrainingError(f"input width {x.shape[1]} != model input {model.layer_sizes[0]}")
    tf = transform or (lambda a: np.asarray(a, dtype=np.float64))
    y = np.asarray(y, dtype=int)
    if y_val is not None:
        y_val = np.asarray(y_val, dtype=int)
    model = model.copy()
    mu = _column_mean(x, tf) if cfg.center_inputs else np.zeros(x.shape[1])
    model.biases[0] += mu @ model.weights[0]
    raw_tf = tf

    def tf(a):
        with np.errstate(invalid="ignore"):  # non-finite inputs surface as a loss error
            return raw_tf(a) - mu

    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    trace = TrainTrace()
    n = len(y)
    trace.iterations_per_epoch = math.ceil(n / cfg.batch_size)

    def val_acc():
        if x_val is None or len(y_val) == 0:
            return float("nan")
        hits = 0
        for s in range(0, len(y_val), 256):
            probs, _ = forward(model, tf(x_val[s : s + 256]))
            hits += int((predicted_classes(probs) == y_val[s : s + 256]).sum())
        return hits / len(y_val)

    it = 0
    for epoch in range(cfg.epochs):
        order = SplitMix64(sub_seed(cfg.seed, 1, epoch)).permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = np.sort(order[s : s + cfg.batch_size])
            if len(idx) == 0:
                raise TrainingError("empty batch")
            xb = tf(x[idx])
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gw, gb = loss_and_gradients(model, xb, y[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at iteration {it}")
            scale = cfg.learning_rate / len(idx)
            for i in range(len(model.weights)):
                vel_w[i] *= cfg.momentum
                vel_w[i] -= scale * gw[i]
                model.weights[i] += vel_w[i]
                vel_b[i] *= cfg.momentum
                vel_b[i] -= scale * gb[i]
                model.biases[i] += vel_b[i]
            trace.loss.append(loss / len(idx))
            it += 1
            if cfg.val_every and it % cfg.val_every == 0:
                trace.checkpoints.append((it, val_acc()))
        trace.val_accuracy.append(val_acc())
    model.biases[0] -= mu @ model.weights[0]
    return model, trace


def _column_mean(x: np.ndarray, tf, block: int = 256) -> np.ndarray:
    total = np.zeros(x.shape[1])
    for s in range(0, len(x), block):
        total += tf(x[s : s + block]).sum(axis=0)
    return total / len(x)


# -- tiles <-> vectors ---------------------------------------------------------


def tile_vector(tile: Raster, grayscale: bool) -> np.ndarray:
    img = to_grayscale(tile) if grayscale else tile
    return img.pixels.reshape(-1)


def manifest_matrix(manifest, grayscale: bool) -> tuple[np.ndarray, np.ndarray]:
    """uint8 design matrix (one flattened tile per row) and class indices."""
    rows = [tile_vector(manifest.load_tile(i), grayscale) for i in range(len(manifest))]
    if not rows:
        raise TrainingError("empty manifest")
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise TrainingError("tiles differ in size or channel count")
    y = np.array([P_INDEX if r.label == "P" else N_INDEX for r in manifest.records])
    return np.stack(rows), y


def mlp_train(train, val, cfg: TrainConfig, template: MlpModel | Sequence[int], grayscale: bool = True):
    """Train an SFNN on two manifests.

    ``template`` is either a model (its weights are the starting point) or a
    list of layer sizes, in which case Glorot initialisation from ``cfg.seed``
    is used.
    """
    x, y = manifest_matrix(train, grayscale)
    xv, yv = manifest_matrix(val, grayscale) if len(val) else (None, None)
    if isinstance(template, MlpModel):
        model = template
    else:
        model = MlpModel.glorot(template, sub_seed(cfg.seed, 0))
    if x.shape[1] != model.layer_sizes[0]:
        raise TrainingError(
            f"tiles give {x.shape[1]} inputs but model expects {model.layer_sizes[0]}"
        )
    scale = cfg.pixel_scale
    return fit(model, x, y, cfg, xv, yv, transform=lambda a: a.astype(np.float64) * scale)


def train_head(features, labels, cfg: TrainConfig, hidden: int = 128):
    """Train a featureDim -> hidden -> hidden -> 2 head on frozen backbone features.

    ``features`` is an (n, d) float array; ``labels`` are 'P'/'N' strings or
    class indices. Feature vectors are used as-is (no pixel scaling).
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.array([_label_index(v) for v in labels])
    model = MlpModel.glorot([x.shape[1], hidden, hidden, 2], sub_seed(cfg.seed, 0))
    trained, _ = fit(model, x, y, cfg)
    return trained


def _label_index(v) -> int:
    if v in ("P", P_INDEX):
        return P_INDEX
    if v in ("N", N_INDEX):
        return N_INDEX
    raise ValueError(f"bad label {v!r}")


class MlpClassifier:
    def __init__(self, model: MlpModel, grayscale: bool = True, pixel_scale: float = 1.0 / 255.0):
        self.model = model
        self.grayscale = grayscale
        self.pixel_scale = pixel_scale

    def __call__(self, tile: Raster) -> Prediction:
        return mlp_predict(self.model, tile, self.grayscale, self.pixel_scale)


def mlp_predict(model: MlpModel, tile: Raster, grayscale: bool = True, pixel_scale: float = 1.0 / 255.0) -> Prediction:
    v = tile_vector(tile, grayscale)
    if v.size != model.layer_sizes[0]:
        raise ValueError(f"tile gives {v.size} inputs, model expects {model.layer_sizes[0]}")
    probs, _ = forward(model, v[None, :].astype(np.float64) * pixel_scale)
    return Prediction.from_probs(probs[0])


# -- persistence ---------------------------------------------------------------
# "CSM1", u32 layer count, then per layer: u32 in, u32 out, f64 LE weights
# (in, out) row-major, f64 LE biases.


def encode_mlp(model: MlpModel) -> bytes:
    parts = [MODEL_MAGIC, struct.pack("<I", len(model.weights))]
    for w, b in zip(model.weights, model.biases):
        parts.append(struct.pack("<II", *w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_mlp(data: bytes) -> MlpModel:
    if data[:4] != MODEL_MAGIC:
        raise ValueError("not a CSM1 model file")
    pos = 4
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    ws, bs = [], []
    for _ in range(n):
        if pos + 8 > len(data):
            raise ValueError("truncated model file")
        a, b = struct.unpack_from("<II", data, pos)
        pos += 8
        need = 8 * (a * b + b)
        if pos + need > len(data):
            raise ValueError(f"truncated model file: need {need} bytes at {pos}, have {len(data) - pos}")
        ws.append(np.frombuffer(data, "<f8", a * b, pos).reshape(a, b).astype(np.float64))
        pos += 8 * a * b
        bs.append(np.frombuffer(data, "<f8", b, pos).astype(np.float64))
        pos += 8 * b
    if pos != len(data):
        raise ValueError("trailing bytes in model file")
    return MlpModel(ws, bs)


def save_mlp(model: MlpModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_mlp(model))


def load_mlp(path) -> MlpModel:
    with open(path, "rb") as fh:
        return decode_mlp(fh.read())
