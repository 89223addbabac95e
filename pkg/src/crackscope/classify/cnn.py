"""Forward-only convolutional network interpreter with a small binary weight format.

Tensors flow as float64 arrays shaped (channels, height, width); after
GlobalAvgPool or Dense they become vectors. Weights are stored as binary32
on disk and promoted to float64 on load.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..raster import Raster, bilinear_resize_float, quantize, replicate3, to_grayscale
from ..rng import SplitMix64
from .base import Prediction, softmax

WEIGHTS_MAGIC = b"CSW1"
TOPOLOGY_FORMAT = "crackscope-cnn"
TOPOLOGY_VERSION = 1


class GraphError(ValueError):
    pass


@dataclass
class Conv2D:
    out_ch: int
    kh: int
    kw: int
    stride_h: int = 1
    stride_w: int = 1
    pad_h: int = 0
    pad_w: int = 0
    weights: np.ndarray | None = field(default=None, repr=False)  # (out, in, kh, kw)
    bias: np.ndarray | None = field(default=None, repr=False)


@dataclass
class BatchNorm:
    gamma: np.ndarray | None = field(default=None, repr=False)
    beta: np.ndarray | None = field(default=None, repr=False)
    mean: np.ndarray | None = field(default=None, repr=False)
    var: np.ndarray | None = field(default=None, repr=False)
    eps: float = 1e-5


@dataclass
class ReLU:
    pass


@dataclass
class MaxPool:
    k: int
    stride: int


@dataclass
class GlobalAvgPool:
    pass


@dataclass
class ResidualAdd:
    from_layer: int


@dataclass
class Dense:
    out: int
    weights: np.ndarray | None = field(default=None, repr=False)  # (out, in)
    bias: np.ndarray | None = field(default=None, repr=False)


@dataclass
class Softmax:
    pass


Layer = Union[Conv2D, BatchNorm, ReLU, MaxPool, GlobalAvgPool, ResidualAdd, Dense, Softmax]


@dataclass
class CnnGraph:
    layers: list
    input_shape: tuple[int, int, int] = (3, 227, 227)  # (channels, height, width)
    input_scale: float = 1.0 / 255.0


# -- shape propagation ---------------------------------------------------------


def _param_shapes(layer, in_shape) -> list[tuple[int, ...]]:
    if isinstance(layer, Conv2D):
        return [(layer.out_ch, in_shape[0], layer.kh, layer.kw), (layer.out_ch,)]
    if isinstance(layer, BatchNorm):
        c = in_shape[0]
        return [(c,), (c,), (c,), (c,)]
    if isinstance(layer, Dense):
        return [(layer.out, int(np.prod(in_shape))), (layer.out,)]
    return []


def _param_names(layer) -> list[str]:
    if isinstance(layer, (Conv2D, Dense)):
        return ["weights", "bias"]
    if isinstance(layer, BatchNorm):
        return ["gamma", "beta", "mean", "var"]
    return []


def infer_shapes(graph: CnnGraph, check_params: bool = True) -> list[tuple[int, ...]]:
    """Output shape of every layer; raises GraphError naming the layer at fault."""
    shapes: list[tuple[int, ...]] = []
    cur: tuple[int, ...] = tuple(graph.input_shape)
    for i, layer in enumerate(graph.layers):
        if isinstance(layer, Conv2D):
            if len(cur) != 3:
                raise GraphError(f"layer {i} (Conv2D): expected (C,H,W) input, got {cur}")
            c, h, w = cur
            oh = (h + 2 * layer.pad_h - layer.kh) // layer.stride_h + 1
            ow = (w + 2 * layer.pad_w - layer.kw) // layer.stride_w + 1
            if min(layer.kh, layer.kw, layer.stride_h, layer.stride_w, layer.out_ch) < 1 or oh < 1 or ow < 1:
                raise GraphError(f"layer {i} (Conv2D): kernel does not fit input {cur}")
            out = (layer.out_ch, oh, ow)
        elif isinstance(layer, MaxPool):
            if len(cur) != 3:
                raise GraphError(f"layer {i} (MaxPool): expected (C,H,W) input, got {cur}")
            c, h, w = cur
            if layer.k < 1 or layer.stride < 1 or h < layer.k or w < layer.k:
                raise GraphError(f"layer {i} (MaxPool): window {layer.k} does not fit {cur}")
            out = (c, (h - layer.k) // layer.stride + 1, (w - layer.k) // layer.stride + 1)
        elif isinstance(layer, GlobalAvgPool):
            if len(cur) != 3:
                raise GraphError(f"layer {i} (GlobalAvgPool): expected (C,H,W) input, got {cur}")
            out = (cur[0],)
        elif isinstance(layer, Dense):
            out = (layer.out,)
        elif isinstance(layer, ResidualAdd):
            j = layer.from_layer
            if not 0 <= j < i:
                raise GraphError(f"layer {i} (ResidualAdd): source {j} is not an earlier layer")
            if shapes[j] != cur:
                raise GraphError(
                    f"layer {i} (ResidualAdd): source shape {shapes[j]} != current shape {cur}"
                )
            out = cur
        elif isinstance(layer, Softmax):
            if len(cur) != 1:
                raise GraphError(f"layer {i} (Softmax): expected a vector, got {cur}")
            out = cur
        elif isinstance(layer, (ReLU, BatchNorm)):
            out = cur
        else:
            raise GraphError(f"layer {i}: unknown layer type {type(layer).__name__}")
        if check_params:
            for name, shape in zip(_param_names(layer), _param_shapes(layer, cur)):
                arr = getattr(layer, name)
                if arr is None:
                    raise GraphError(f"layer {i} ({type(layer).__name__}): {name} not loaded")
                if tuple(arr.shape) != shape:
                    raise GraphError(
                        f"layer {i} ({type(layer).__name__}): {name} has shape "
                        f"{tuple(arr.shape)}, input {cur} requires {shape}"
                    )
        shapes.append(out)
        cur = out
    return shapes


# -- evaluation ----------------------------------------------------------------


def conv2d(x: np.ndarray, layer: Conv2D) -> np.ndarray:
    """Direct cross-correlation with zero padding."""
    xp = np.pad(x, ((0, 0), (layer.pad_h, layer.pad_h), (layer.pad_w, layer.pad_w)))
    win = sliding_window_view(xp, (layer.kh, layer.kw), axis=(1, 2))
    win = win[:, :: layer.stride_h, :: layer.stride_w]
    out = np.tensordot(layer.weights, win, axes=([1, 2, 3], [0, 3, 4]))
    return out + layer.bias[:, None, None]


def maxpool(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    return win.max(axis=(3, 4))


def _apply(layer, x: np.ndarray, acts: list[np.ndarray]) -> np.ndarray:
    if isinstance(layer, Conv2D):
        return conv2d(x, layer)
    if isinstance(layer, BatchNorm):
        shape = (-1,) + (1,) * (x.ndim - 1)
        scale = layer.gamma / np.sqrt(layer.var + layer.eps)
        return (x - layer.mean.reshape(shape)) * scale.reshape(shape) + layer.beta.reshape(shape)
    if isinstance(layer, ReLU):
        return np.maximum(x, 0.0)
    if isinstance(layer, MaxPool):
        return maxpool(x, layer.k, layer.stride)
    if isinstance(layer, GlobalAvgPool):
        return x.mean(axis=(1, 2))
    if isinstance(layer, ResidualAdd):
        return x + acts[layer.from_layer]
    if isinstance(layer, Dense):
        return layer.weights @ x.reshape(-1) + layer.bias
    if isinstance(layer, Softmax):
        return softmax(x)
    raise GraphError(f"unknown layer {layer!r}")


def input_tensor(graph: CnnGraph, tile: Raster) -> np.ndarray:
    c, h, w = graph.input_shape
    img = tile
    if c == 3 and img.channels == 1:
        img = replicate3(img)
    elif c == 1 and img.channels == 3:
        img = to_grayscale(img)
    if (img.height, img.width, img.channels) != (h, w, c):
        raise GraphError(
            f"input: tile {img.height}x{img.width}x{img.channels} != graph input {h}x{w}x{c}"
        )
    return img.pixels.transpose(2, 0, 1).astype(np.float64) * graph.input_scale


def forward_tensor(graph: CnnGraph, x: np.ndarray, stop_at: int | None = None) -> np.ndarray:
    n = len(graph.layers)
    last = n - 1 if stop_at is None else stop_at
    if not 0 <= last < n:
        raise GraphError(f"stop layer {stop_at} outside graph of {n} layers")
    acts: list[np.ndarray] = []
    for layer in graph.layers[: last + 1]:
        x = _apply(layer, x, acts)
        acts.append(x)
    return x


def cnn_forward(graph: CnnGraph, tile: Raster, stop_at: int | None = None):
    """Evaluate the graph on a tile.

    With ``stop_at`` the activation of that layer is returned; otherwise a
    graph ending in Softmax yields a Prediction and any other graph its final
    tensor.
    """
    out = forward_tensor(graph, input_tensor(graph, tile), stop_at)
    if stop_at is None and graph.layers and isinstance(graph.layers[-1], Softmax):
        return Prediction.from_probs(out)
    return out


def extract_features(graph: CnnGraph, tiles, stop_at: int) -> np.ndarray:
    return np.stack([cnn_forward(graph, t, stop_at).reshape(-1) for t in tiles])


def activation_heatmap(graph: CnnGraph, tile: Raster, aggregate: str = "mean") -> Raster:
    """Channel-aggregated activation of the last convolution, resized to the tile.

    The activation is taken after any BatchNorm/ReLU layers directly
    following that convolution.
    """
    conv_idx = [i for i, l in enumerate(graph.layers) if isinstance(l, Conv2D)]
    if not conv_idx:
        raise GraphError("graph has no Conv2D layer")
    stop = conv_idx[-1]
    while stop + 1 < len(graph.layers) and isinstance(graph.layers[stop + 1], (BatchNorm, ReLU)):
        stop += 1
    act = forward_tensor(graph, input_tensor(graph, tile), stop)
    if aggregate == "mean":
        amap = act.mean(axis=0)
    elif aggregate == "max":
        amap = act.max(axis=0)
    else:
        raise ValueError("aggregate must be 'mean' or 'max'")
    lo, hi = float(amap.min()), float(amap.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return Raster(np.zeros((tile.height, tile.width), dtype=np.uint8))
    norm = (amap - lo) * (255.0 / (hi - lo))
    return Raster(quantize(bilinear_resize_float(norm, tile.width, tile.height)))


def overlay_heatmap(tile: Raster, heat: Raster) -> Raster:
    """Red overlay: alpha = heat/255 blending the tile toward pure red."""
    base = replicate3(tile).pixels.astype(np.float64)
    a = heat.pixels.astype(np.float64) / 255.0
    red = np.zeros_like(base)
    red[:, :, 0] = 255.0
    return Raster(quantize(base * (1 - a) + red * a))


# -- serialisation -------------------------------------------------------------

_TYPE_NAMES = {
    Conv2D: "Conv2D",
    BatchNorm: "BatchNorm",
    ReLU: "ReLU",
    MaxPool: "MaxPool",
    GlobalAvgPool: "GlobalAvgPool",
    ResidualAdd: "ResidualAdd",
    Dense: "Dense",
    Softmax: "Softmax",
}


def _layer_record(layer) -> dict:
    rec = {"type": _TYPE_NAMES[type(layer)]}
    if isinstance(layer, Conv2D):
        rec.update(
            outCh=layer.out_ch, kH=layer.kh, kW=layer.kw, strideH=layer.stride_h,
            strideW=layer.stride_w, padH=layer.pad_h, padW=layer.pad_w,
        )
    elif isinstance(layer, BatchNorm):
        rec["eps"] = layer.eps
    elif isinstance(layer, MaxPool):
        rec.update(k=layer.k, stride=layer.stride)
    elif isinstance(layer, ResidualAdd):
        rec["fromLayerIndex"] = layer.from_layer
    elif isinstance(layer, Dense):
        rec["out"] = layer.out
    return rec


def _layer_from_record(i: int, rec: dict):
    try:
        kind = rec["type"]
        if kind == "Conv2D":
            return Conv2D(
                int(rec["outCh"]), int(rec["kH"]), int(rec["kW"]), int(rec.get("strideH", 1)),
                int(rec.get("strideW", 1)), int(rec.get("padH", 0)), int(rec.get("padW", 0)),
            )
        if kind == "BatchNorm":
            return BatchNorm(eps=float(rec.get("eps", 1e-5)))
        if kind == "ReLU":
            return ReLU()
        if kind == "MaxPool":
            return MaxPool(int(rec["k"]), int(rec["stride"]))
        if kind == "GlobalAvgPool":
            return GlobalAvgPool()
        if kind == "ResidualAdd":
            return ResidualAdd(int(rec["fromLayerIndex"]))
        if kind == "Dense":
            return Dense(int(rec["out"]))
        if kind == "Softmax":
            return Softmax()
    except KeyError as exc:
        raise GraphError(f"layer {i}: missing field {exc}") from None
    raise GraphError(f"layer {i}: unknown layer type {rec.get('type')!r}")


def topology_json(graph: CnnGraph) -> str:
    c, h, w = graph.input_shape
    doc = {
        "format": TOPOLOGY_FORMAT,
        "version": TOPOLOGY_VERSION,
        "input": {"channels": c, "height": h, "width": w, "scale": graph.input_scale},
        "layers": [_layer_record(l) for l in graph.layers],
    }
    return json.dumps(doc, indent=2) + "\n"


def parse_topology(text: str) -> CnnGraph:
    doc = json.loads(text)
    if doc.get("format") != TOPOLOGY_FORMAT:
        raise GraphError(f"topology format {doc.get('format')!r} != {TOPOLOGY_FORMAT!r}")
    if doc.get("version") != TOPOLOGY_VERSION:
        raise GraphError(f"topology version {doc.get('version')!r} unsupported")
    inp = doc["input"]
    layers = [_layer_from_record(i, rec) for i, rec in enumerate(doc["layers"])]
    graph = CnnGraph(
        layers, (int(inp["channels"]), int(inp["height"]), int(inp["width"])), float(inp["scale"])
    )
    infer_shapes(graph, check_params=False)
    return graph


def encode_weights(graph: CnnGraph) -> bytes:
    infer_shapes(graph)
    parts = [WEIGHTS_MAGIC]
    for i, layer in enumerate(graph.layers):
        names = _param_names(layer)
        if not names:
            continue
        flat = np.concatenate([np.asarray(getattr(layer, n), dtype=np.float64).reshape(-1) for n in names])
        parts.append(struct.pack("<IQ", i, flat.size))
        parts.append(flat.astype("<f4").tobytes())
    return b"".join(parts)


def decode_weights(graph: CnnGraph, data: bytes) -> CnnGraph:
    """Fill the parameters of ``graph`` (in place) from a CSW1 blob."""
    if data[:4] != WEIGHTS_MAGIC:
        raise GraphError(f"weights magic {data[:4]!r} != {WEIGHTS_MAGIC!r}")
    shapes = infer_shapes(graph, check_params=False)
    in_shapes = [tuple(graph.input_shape)] + shapes[:-1]
    expected = 4
    for i, layer in enumerate(graph.layers):
        if _param_names(layer):
            expected += 12 + 4 * sum(int(np.prod(s)) for s in _param_shapes(layer, in_shapes[i]))
    if len(data) < expected:
        raise GraphError(f"weights file truncated: expected {expected} bytes, got {len(data)}")
    pos = 4
    for i, layer in enumerate(graph.layers):
        names = _param_names(layer)
        if not names:
            continue
        idx, count = struct.unpack_from("<IQ", data, pos)
        pos += 12
        pshapes = _param_shapes(layer, in_shapes[i])
        need = sum(int(np.prod(s)) for s in pshapes)
        if idx != i:
            raise GraphError(f"weights record for layer {idx} found where layer {i} expected")
        if count != need:
            raise GraphError(f"layer {i}: {count} parameters in file, topology requires {need}")
        flat = np.frombuffer(data, "<f4", count, pos).astype(np.float64)
        pos += 4 * count
        off = 0
        for name, shape in zip(names, pshapes):
            n = int(np.prod(shape))
            setattr(layer, name, flat[off : off + n].reshape(shape).copy())
            off += n
    if pos != len(data):
        raise GraphError(f"weights file has {len(data) - pos} trailing bytes")
    infer_shapes(graph)
    return graph


def load_cnn(weights_path, topology_path) -> CnnGraph:
    with open(topology_path, encoding="utf-8") as fh:
        graph = parse_topology(fh.read())
    with open(weights_path, "rb") as fh:
        return decode_weights(graph, fh.read())


def write_cnn(graph: CnnGraph, weights_path, topology_path) -> None:
    blob = encode_weights(graph)
    with open(topology_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(topology_json(graph))
    with open(weights_path, "wb") as fh:
        fh.write(blob)


def f32(a) -> np.ndarray:
    """Round to binary32 precision so graphs survive the weight file bit-exactly."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


# -- desk-scale backbone ---------------------------------------------------------


def _trough_kernel(size: int, angle: float, sigma: float) -> np.ndarray:
    """Zero-mean kernel responding positively to a dark line at ``angle``."""
    r = size // 2
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    d = -xx * math.sin(angle) + yy * math.cos(angle)  # distance across the line
    k = -np.exp(-0.5 * (d / sigma) ** 2)
    k -= k.mean()
    return k / np.abs(k).sum()


def desk_backbone(seed: int = 0, window: int = 227) -> tuple[CnnGraph, int]:
    """Two-convolution fixed feature extractor; returns (graph, feature layer index).

    The first convolution holds hand-set dark-line detectors at four
    orientations and two widths (identical on every colour channel, luma
    weighted); the second is a seeded random 8 -> 16 mixing convolution.
    Nothing here is trained.
    """
    luma = np.array([0.299, 0.587, 0.114])
    kernels = []
    for sigma in (0.8, 1.6):
        for angle in (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4):
            k = _trough_kernel(5, angle, sigma) * 4.0
            kernels.append(luma[:, None, None] * k[None])
    w1 = f32(np.stack(kernels))
    rng = SplitMix64(seed)
    bound = math.sqrt(6.0 / (8 * 9 + 16 * 9))
    w2 = f32((rng.uniform_array(16 * 8 * 9).reshape(16, 8, 3, 3) * 2 - 1) * bound)
    # keep each output channel's response to its "own" detector positive
    for o in range(16):
        w2[o, o % 8, 1, 1] = f32(abs(w2[o, o % 8, 1, 1]) + 0.5)
    layers = [
        Conv2D(8, 5, 5, 2, 2, 2, 2, w1, np.zeros(8)),
        ReLU(),
        MaxPool(4, 4),
        Conv2D(16, 3, 3, 1, 1, 1, 1, w2, np.zeros(16)),
        ReLU(),
        MaxPool(7, 7),
    ]
    graph = CnnGraph(layers, (3, window, window))
    infer_shapes(graph)
    return graph, len(layers) - 1


class CnnHeadClassifier:
    """Frozen backbone features followed by an MLP head."""

    def __init__(self, graph: CnnGraph, feature_layer: int, head):
        self.graph = graph
        self.feature_layer = feature_layer
        self.head = head

    def features(self, tile: Raster) -> np.ndarray:
        return cnn_forward(self.graph, tile, self.feature_layer).reshape(-1)

    def __call__(self, tile: Raster) -> Prediction:
        from .mlp import forward

        probs, _ = forward(self.head, self.features(tile)[None, :])
        return Prediction.from_probs(probs[0])
