"""Independent reference implementations used as test oracles."""

from fractions import Fraction

import numpy as np

from crackscope.classify import BatchNorm, CnnGraph, Conv2D, Dense, MaxPool, ReLU, Softmax
from crackscope.classify.cnn import f32


def otsu_bruteforce(hist):
    """Exhaustive between-class variance w0*w1*(mu0-mu1)^2 over splits (<=k, >k)."""
    hist = [int(v) for v in hist]
    n = sum(hist)
    occupied = [i for i, v in enumerate(hist) if v]
    if len(occupied) == 1:
        return occupied[0]
    best, tied = None, []
    for k in range(256):
        n0 = sum(hist[: k + 1])
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            var = Fraction(0)
        else:
            mu0 = Fraction(sum(i * hist[i] for i in range(k + 1)), n0)
            mu1 = Fraction(sum(i * hist[i] for i in range(k + 1, 256)), n1)
            var = Fraction(n0, n) * Fraction(n1, n) * (mu0 - mu1) ** 2
        if best is None or var > best:
            best, tied = var, [k]
        elif var == best:
            tied.append(k)
    return sum(tied) // len(tied)


def naive_conv(x, w, b, stride, pad):
    c, h, wd = x.shape
    oc, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((oc, oh, ow))
    for o in range(oc):
        for i in range(oh):
            for j in range(ow):
                acc = b[o]
                for ci in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            y, xx = i * sh + u - ph, j * sw + v - pw
                            if 0 <= y < h and 0 <= xx < wd:
                                acc += w[o, ci, u, v] * x[ci, y, xx]
                out[o, i, j] = acc
    return out


def naive_forward(graph, x):
    for layer in graph.layers:
        if isinstance(layer, Conv2D):
            x = naive_conv(x, layer.weights, layer.bias, (layer.stride_h, layer.stride_w), (layer.pad_h, layer.pad_w))
        elif isinstance(layer, ReLU):
            x = np.array([max(v, 0.0) for v in x.ravel()]).reshape(x.shape)
        elif isinstance(layer, MaxPool):
            c, h, w = x.shape
            oh, ow = (h - layer.k) // layer.stride + 1, (w - layer.k) // layer.stride + 1
            out = np.empty((c, oh, ow))
            for ci in range(c):
                for i in range(oh):
                    for j in range(ow):
                        out[ci, i, j] = max(
                            x[ci, i * layer.stride + u, j * layer.stride + v] for u in range(layer.k) for v in range(layer.k)
                        )
            x = out
        elif isinstance(layer, BatchNorm):
            out = np.empty_like(x)
            for ci in range(x.shape[0]):
                out[ci] = (x[ci] - layer.mean[ci]) / np.sqrt(layer.var[ci] + layer.eps) * layer.gamma[ci] + layer.beta[ci]
            x = out
        elif isinstance(layer, Dense):
            v = x.ravel()
            x = np.array([sum(layer.weights[o, i] * v[i] for i in range(len(v))) + layer.bias[o] for o in range(layer.out)])
        elif isinstance(layer, Softmax):
            e = np.exp(x - x.max())
            x = e / e.sum()
        else:
            raise TypeError(layer)
    return x


def random_graph(rng: np.random.Generator, max_layers: int = 3):
    """Random valid graph of <= max_layers layers on an input <= 16x16x3."""
    c = int(rng.choice([1, 3]))
    h = int(rng.integers(6, 17))
    w = int(rng.integers(6, 17))
    layers = []
    shape = (c, h, w)
    n_layers = int(rng.integers(1, max_layers + 1))
    for li in range(n_layers):
        kind = rng.choice(["conv", "conv", "relu", "pool", "bn"]) if li else "conv"
        cc, hh, ww = shape
        if kind == "conv":
            k = int(rng.integers(1, min(4, hh, ww) + 1))
            s = int(rng.integers(1, 3))
            p = int(rng.integers(0, k))
            oc = int(rng.integers(1, 5))
            layers.append(Conv2D(oc, k, k, s, s, p, p, f32(rng.normal(size=(oc, cc, k, k))), f32(rng.normal(size=oc))))
            shape = (oc, (hh + 2 * p - k) // s + 1, (ww + 2 * p - k) // s + 1)
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "pool":
            k = int(rng.integers(1, min(3, hh, ww) + 1))
            layers.append(MaxPool(k, int(rng.integers(1, 3))))
            st = layers[-1].stride
            shape = (cc, (hh - k) // st + 1, (ww - k) // st + 1)
        else:
            layers.append(
                BatchNorm(f32(rng.normal(size=cc)), f32(rng.normal(size=cc)), f32(rng.normal(size=cc)), f32(rng.uniform(0.5, 2, cc)))
            )
    return CnnGraph(layers, (c, h, w), input_scale=1.0 / 255.0)
