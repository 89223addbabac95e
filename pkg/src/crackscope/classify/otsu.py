"""Otsu threshold and the adaptive-threshold (AdT) tile classifier."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from ..raster import Raster, to_grayscale
from .base import Prediction


def between_class_scores(histogram) -> list[Fraction]:
    """Exact between-class variance for every split k (classes <= k and > k).

    Uses sigma_B^2(k) = (n*S0 - n0*S)^2 / (n^2 * n0 * n1), i.e. w0*w1*(mu0-mu1)^2
    with integer numerators, so ties compare exactly.
    """
    hist = [int(v) for v in histogram]
    if len(hist) != 256:
        raise ValueError("histogram must have 256 bins")
    if any(v < 0 for v in hist):
        raise ValueError("histogram counts must be non-negative")
    n = sum(hist)
    s = sum(i * v for i, v in enumerate(hist))
    scores = []
    n0 = s0 = 0
    for k in range(256):
        n0 += hist[k]
        s0 += k * hist[k]
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            scores.append(Fraction(0))
        else:
            scores.append(Fraction((n * s0 - n0 * s) ** 2, n * n * n0 * n1))
    return scores


def otsu_threshold(histogram) -> int:
    hist = np.asarray(histogram, dtype=np.int64)
    if hist.sum() < 1:
        raise ValueError("empty histogram")
    scores = between_class_scores(hist)
    best = max(scores)
    if best == 0:
        # a single occupied intensity: the threshold is that intensity
        return int(np.flatnonzero(hist)[0])
    tied = [k for k, v in enumerate(scores) if v == best]
    return sum(tied) // len(tied)


def gray_histogram(raster: Raster) -> np.ndarray:
    g = to_grayscale(raster).pixels
    return np.bincount(g.reshape(-1), minlength=256)


class AdtClassifier:
    """Tile is P when at least ``min_pixels`` gray pixels fall strictly below
    the tile's own Otsu threshold; a constant tile is N."""

    def __init__(self, min_pixels: int = 1):
        if min_pixels < 1:
            raise ValueError("min_pixels must be >= 1")
        self.min_pixels = min_pixels

    def __call__(self, tile: Raster) -> Prediction:
        hist = gray_histogram(tile)
        if np.count_nonzero(hist) <= 1:
            return Prediction(0.0, 1.0)
        th = otsu_threshold(hist)
        below = int(hist[:th].sum())
        return Prediction(1.0, 0.0) if below >= self.min_pixels else Prediction(0.0, 1.0)


def adt_classify(tile: Raster, min_pixels: int = 1) -> Prediction:
    return AdtClassifier(min_pixels)(tile)
