"""Digital image degradations (noise, occlusion, blur, desaturation) for dataset expansion."""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, replace

import numpy as np

from .dataset import NEGATIVE, POSITIVE, DatasetManifest, ManifestError, SegmentRecord
from .raster import Raster, quantize, to_grayscale
from .rng import SplitMix64, sub_seed

SALT_PEPPER = "SaltPepper"
HIDE = "Hide"
BLUR = "Blur"
DESATURATE = "Desaturate"
KINDS = (SALT_PEPPER, HIDE, BLUR, DESATURATE)


@dataclass(frozen=True)
class ModificationSpec:
    kind: str
    salt_pepper_density: float = 0.15
    hide_max_frac_x: float = 0.2
    hide_max_frac_y: float = 0.2
    blur_sigma_max: float = 3.0
    sat_low: float = -0.5
    sat_high: float = 1.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown modification kind {self.kind!r}")
        if not 0 <= self.salt_pepper_density <= 1:
            raise ValueError("salt_pepper_density must lie in [0, 1]")
        if not (0 <= self.hide_max_frac_x < 1 and 0 <= self.hide_max_frac_y < 1):
            raise ValueError("hide fractions must lie in [0, 1)")
        if self.blur_sigma_max < 0:
            raise ValueError("blur_sigma_max must be >= 0")
        if self.sat_low > self.sat_high:
            raise ValueError("sat_low must not exceed sat_high")


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(values: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of an (h, w, c) float array, mirrored borders."""
    if sigma < 1e-6:
        return np.asarray(values, dtype=np.float64)
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    arr = np.asarray(values, dtype=np.float64)
    padded = np.pad(arr, ((r, r), (0, 0), (0, 0)), mode="symmetric")
    tmp = sum(k[i] * padded[i : i + arr.shape[0]] for i in range(len(k)))
    padded = np.pad(tmp, ((0, 0), (r, r), (0, 0)), mode="symmetric")
    return sum(k[i] * padded[:, i : i + arr.shape[1]] for i in range(len(k)))


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def modify(raster: Raster, spec: ModificationSpec, seed: int) -> Raster:
    rng = SplitMix64(seed)
    px = raster.pixels
    h, w, ch = px.shape

    if spec.kind == SALT_PEPPER:
        hit = rng.uniform_array(h * w).reshape(h, w) < spec.salt_pepper_density
        white = rng.uniform_array(h * w).reshape(h, w) < 0.5
        out = px.copy()
        out[hit & white] = 255
        out[hit & ~white] = 0
        return Raster(out)

    if spec.kind == HIDE:
        dx = _round_half_up(rng.uniform() * spec.hide_max_frac_x * w)
        dy = _round_half_up(rng.uniform() * spec.hide_max_frac_y * h)
        out = np.zeros_like(px)
        out[dy:, dx:] = px[: h - dy, : w - dx]
        return Raster(out)

    if spec.kind == BLUR:
        sigma = rng.uniform() * spec.blur_sigma_max
        if sigma < 1e-6:
            return raster
        return Raster(quantize(gaussian_blur(px, sigma)))

    if ch != 3:
        raise ValueError("Desaturate requires a 3-channel raster")
    s = spec.sat_low + rng.uniform() * (spec.sat_high - spec.sat_low)
    gray = to_grayscale(raster).pixels.astype(np.float64)
    orig = px.astype(np.float64)
    return Raster(quantize(gray + s * (orig - gray)))


CenterPredicate = Callable[[SegmentRecord, Raster], bool]


def dark_centroid_predicate(record: SegmentRecord, tile: Raster, k: float = 3.0) -> bool:
    """Heuristic stand-in for manual selection: the centroid of pixels darker
    than ``mean - k*std`` must fall inside the central 50% box."""
    g = to_grayscale(tile).pixels[:, :, 0].astype(np.float64)
    mask = g < g.mean() - k * g.std()
    if not mask.any():
        return False
    ys, xs = np.nonzero(mask)
    h, w = g.shape
    cy, cx = ys.mean(), xs.mean()
    return 0.25 * w <= cx <= 0.75 * w and 0.25 * h <= cy <= 0.75 * h


def expand_dataset(
    manifest: DatasetManifest,
    n_pos: int,
    n_neg: int,
    center_predicate: CenterPredicate,
    seed: int,
    spec_overrides: dict | None = None,
) -> DatasetManifest:
    """Append ``n_pos`` modified P tiles and ``n_neg`` modified N tiles.

    Source tiles are drawn without replacement among those passing
    ``center_predicate``; each copy gets a uniformly chosen kind (kinds that
    are inapplicable to the tile, i.e. Desaturate on grayscale, are skipped)
    and its own sub-seed.
    """
    if n_pos == 0 and n_neg == 0:
        return manifest.with_records(manifest.records)
    rng = SplitMix64(seed)
    store = dict(manifest.store)
    new_records = []
    overrides = spec_overrides or {}
    for label, n in ((POSITIVE, n_pos), (NEGATIVE, n_neg)):
        if n == 0:
            continue
        eligible = []
        for i, rec in enumerate(manifest.records):
            if rec.label == label and center_predicate(rec, manifest.load_tile(i)):
                eligible.append(i)
        if len(eligible) < n:
            raise ManifestError(
                f"only {len(eligible)} eligible {label} tiles, {n} requested"
            )
        chosen = [eligible[j] for j in rng.permutation(len(eligible))[:n]]
        for k, i in enumerate(chosen):
            rec = manifest.records[i]
            tile = manifest.load_tile(i)
            kinds = KINDS if tile.channels == 3 else KINDS[:3]
            kind = kinds[rng.below(len(kinds))]
            tile_seed = sub_seed(seed, 0 if label == POSITIVE else 1, k)
            out = modify(tile, ModificationSpec(kind, **overrides), tile_seed)
            key = f"{rec.path}#{rec.row},{rec.col}#modified:{kind}:{label}{k}"
            store[key] = out
            new_records.append(
                replace(rec, path=key, row=None, col=None, provenance=f"modified:{kind}")
            )
    return manifest.with_records(manifest.records + new_records, store=store)
