"""Synthetic specimen frames and labeled tiles with exact ground truth.

Crack appearance is fixed by two documented maps from opening ``c`` (um):

* full width at half minimum, in pixels: ``max(1.2, c / 1000 / mm_per_pixel)``
* darkness (intensity drop at the centreline): ``min(110, 50 + 0.8 * c)``

Opening of an active crack grows linearly from half its maximum at onset to
the maximum at the last scheduled strain.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .crackstats import FrameMeta
from .dataset import NEGATIVE, POSITIVE, DatasetManifest, SegmentRecord
from .raster import Raster, quantize
from .rng import SplitMix64, sub_seed

FWHM_TO_SIGMA = 1.0 / 2.3548200450309493


def crack_width_px(opening_um: float, mm_per_pixel: float) -> float:
    return max(1.2, opening_um / 1000.0 / mm_per_pixel)


def crack_darkness(opening_um: float) -> float:
    return min(110.0, 50.0 + 0.8 * opening_um)


@dataclass(frozen=True)
class CrackPlan:
    position: float  # px along the loading axis
    onset_strain: float
    max_opening_um: float
    waviness: float = 6.0  # px amplitude of the meander


@dataclass(frozen=True)
class SpecimenSpec:
    width_px: int = 1135
    height_px: int = 681
    mm_per_pixel: float = 0.02
    loading_axis: str = "x"
    background_mean: float = 165.0
    background_noise_std: float = 6.0
    mottle_amplitude: float = 6.0
    speckle_density: float = 0.0
    crack_plan: tuple[CrackPlan, ...] = ()
    strain_schedule: tuple[float, ...] = ()
    window: int = 227
    tint: tuple[float, float, float] = (1.0, 0.97, 0.92)
    seed: int = 0

    def __post_init__(self):
        if self.loading_axis not in ("x", "y"):
            raise ValueError("loading_axis must be 'x' or 'y'")
        if self.mm_per_pixel <= 0:
            raise ValueError("mm_per_pixel must be positive")
        if not 0 <= self.speckle_density < 1:
            raise ValueError("speckle_density must lie in [0, 1)")
        if list(self.strain_schedule) != sorted(self.strain_schedule):
            raise ValueError("strain schedule must be non-decreasing")

    @property
    def axis_length_px(self) -> int:
        return self.width_px if self.loading_axis == "x" else self.height_px

    @property
    def cross_length_px(self) -> int:
        return self.height_px if self.loading_axis == "x" else self.width_px

    @property
    def gauge_length_m(self) -> float:
        return self.axis_length_px * self.mm_per_pixel / 1000.0


def default_specimen(seed: int = 7, frames: int = 12) -> SpecimenSpec:
    """Five-by-three window specimen with three cracks opening in turn."""
    w = 227
    plan = (
        CrackPlan(1.5 * w + 10, 0.0030, 70.0),
        CrackPlan(3.5 * w - 15, 0.0065, 80.0),
        CrackPlan(2.5 * w + 5, 0.0100, 75.0),
    )
    schedule = tuple(float(v) for v in np.round(np.linspace(0.0, 0.02, frames), 10))
    return SpecimenSpec(crack_plan=plan, strain_schedule=schedule, seed=seed)


def opening_at(plan: CrackPlan, strain: float, max_strain: float) -> float:
    """Current opening in um (0 before onset)."""
    if strain < plan.onset_strain:
        return 0.0
    span = max_strain - plan.onset_strain
    frac = 1.0 if span <= 0 else min(1.0, (strain - plan.onset_strain) / span)
    return plan.max_opening_um * (0.5 + 0.5 * frac)


# -- texture -------------------------------------------------------------------


def _mottle(rng: SplitMix64, h: int, w: int, amplitude: float) -> np.ndarray:
    if amplitude == 0:
        return np.zeros((h, w))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.zeros((h, w))
    for _ in range(4):
        kx, ky, ph = rng.uniform_array(3)
        out += np.sin(2 * math.pi * ((kx - 0.5) * xx / 300.0 + (ky - 0.5) * yy / 300.0) + 2 * math.pi * ph)
    return amplitude * out / 2.0


def _speckles(rng: SplitMix64, h: int, w: int, density: float) -> np.ndarray:
    """Mask of painted dots covering roughly ``density`` of the area."""
    mask = np.zeros((h, w), dtype=bool)
    if density <= 0:
        return mask
    n = int(density * h * w / (math.pi * 2.0**2))
    if n == 0:
        return mask
    u = rng.uniform_array(3 * n).reshape(n, 3)
    for cx, cy, cr in u:
        x0, y0, r = cx * w, cy * h, 1.0 + 2.0 * cr
        xs = slice(max(0, int(x0 - r)), min(w, int(x0 + r) + 2))
        ys = slice(max(0, int(y0 - r)), min(h, int(y0 + r) + 2))
        yy, xx = np.mgrid[ys, xs]
        mask[ys, xs] |= (xx - x0) ** 2 + (yy - y0) ** 2 <= r * r
    return mask


def _finish(gray: np.ndarray, channels: int, tint) -> Raster:
    if channels == 1:
        return Raster(quantize(gray))
    rgb = np.stack([gray * t for t in tint], axis=2)
    return Raster(quantize(rgb))


# -- specimen sequences --------------------------------------------------------


@dataclass
class FrameTruth:
    frame_index: int
    strain: float
    openings_um: list[float]
    crack_count: int
    lvdt_mm: float
    acw_um: float | None
    cd_per_m: float
    polylines: list[list[tuple[float, float]]]
    window_labels: list[list[str]]


@dataclass
class SequenceTruth:
    gauge_length_m: float
    window: int
    frames: list[FrameTruth] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "gauge_length_m": self.gauge_length_m,
            "window": self.window,
            "frames": [
                {
                    "frame_index": f.frame_index,
                    "strain": f.strain,
                    "openings_um": f.openings_um,
                    "crack_count": f.crack_count,
                    "lvdt_mm": f.lvdt_mm,
                    "acw_um": f.acw_um,
                    "cd_per_m": f.cd_per_m,
                    "window_labels": f.window_labels,
                    "polylines": [[list(p) for p in pl] for pl in f.polylines],
                }
                for f in self.frames
            ],
        }
        return json.dumps(doc, indent=1) + "\n"


def _crack_centres(spec: SpecimenSpec, k: int, plan: CrackPlan) -> np.ndarray:
    """Centreline offset along the loading axis for every cross-axis pixel."""
    rng = SplitMix64(sub_seed(spec.seed, 10, k))
    l1, l2, p1, p2 = rng.uniform_array(4)
    t = np.arange(spec.cross_length_px, dtype=np.float64)
    wave = 0.7 * np.sin(2 * math.pi * (t / (250 + 350 * l1) + p1)) + 0.3 * np.sin(
        2 * math.pi * (t / (60 + 90 * l2) + p2)
    )
    return plan.position + plan.waviness * wave


def _check_plan(spec: SpecimenSpec, centres: list[np.ndarray]):
    max_open = max((p.max_opening_um for p in spec.crack_plan), default=0.0)
    gap = 4.0 * crack_width_px(max_open, spec.mm_per_pixel)
    for i in range(len(centres)):
        if centres[i].min() < 0 or centres[i].max() >= spec.axis_length_px:
            raise ValueError(f"crack {i} leaves the specimen")
        for j in range(i):
            if np.min(np.abs(centres[i] - centres[j])) < gap:
                raise ValueError(f"cracks {j} and {i} overlap (closer than {gap:.1f} px)")


def gen_sequence(spec: SpecimenSpec, channels: int = 3):
    """Render every scheduled strain step.

    Returns (frames, metas, truth). The static surface (mottling, speckles,
    crack paths) comes from the specimen seed; sensor noise is drawn per frame.
    """
    h_cross, l_axis = spec.cross_length_px, spec.axis_length_px
    centres = [_crack_centres(spec, k, p) for k, p in enumerate(spec.crack_plan)]
    _check_plan(spec, centres)
    static_rng = SplitMix64(sub_seed(spec.seed, 1))
    # work in (cross, axis) coordinates: rows run across, columns along the loading axis
    base = spec.background_mean + _mottle(static_rng, h_cross, l_axis, spec.mottle_amplitude)
    speck = _speckles(SplitMix64(sub_seed(spec.seed, 2)), h_cross, l_axis, spec.speckle_density)
    axis_coord = np.arange(l_axis, dtype=np.float64)[None, :]
    max_strain = max(spec.strain_schedule) if spec.strain_schedule else 0.0
    w = spec.window
    rows_w, cols_w = spec.height_px // w, spec.width_px // w

    frames, metas = [], []
    truth = SequenceTruth(spec.gauge_length_m, w)
    for fi, strain in enumerate(spec.strain_schedule):
        noise = SplitMix64(sub_seed(spec.seed, 3, fi)).normal_array(h_cross * l_axis)
        img = base + spec.background_noise_std * noise.reshape(h_cross, l_axis)
        openings = [opening_at(p, strain, max_strain) for p in spec.crack_plan]
        polylines = []
        labels = [[NEGATIVE] * cols_w for _ in range(rows_w)]
        for cen, c_um in zip(centres, openings):
            if c_um <= 0:
                continue
            sigma = crack_width_px(c_um, spec.mm_per_pixel) * FWHM_TO_SIGMA
            img -= crack_darkness(c_um) * np.exp(-0.5 * ((axis_coord - cen[:, None]) / sigma) ** 2)
            t = np.arange(h_cross, dtype=np.float64)
            if spec.loading_axis == "x":
                pts = np.stack([cen, t], axis=1)
            else:
                pts = np.stack([t, cen], axis=1)
            polylines.append([(float(x), float(y)) for x, y in pts])
            for x, y in pts:
                r, c = int(y) // w, int(math.floor(x)) // w
                if r < rows_w and c < cols_w:
                    labels[r][c] = POSITIVE
        img = np.where(speck, 40.0, img)
        gray = img if spec.loading_axis == "x" else img.T
        frames.append(_finish(gray, channels, spec.tint))
        active = [c for c in openings if c > 0]
        lvdt = sum(active) / 1000.0
        n = len(active)
        metas.append(
            FrameMeta(lvdt, spec.gauge_length_m, float(strain), spec.mm_per_pixel, fi)
        )
        truth.frames.append(
            FrameTruth(
                fi, float(strain), openings, n, lvdt,
                (lvdt * 1000.0 / n) if n else None, n / spec.gauge_length_m, polylines, labels,
            )
        )
    return frames, metas, truth


class TruthClassifier:
    """Window classifier that answers from a frame's ground-truth label grid."""

    def __init__(self, labels: list[list[str]]):
        self.labels = labels

    def predict_window(self, tile: Raster, row: int, col: int):
        from .classify.base import Prediction

        return Prediction(1.0, 0.0) if self.labels[row][col] == POSITIVE else Prediction(0.0, 1.0)

    def __call__(self, tile: Raster):
        raise TypeError("TruthClassifier needs window coordinates; use predict_window")


# -- labeled tiles ---------------------------------------------------------------


@dataclass(frozen=True)
class TileSpec:
    window: int = 227
    channels: int = 1
    mm_per_pixel: float = 0.02
    background_mean: float = 165.0
    background_noise_std: float = 6.0
    mottle_amplitude: float = 6.0
    speckle_density: float = 0.0
    opening_range_um: tuple[float, float] = (40.0, 110.0)
    tint: tuple[float, float, float] = (1.0, 0.97, 0.92)


@dataclass(frozen=True)
class TileTruth:
    centroid: tuple[float, float] | None  # (x, y) of the crack segment midpoint
    angle: float | None
    length: float | None
    opening_um: float | None


def _segment_distance(xx, yy, x0, y0, x1, y1):
    dx, dy = x1 - x0, y1 - y0
    t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    return np.hypot(xx - (x0 + t * dx), yy - (y0 + t * dy))


def render_tile(spec: TileSpec, seed: int, index: int, positive: bool) -> tuple[Raster, TileTruth]:
    w = spec.window
    geo = SplitMix64(sub_seed(seed, 1, index))
    cx, cy, ang, ln, op = geo.uniform_array(5)
    back = SplitMix64(sub_seed(seed, 2, index))
    img = spec.background_mean + _mottle(back, w, w, spec.mottle_amplitude)
    img += spec.background_noise_std * back.normal_array(w * w).reshape(w, w)
    truth = TileTruth(None, None, None, None)
    if positive:
        x_c, y_c = (0.25 + 0.5 * cx) * w, (0.25 + 0.5 * cy) * w
        angle = math.pi * ang
        length = (0.6 + 0.6 * ln) * w
        lo, hi = spec.opening_range_um
        opening = lo + (hi - lo) * op
        dx, dy = 0.5 * length * math.cos(angle), 0.5 * length * math.sin(angle)
        yy, xx = np.mgrid[0:w, 0:w].astype(np.float64)
        d = _segment_distance(xx, yy, x_c - dx, y_c - dy, x_c + dx, y_c + dy)
        sigma = crack_width_px(opening, spec.mm_per_pixel) * FWHM_TO_SIGMA
        img -= crack_darkness(opening) * np.exp(-0.5 * (d / sigma) ** 2)
        truth = TileTruth((x_c, y_c), angle, length, opening)
    speck = _speckles(SplitMix64(sub_seed(seed, 3, index)), w, w, spec.speckle_density)
    img = np.where(speck, 40.0, img)
    return _finish(img, spec.channels, spec.tint), truth


def gen_tiles(spec: TileSpec, count_per_class: int, seed: int, source: str = "synth"):
    """Balanced labeled tiles held in memory.

    Returns (manifest, truths) where ``truths`` maps record path to TileTruth.
    P and N tiles alternate in the manifest.
    """
    if count_per_class < 1:
        raise ValueError("count_per_class must be >= 1")
    records, store, truths = [], {}, {}
    for i in range(count_per_class):
        for label, pos in ((POSITIVE, True), (NEGATIVE, False)):
            index = 2 * i + (0 if pos else 1)
            tile, tt = render_tile(spec, seed, index, pos)
            path = f"synth:{seed}:{index:06d}"
            store[path] = tile
            truths[path] = tt
            records.append(SegmentRecord(path, label, source=source))
    return DatasetManifest(records, spec.window, store), truths


def center_predicate(truths: dict):
    """Predicate for augment.expand_dataset: crack midpoint in the central 50% box.

    N tiles (no crack) are always eligible.
    """

    def pred(record, tile):
        t = truths.get(record.path)
        if t is None or t.centroid is None:
            return record.label == NEGATIVE
        x, y = t.centroid
        return 0.25 * tile.width <= x <= 0.75 * tile.width and 0.25 * tile.height <= y <= 0.75 * tile.height

    return pred
