"""Frame-level crack statistics: window search, cracking zones, trough tracing,
crack counting, average crack width and crack density."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .raster import Raster, contrast_stretch, tile, to_grayscale


@dataclass(frozen=True)
class FrameMeta:
    lvdt_displacement: float  # mm
    gauge_length: float  # m
    applied_strain: float
    mm_per_pixel: float
    frame_index: int = 0
    load: float | None = None  # kN

    def __post_init__(self):
        if self.gauge_length <= 0:
            raise ValueError("gauge_length must be positive")
        if self.mm_per_pixel <= 0:
            raise ValueError("mm_per_pixel must be positive")


@dataclass(frozen=True)
class StatsParams:
    window: int = 227
    k: float = 1.0  # trough threshold: mean - k * std of the enhanced patch
    delta: float = 3.0  # max step between consecutive chain points, px
    min_len: float | None = None  # default 2 * window / 3
    scan_lines: int = 5
    axis: str = "x"  # loading axis; cracks run across it
    p_low: float = 1.0
    p_high: float = 99.0

    @property
    def min_length(self) -> float:
        return 2.0 * self.window / 3.0 if self.min_len is None else self.min_len


@dataclass
class WindowGrid:
    window: int
    labels: np.ndarray  # (rows, cols) of "P"/"N"
    probs: np.ndarray  # (rows, cols) probability of P

    @property
    def rows(self) -> int:
        return self.labels.shape[0]

    @property
    def cols(self) -> int:
        return self.labels.shape[1]

    def positive(self) -> np.ndarray:
        return self.labels == "P"


@dataclass
class Lcz:
    cells: list[tuple[int, int]]  # (row, col), sorted
    window: int

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """(x0, y0, x1, y1) pixel rectangle, exclusive upper bounds."""
        rs = [r for r, _ in self.cells]
        cs = [c for _, c in self.cells]
        w = self.window
        return min(cs) * w, min(rs) * w, (max(cs) + 1) * w, (max(rs) + 1) * w


@dataclass
class CrackPolyline:
    points: list[tuple[float, float]]  # (x, y) pixels
    length_px: float
    length_mm: float | None = None


def polyline_length(points) -> float:
    p = np.asarray(points, dtype=np.float64)
    if len(p) < 2:
        return 0.0
    return float(np.hypot(*np.diff(p, axis=0).T).sum())


@dataclass
class FrameStats:
    crack_number: float
    crack_number_int: int
    acw_um: float | None
    cd_per_m: float
    lczs: list[Lcz] = field(default_factory=list)
    polylines: list[CrackPolyline] = field(default_factory=list)
    grid: WindowGrid | None = None


# -- window search and grouping -------------------------------------------------


def window_search(raster: Raster, classifier, window: int = 227, jobs: int = 1) -> WindowGrid:
    """Classify every non-overlapping window.

    ``classifier`` is called as ``classifier(tile)``; objects exposing
    ``predict_window(tile, row, col)`` are asked with coordinates instead.
    """
    grid = tile(raster, window)
    by_pos = hasattr(classifier, "predict_window")

    def one(rc):
        r, c = rc
        t = grid.tile_at(raster, r, c)
        return classifier.predict_window(t, r, c) if by_pos else classifier(t)

    cells = list(grid.cells())
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            preds = list(pool.map(one, cells))
    else:
        preds = [one(rc) for rc in cells]
    labels = np.array([p.label for p in preds], dtype="<U1").reshape(grid.rows, grid.cols)
    probs = np.array([p.prob_p for p in preds]).reshape(grid.rows, grid.cols)
    return WindowGrid(window, labels, probs)


def group_lcz(grid: WindowGrid) -> list[Lcz]:
    """8-connected groups of P windows; single isolated windows are dropped."""
    lab, n = ndimage.label(grid.positive(), structure=np.ones((3, 3), dtype=int))
    zones = []
    for k in range(1, n + 1):
        cells = sorted((int(r), int(c)) for r, c in zip(*np.nonzero(lab == k)))
        if len(cells) >= 2:
            zones.append(Lcz(cells, grid.window))
    zones.sort(key=lambda z: (min(r for r, _ in z.cells), min(c for _, c in z.cells)))
    return zones


# -- trough tracing -------------------------------------------------------------


def _row_minima(v: np.ndarray, ok: np.ndarray, delta: float) -> list[np.ndarray]:
    """Per row: positions of local minima passing ``ok`` that are also the
    darkest such minimum within ``delta`` on either side (left wins ties)."""
    inf = np.full(v.shape, np.inf)
    left, right = inf.copy(), inf.copy()
    left[:, 1:] = v[:, :-1]
    right[:, :-1] = v[:, 1:]
    cand = np.where((v < left) & (v <= right) & ok, v, np.inf)
    keep = np.isfinite(cand)
    for d in range(1, int(math.floor(delta)) + 1):
        shl, shr = inf.copy(), inf.copy()
        shl[:, d:] = cand[:, :-d]  # neighbour d to the left
        shr[:, :-d] = cand[:, d:]  # neighbour d to the right
        keep &= (cand < shl) & (cand <= shr)
    return [np.flatnonzero(row) for row in keep]


def _link(minima: list[np.ndarray], delta: float) -> list[list[tuple[int, int]]]:
    """Greedy chaining of per-row minima; returns chains of (row, pos)."""
    chains: list[list[tuple[int, int]]] = []
    active = np.zeros(0, dtype=np.int64)
    for y, xs in enumerate(minima):
        if len(active):
            ends = np.array([chains[i][-1] for i in active], dtype=np.float64)
            active = active[y - ends[:, 0] <= delta]
            ends = ends[y - ends[:, 0] <= delta]
        used_x = np.zeros(len(xs), dtype=bool)
        if len(active) and len(xs):
            d = np.hypot(y - ends[:, 0, None], xs[None, :] - ends[:, 1, None])
            ci, xj = np.nonzero(d <= delta)
            # established (longer) chains choose first, each its nearest candidate
            lengths = np.array([len(chains[i]) for i in active])
            order = np.lexsort((xj, d[ci, xj], ci, -lengths[ci]))
            used_c = set()
            for k in order:
                c, j = int(ci[k]), int(xj[k])
                if c in used_c or used_x[j]:
                    continue
                chains[active[c]].append((y, int(xs[j])))
                used_c.add(c)
                used_x[j] = True
        fresh = [int(x) for x in xs[~used_x]]
        start = len(chains)
        chains.extend([(y, x)] for x in fresh)
        active = np.concatenate([active, np.arange(start, len(chains))])
    return chains


def _smooth(ch: list[tuple[int, int]], half: int) -> list[tuple[float, float]]:
    """Moving average of the cross-sweep position to remove pixel jitter."""
    arr = np.asarray(ch, dtype=np.float64)
    if half < 1 or len(arr) < 3:
        return [(float(a), float(b)) for a, b in arr]
    n = 2 * half + 1
    padded = np.pad(arr[:, 1], half, mode="edge")
    arr[:, 1] = np.convolve(padded, np.ones(n) / n, mode="valid")
    return [(float(a), float(b)) for a, b in arr]


def trace_cracks(
    raster: Raster,
    lcz: Lcz,
    params: StatsParams = StatsParams(),
    mm_per_pixel: float | None = None,
) -> list[CrackPolyline]:
    """Follow dark troughs inside a cracking zone.

    The zone's bounding box is contrast-stretched; minima are searched only
    on pixels of the zone's own windows. Both sweep orientations are tried
    and the one with the larger total chain length is kept.
    """
    x0, y0, x1, y1 = lcz.bbox
    patch = contrast_stretch(to_grayscale(raster.crop(x0, y0, x1 - x0, y1 - y0)), params.p_low, params.p_high)
    v = patch.pixels[:, :, 0].astype(np.float64)
    member = np.zeros(v.shape, dtype=bool)
    w = lcz.window
    for r, c in lcz.cells:
        member[r * w - y0 : (r + 1) * w - y0, c * w - x0 : (c + 1) * w - x0] = True
    vals = v[member]
    thr = vals.mean() - params.k * vals.std()
    ok = member & (v < thr)

    best: list[list[tuple[float, float]]] = []
    best_len = 0.0
    for transpose in (False, True):
        vv, oo = (v.T, ok.T) if transpose else (v, ok)
        chains = _link(_row_minima(vv, oo, params.delta), params.delta)
        kept = []
        total = 0.0
        for ch in chains:
            sm = _smooth(ch, int(math.floor(params.delta)))
            if transpose:
                pts = [(y + x0, x + y0) for y, x in sm]  # row index is x here
            else:
                pts = [(x + x0, y + y0) for y, x in sm]
            ln = polyline_length(pts)
            if ln >= params.min_length:
                kept.append(pts)
                total += ln
        if total > best_len:
            best, best_len = kept, total
    out = []
    for pts in best:
        ln = polyline_length(pts)
        out.append(CrackPolyline(pts, ln, None if mm_per_pixel is None else ln * mm_per_pixel))
    return out


def merge_polylines(polylines: list[CrackPolyline], delta: float, mm_per_pixel: float | None = None) -> list[CrackPolyline]:
    """Join polylines whose end points lie within ``delta`` of each other."""
    pts = [list(p.points) for p in polylines]
    merged = True
    while merged:
        merged = False
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                a, b = pts[i], pts[j]
                for aa, bb in ((a, b), (a, b[::-1]), (a[::-1], b), (a[::-1], b[::-1])):
                    if math.dist(aa[-1], bb[0]) <= delta:
                        pts[i] = aa + bb
                        del pts[j]
                        merged = True
                        break
                if merged:
                    break
            if merged:
                break
    out = []
    for p in pts:
        ln = polyline_length(p)
        out.append(CrackPolyline(p, ln, None if mm_per_pixel is None else ln * mm_per_pixel))
    return out


# -- counting and frame statistics ----------------------------------------------


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def crack_number(polylines, region: tuple[int, int, int, int], scan_lines: int = 5, axis: str = "x") -> float:
    """Mean number of polyline crossings over evenly spaced scan lines.

    ``region`` is (x0, y0, width, height). Scan lines run parallel to the
    loading ``axis`` and sit at the centres of ``scan_lines`` equal strips.
    """
    x0, y0, w, h = region
    if axis not in ("x", "y"):
        raise ValueError("axis must be 'x' or 'y'")
    extent = h if axis == "x" else w
    if scan_lines < 1:
        raise ValueError("need at least one scan line")
    if scan_lines > extent:
        raise ValueError(f"{scan_lines} scan lines exceed the region extent of {extent} px")
    start = y0 if axis == "x" else x0
    levels = [start + (k + 0.5) * extent / scan_lines for k in range(scan_lines)]
    total = 0
    for pl in polylines:
        p = np.asarray(pl.points if isinstance(pl, CrackPolyline) else pl, dtype=np.float64)
        if len(p) < 2:
            continue
        coord = p[:, 1] if axis == "x" else p[:, 0]
        a, b = coord[:-1], coord[1:]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        for lvl in levels:
            total += int(np.count_nonzero((lo <= lvl) & (lvl < hi)))
    return total / scan_lines


def crack_measures(n: float, meta: FrameMeta) -> tuple[float | None, float]:
    """(ACW in um, CD in 1/m) from a crack number; ACW is absent below half a crack."""
    if n < 0:
        raise ValueError("crack number must be >= 0")
    acw = meta.lvdt_displacement / n * 1000.0 if n >= 0.5 else None
    return acw, n / meta.gauge_length


def frame_stats(raster: Raster, classifier, meta: FrameMeta, params: StatsParams = StatsParams(), jobs: int = 1) -> FrameStats:
    if meta is None:
        raise ValueError("frame metadata required for ACW and CD")
    grid = window_search(raster, classifier, params.window, jobs)
    zones = group_lcz(grid)
    mmpp = meta.mm_per_pixel
    polys: list[CrackPolyline] = []
    for z in zones:
        polys.extend(trace_cracks(raster, z, params, mmpp))
    polys = merge_polylines(polys, params.delta, mmpp)
    w, h = grid.cols * params.window, grid.rows * params.window
    n = crack_number(polys, (0, 0, w, h), params.scan_lines, params.axis)
    acw, cd = crack_measures(n, meta)
    return FrameStats(n, round_half_up(n), acw, cd, zones, polys, grid)


SERIES_COLUMNS = ["frameIndex", "strain", "load_kN", "crackNumberReal", "crackNumberInt", "acw_um", "cd_per_m"]


@dataclass
class SeriesRow:
    frame_index: int
    strain: float
    load: float | None
    crack_number: float
    crack_number_int: int
    acw_um: float | None
    cd_per_m: float


def series_stats(frames, metas, classifier, params: StatsParams = StatsParams(), jobs: int = 1):
    """Run frame_stats over a strain-ordered sequence.

    Returns (rows, stats). Unordered strains raise instead of being re-sorted.
    """
    if not frames:
        raise ValueError("no frames")
    if len(frames) != len(metas):
        raise ValueError("frames and metadata differ in length")
    strains = [m.applied_strain for m in metas]
    if any(b < a for a, b in zip(strains, strains[1:])):
        raise ValueError("frames are not ordered by strain")

    def one(i):
        return frame_stats(frames[i], classifier, metas[i], params)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            stats = list(pool.map(one, range(len(frames))))
    else:
        stats = [one(i) for i in range(len(frames))]
    rows = [
        SeriesRow(m.frame_index, m.applied_strain, m.load, s.crack_number, s.crack_number_int, s.acw_um, s.cd_per_m)
        for m, s in zip(metas, stats)
    ]
    return rows, stats


def _fmt(v) -> str:
    return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)


def series_csv(rows: list[SeriesRow]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(SERIES_COLUMNS)
    for r in rows:
        wr.writerow(
            [r.frame_index, _fmt(r.strain), _fmt(r.load), _fmt(r.crack_number), r.crack_number_int, _fmt(r.acw_um), _fmt(r.cd_per_m)]
        )
    return buf.getvalue()


def parse_series_csv(text: str) -> list[SeriesRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        def opt(k):
            return float(rec[k]) if rec[k] not in ("", None) else None

        rows.append(
            SeriesRow(
                int(rec["frameIndex"]), float(rec["strain"]), opt("load_kN"),
                float(rec["crackNumberReal"]), int(rec["crackNumberInt"]), opt("acw_um"), float(rec["cd_per_m"]),
            )
        )
    return rows


def pattern_json(stats: list[FrameStats], metas: list[FrameMeta]) -> str:
    doc = [
        {
            "frameIndex": m.frame_index,
            "polylines": [[[x, y] for x, y in p.points] for p in s.polylines],
        }
        for s, m in zip(stats, metas)
    ]
    return json.dumps(doc) + "\n"
