"""Labeled tile manifests, annotation, class balancing and stratified splits."""

from __future__ import annotations

import math
import os
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

from .raster import Raster, image_read, image_write
from .rng import SplitMix64

POSITIVE = "P"
NEGATIVE = "N"
LABELS = (POSITIVE, NEGATIVE)

MANIFEST_MAGIC = "#crackscope-manifest v1"


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentRecord:
    """One labeled tile.

    ``row``/``col`` are ``None`` for a standalone tile file; otherwise the tile
    is window-sized crop (row, col) of the image at ``path``.
    """

    path: str
    label: str
    row: int | None = None
    col: int | None = None
    provenance: str = "original"
    source: str = ""

    def __post_init__(self):
        if self.label not in LABELS:
            raise ManifestError(f"label must be P or N, got {self.label!r}")
        if (self.row is None) != (self.col is None):
            raise ManifestError("row and col must be given together")
        for name in ("path", "provenance", "source"):
            if any(ch in getattr(self, name) for ch in "\t\n"):
                raise ManifestError(f"{name} may not contain tabs or newlines")


@dataclass(eq=False)
class DatasetManifest:
    """Ordered tile records plus an optional in-memory tile store.

    ``store`` maps a record path to a Raster; store entries take precedence
    over files on disk, which lets synthetic and augmented tiles live in
    memory until :func:`save_manifest` writes them out.
    """

    records: list[SegmentRecord]
    window: int = 227
    store: dict[str, Raster] = field(default_factory=dict, repr=False)
    base_dir: str | None = None

    def __len__(self):
        return len(self.records)

    def counts(self) -> dict[str, int]:
        out = {POSITIVE: 0, NEGATIVE: 0}
        for rec in self.records:
            out[rec.label] += 1
        return out

    def labels(self) -> list[str]:
        return [rec.label for rec in self.records]

    def subset(self, indices: Sequence[int]) -> "DatasetManifest":
        return DatasetManifest(
            [self.records[i] for i in indices], self.window, self.store, self.base_dir
        )

    def with_records(self, records: list[SegmentRecord], store=None) -> "DatasetManifest":
        return DatasetManifest(
            list(records), self.window, self.store if store is None else store, self.base_dir
        )

    def _resolve_path(self, path: str) -> str:
        if self.base_dir and not os.path.isabs(path):
            return os.path.join(self.base_dir, path)
        return path

    def load_tile(self, index_or_record) -> Raster:
        rec = (
            self.records[index_or_record]
            if isinstance(index_or_record, int)
            else index_or_record
        )
        if rec.path in self.store:
            img = self.store[rec.path]
        else:
            full = self._resolve_path(rec.path)
            if not os.path.exists(full):
                raise ManifestError(f"unresolvable tile reference {rec.path!r}")
            img = image_read(full)
        if rec.row is not None:
            w = self.window
            try:
                return img.crop(rec.col * w, rec.row * w, w, w)
            except ValueError:
                raise ManifestError(
                    f"tile ({rec.row}, {rec.col}) outside image {rec.path!r}"
                ) from None
        if img.width != self.window or img.height != self.window:
            raise ManifestError(
                f"tile {rec.path!r} is {img.width}x{img.height}, expected {self.window}"
            )
        return img


def annotate(tiles: Sequence, labels: Sequence[str], window: int = 227, source: str = "") -> DatasetManifest:
    """Pair tile refs with labels.

    A tile ref is a path string or a ``(path, row, col)`` tuple.
    """
    if len(tiles) != len(labels):
        raise ManifestError(f"{len(tiles)} tiles but {len(labels)} labels")
    records = []
    for ref, label in zip(tiles, labels):
        if isinstance(ref, (tuple, list)):
            path, row, col = ref
            records.append(SegmentRecord(str(path), label, int(row), int(col), source=source))
        else:
            records.append(SegmentRecord(str(ref), label, source=source))
    return DatasetManifest(records, window)


@dataclass(frozen=True)
class SplitSpec:
    test_frac: float = 0.10
    train_frac_of_remainder: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.test_frac < 1:
            raise ValueError("test_frac must lie in (0, 1)")
        if not 0 < self.train_frac_of_remainder < 1:
            raise ValueError("train_frac_of_remainder must lie in (0, 1)")


def _floor_frac(frac: float, n: int) -> int:
    # guard against 0.7 * 450 == 314.99999999999994
    return int(math.floor(frac * n + 1e-9))


def _class_indices(manifest: DatasetManifest) -> dict[str, list[int]]:
    out = {POSITIVE: [], NEGATIVE: []}
    for i, rec in enumerate(manifest.records):
        out[rec.label].append(i)
    return out


def split(manifest: DatasetManifest, spec: SplitSpec = SplitSpec()):
    """Stratified train/val/test split; returns three manifests in input order."""
    if len(manifest) < 10:
        raise ManifestError("split needs at least 10 records")
    by_class = _class_indices(manifest)
    for label, idx in by_class.items():
        if not idx:
            raise ManifestError(f"class {label} has no records; cannot stratify")
    rng = SplitMix64(spec.seed)
    train, val, test = [], [], []
    for label in LABELS:
        idx = by_class[label]
        order = [idx[j] for j in rng.permutation(len(idx))]
        n_test = _floor_frac(spec.test_frac, len(idx))
        rest = order[n_test:]
        n_train = _floor_frac(spec.train_frac_of_remainder, len(rest))
        test += order[:n_test]
        train += rest[:n_train]
        val += rest[n_train:]
    return tuple(manifest.subset(sorted(part)) for part in (train, val, test))


def balance(manifest: DatasetManifest, seed: int = 0) -> DatasetManifest:
    """Subsample the majority class uniformly without replacement."""
    by_class = _class_indices(manifest)
    n_min = min(len(v) for v in by_class.values())
    if n_min == 0:
        raise ManifestError("minority class is empty; cannot balance")
    major = max(LABELS, key=lambda k: len(by_class[k]))
    if len(by_class[major]) == n_min:
        return manifest.subset(range(len(manifest)))
    rng = SplitMix64(seed)
    idx = by_class[major]
    keep = {idx[j] for j in rng.permutation(len(idx))[:n_min]}
    minor = [i for i in range(len(manifest)) if manifest.records[i].label != major]
    return manifest.subset(sorted(keep.union(minor)))


# -- manifest files ------------------------------------------------------------


def format_manifest(manifest: DatasetManifest) -> str:
    lines = [f"{MANIFEST_MAGIC} window={manifest.window}"]
    for rec in manifest.records:
        row = "-" if rec.row is None else str(rec.row)
        col = "-" if rec.col is None else str(rec.col)
        lines.append("\t".join([rec.path, row, col, rec.label, rec.provenance, rec.source]))
    return "\n".join(lines) + "\n"


def parse_manifest(text: str, base_dir: str | None = None) -> DatasetManifest:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(MANIFEST_MAGIC):
        raise ManifestError("missing '#crackscope-manifest v1' header")
    head = lines[0][len(MANIFEST_MAGIC) :].strip()
    if not head.startswith("window="):
        raise ManifestError("header lacks window=<px>")
    try:
        window = int(head[len("window=") :])
    except ValueError:
        raise ManifestError(f"bad window in header: {head!r}") from None
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise ManifestError(f"line {lineno}: expected 6 tab-separated fields, got {len(parts)}")
        path, row, col, label, prov, source = parts
        try:
            r = None if row == "-" else int(row)
            c = None if col == "-" else int(col)
        except ValueError:
            raise ManifestError(f"line {lineno}: bad row/col") from None
        records.append(SegmentRecord(path, label, r, c, prov, source))
    return DatasetManifest(records, window, base_dir=base_dir)


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh.read(), base_dir=os.path.dirname(os.path.abspath(path)))


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike, tile_dir: str | None = None) -> DatasetManifest:
    """Write the manifest; in-memory tiles are written as PGM/PPM under ``tile_dir``.

    Returns the manifest as it now exists on disk (paths relative to the
    manifest file's directory).
    """
    out_dir = os.path.dirname(os.path.abspath(path))
    records = []
    if manifest.store:
        tile_dir = tile_dir or os.path.join(out_dir, "tiles")
        os.makedirs(tile_dir, exist_ok=True)
    written: dict[str, str] = {}
    for i, rec in enumerate(manifest.records):
        if rec.path in manifest.store:
            if rec.path not in written:
                img = manifest.store[rec.path]
                ext = ".pgm" if img.channels == 1 else ".ppm"
                fname = os.path.join(tile_dir, f"tile_{len(written):06d}{ext}")
                image_write(img, fname)
                written[rec.path] = os.path.relpath(fname, out_dir)
            records.append(replace(rec, path=written[rec.path]))
        else:
            full = manifest._resolve_path(rec.path)
            records.append(replace(rec, path=os.path.relpath(os.path.abspath(full), out_dir)))
    disk = DatasetManifest(records, manifest.window, base_dir=out_dir)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_manifest(disk))
    return disk
