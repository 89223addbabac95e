"""Command-line front end. Every subcommand is a thin adapter over one library call."""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys

from . import augment, crackstats, dataset, metrics, micromech, synthgen
from .classify import (
    AdtClassifier,
    CnnHeadClassifier,
    MlpClassifier,
    TrainConfig,
    TrainingError,
    activation_heatmap,
    desk_backbone,
    extract_features,
    format_predictions,
    load_cnn,
    load_mlp,
    mlp_train,
    parse_predictions,
    predict_dataset,
    save_mlp,
    sfnn_sizes,
    train_head,
)
from .classify.cnn import GraphError, overlay_heatmap
from .raster import ImageFormatError, image_read, image_write, tile

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CLASSIFIERS = ("adt", "sfnn-bnw", "sfnn-rgb", "cnn-head")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# -- configuration ---------------------------------------------------------------

# key -> converter; flags given on the command line win over the config file
CONFIG_KEYS = {
    "seed": int,
    "window": int,
    "classifier": str,
    "out": str,
    "jobs": int,
    "model": str,
    "backbone_weights": str,
    "backbone_topology": str,
    "feature_layer": int,
    "backbone_seed": int,
    "min_pixels": int,
    "epochs": int,
    "learning_rate": float,
    "momentum": float,
    "batch_size": int,
    "hidden": int,
    "k": float,
    "delta": float,
    "min_len": float,
    "scan_lines": int,
    "axis": str,
    "test_frac": float,
    "train_frac": float,
    "frames": int,
    "tiles": int,
}


def parse_config(text: str) -> dict:
    """``key=value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise UsageError(f"config line {n}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError:
            raise UsageError(f"config line {n}: bad value for {key}: {value!r}") from None
    return out


def _apply_config(args: argparse.Namespace) -> None:
    if not args.config:
        return
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read config: {exc}") from None
    for key, value in cfg.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _opt(args, name, default):
    v = getattr(args, name, None)
    return default if v is None else v


# -- shared helpers -----------------------------------------------------------------


def _write_text(args, text: str) -> None:
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _classifier(args):
    kind = _opt(args, "classifier", "adt")
    if kind not in CLASSIFIERS:
        raise UsageError(f"unknown classifier {kind!r}")
    if kind == "adt":
        return AdtClassifier(_opt(args, "min_pixels", 1))
    if not args.model:
        raise UsageError(f"--model is required for classifier {kind}")
    model = load_mlp(args.model)
    if kind in ("sfnn-bnw", "sfnn-rgb"):
        return MlpClassifier(model, grayscale=kind == "sfnn-bnw")
    graph, layer = _backbone(args)
    return CnnHeadClassifier(graph, layer, model)


def _backbone(args):
    if args.backbone_weights or args.backbone_topology:
        if not (args.backbone_weights and args.backbone_topology and args.feature_layer is not None):
            raise UsageError("--backbone-weights, --backbone-topology and --feature-layer go together")
        return load_cnn(args.backbone_weights, args.backbone_topology), args.feature_layer
    return desk_backbone(_opt(args, "backbone_seed", 0), _opt(args, "window", 227))


def _train_config(args) -> TrainConfig:
    d = TrainConfig()
    return TrainConfig(
        learning_rate=_opt(args, "learning_rate", d.learning_rate),
        momentum=_opt(args, "momentum", d.momentum),
        batch_size=_opt(args, "batch_size", d.batch_size),
        epochs=_opt(args, "epochs", d.epochs),
        seed=_opt(args, "seed", d.seed),
    )


def _stats_params(args) -> crackstats.StatsParams:
    d = crackstats.StatsParams()
    return crackstats.StatsParams(
        window=_opt(args, "window", d.window),
        k=_opt(args, "k", d.k),
        delta=_opt(args, "delta", d.delta),
        min_len=_opt(args, "min_len", d.min_len),
        scan_lines=_opt(args, "scan_lines", d.scan_lines),
        axis=_opt(args, "axis", d.axis),
    )


def _labels_for(rows, manifest):
    if len(rows) != len(manifest):
        raise DataError(f"{len(rows)} predictions but {len(manifest)} manifest records")
    return [manifest.records[r.index].label for r in rows]


META_COLUMNS = ["frameIndex", "path", "lvdt_mm", "gauge_m", "strain", "mm_per_pixel", "load_kN"]


def format_frame_index(paths, metas) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(META_COLUMNS)
    for p, m in zip(paths, metas):
        wr.writerow([m.frame_index, p, repr(m.lvdt_displacement), repr(m.gauge_length),
                     repr(m.applied_strain), repr(m.mm_per_pixel), "" if m.load is None else repr(m.load)])
    return buf.getvalue()


def load_frame_index(path):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: no frames listed")
    frames, metas = [], []
    for n, r in enumerate(rows, 2):
        try:
            meta = crackstats.FrameMeta(
                float(r["lvdt_mm"]), float(r["gauge_m"]), float(r["strain"]), float(r["mm_per_pixel"]),
                int(r["frameIndex"]), float(r["load_kN"]) if r.get("load_kN") else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: line {n}: {exc}") from None
        frames.append(image_read(os.path.join(base, r["path"])))
        metas.append(meta)
    return frames, metas


# -- subcommands --------------------------------------------------------------------------


def cmd_tile(args):
    img = image_read(args.image)
    grid = tile(img, _opt(args, "window", 227))
    lines = [f"# rows={grid.rows} cols={grid.cols} window={grid.window}"]
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        ext = ".pgm" if img.channels == 1 else ".ppm"
        for r, c in grid.cells():
            name = f"r{r:03d}_c{c:03d}{ext}"
            image_write(grid.tile_at(img, r, c), os.path.join(args.out, name))
            lines.append(f"{r}\t{c}\t{name}")
        with open(os.path.join(args.out, "tiles.tsv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    else:
        sys.stdout.write(lines[0] + "\n")


def cmd_annotate(args):
    window = _opt(args, "window", 227)
    img = image_read(args.image)
    grid = tile(img, window)
    with open(args.labels, encoding="utf-8") as fh:
        rows = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if len(rows) != grid.rows or any(len(r) != grid.cols for r in rows):
        raise DataError(f"label grid must be {grid.rows} lines of {grid.cols} P/N characters")
    refs, labels = [], []
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch not in "PN":
                raise DataError(f"label grid line {r + 1}: bad label {ch!r}")
            refs.append((args.image, r, c))
            labels.append(ch)
    manifest = dataset.annotate(refs, labels, window, source=os.path.basename(args.image))
    if args.out:
        dataset.save_manifest(manifest, args.out)
    else:
        sys.stdout.write(dataset.format_manifest(manifest))


def cmd_augment(args):
    if not args.out:
        raise UsageError("augment needs --out <manifest path>")
    m = dataset.load_manifest(args.manifest)
    expanded = augment.expand_dataset(m, args.n_pos, args.n_neg, augment.dark_centroid_predicate, _opt(args, "seed", 0))
    dataset.save_manifest(expanded, args.out)


def cmd_split(args):
    if not args.out:
        raise UsageError("split needs --out <directory>")
    m = dataset.load_manifest(args.manifest)
    d = dataset.SplitSpec()
    spec = dataset.SplitSpec(_opt(args, "test_frac", d.test_frac), _opt(args, "train_frac", d.train_frac_of_remainder), _opt(args, "seed", 0))
    os.makedirs(args.out, exist_ok=True)
    for name, part in zip(("train", "val", "test"), dataset.split(m, spec)):
        dataset.save_manifest(part, os.path.join(args.out, f"{name}.tsv"))


def cmd_train_sfnn(args):
    if not args.out:
        raise UsageError("train-sfnn needs --out <model path>")
    kind = _opt(args, "classifier", "sfnn-bnw")
    if kind not in ("sfnn-bnw", "sfnn-rgb"):
        raise UsageError("train-sfnn takes --classifier sfnn-bnw or sfnn-rgb")
    train = dataset.load_manifest(args.train)
    val = dataset.load_manifest(args.val) if args.val else train.subset([])
    gray = kind == "sfnn-bnw"
    sizes = sfnn_sizes(train.window, 1 if gray else 3, _opt(args, "hidden", 128))
    model, trace = mlp_train(train, val, _train_config(args), sizes, grayscale=gray)
    save_mlp(model, args.out)
    for epoch, acc in enumerate(trace.val_accuracy):
        sys.stderr.write(f"epoch {epoch + 1}: val_accuracy={acc:.4f}\n")


def cmd_train_head(args):
    if not args.out:
        raise UsageError("train-head needs --out <model path>")
    train = dataset.load_manifest(args.train)
    graph, layer = _backbone(args)
    feats = extract_features(graph, [train.load_tile(i) for i in range(len(train))], layer)
    model = train_head(feats, train.labels(), _train_config(args), _opt(args, "hidden", 128))
    save_mlp(model, args.out)


def cmd_predict(args):
    m = dataset.load_manifest(args.manifest)
    rows = predict_dataset(_classifier(args), m, _opt(args, "jobs", 1))
    _write_text(args, format_predictions(rows))


def _read_predictions(path):
    with open(path, encoding="utf-8") as fh:
        return parse_predictions(fh.read())


def cmd_eval(args):
    rows = _read_predictions(args.predictions)
    actual = _labels_for(rows, dataset.load_manifest(args.manifest))
    rep = metrics.report(metrics.confusion([r.label for r in rows], actual))
    _write_text(args, rep.to_json())


def cmd_roc(args):
    rows = _read_predictions(args.predictions)
    actual = _labels_for(rows, dataset.load_manifest(args.manifest))
    _write_text(args, metrics.roc([r.prob_p for r in rows], actual).to_csv())


def cmd_stats(args):
    frames, metas = load_frame_index(args.frames)
    rows, stats = crackstats.series_stats(frames, metas, _classifier(args), _stats_params(args), _opt(args, "jobs", 1))
    _write_text(args, crackstats.series_csv(rows))
    if args.pattern:
        with open(args.pattern, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(crackstats.pattern_json(stats, metas))


def cmd_fit(args):
    with open(args.series, encoding="utf-8") as fh:
        rows = crackstats.parse_series_csv(fh.read())
    if args.kind == "trilinear":
        res = micromech.fit_trilinear([(r.strain, r.cd_per_m) for r in rows])
    else:
        if not args.fit_window:
            raise UsageError("constant-acw needs --fit-window lo,hi")
        try:
            lo, hi = (float(v) for v in args.fit_window.split(","))
        except ValueError:
            raise UsageError("--fit-window expects two comma-separated strains") from None
        res = micromech.fit_constant_acw([(r.strain, r.acw_um) for r in rows], (lo, hi))
    _write_text(args, res.to_json())


def cmd_theory(args):
    p = micromech.MicromechParams(
        args.fiber_length, args.fiber_radius, args.fiber_fraction, args.matrix_fraction,
        args.matrix_modulus, args.matrix_failure_strain, args.bond_strength, args.snubbing,
    )
    _write_text(args, micromech.theory_outputs(p, args.exponential).to_text())


def cmd_synth(args):
    if not args.out:
        raise UsageError("synth needs --out <directory>")
    os.makedirs(args.out, exist_ok=True)
    seed = _opt(args, "seed", 7)
    n_tiles = _opt(args, "tiles", 0)
    if n_tiles:
        spec = synthgen.TileSpec(window=_opt(args, "window", 227), channels=args.channels)
        manifest, _ = synthgen.gen_tiles(spec, n_tiles, seed)
        dataset.save_manifest(manifest, os.path.join(args.out, "tiles.tsv"))
        return
    spec = synthgen.default_specimen(seed, _opt(args, "frames", 12))
    frames, metas, truth = synthgen.gen_sequence(spec, args.channels)
    ext = ".pgm" if args.channels == 1 else ".ppm"
    names = []
    for img, m in zip(frames, metas):
        name = f"frame_{m.frame_index:04d}{ext}"
        image_write(img, os.path.join(args.out, name))
        names.append(name)
    with open(os.path.join(args.out, "frames.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_frame_index(names, metas))
    with open(os.path.join(args.out, "truth.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(truth.to_json())


def cmd_heatmap(args):
    if not args.out:
        raise UsageError("heatmap needs --out <image path>")
    img = image_read(args.tile)
    graph, _ = _backbone(args)
    heat = activation_heatmap(graph, img, args.aggregate)
    image_write(overlay_heatmap(img, heat) if args.overlay else heat, args.out)


# -- parser ------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--window", type=int)
    common.add_argument("--classifier", choices=CLASSIFIERS)
    common.add_argument("--out")
    common.add_argument("--jobs", type=int)
    common.add_argument("--model", help="trained MLP (SFNN or head) file")
    common.add_argument("--backbone-weights")
    common.add_argument("--backbone-topology")
    common.add_argument("--feature-layer", type=int)
    common.add_argument("--backbone-seed", type=int)
    common.add_argument("--min-pixels", type=int)

    train = argparse.ArgumentParser(add_help=False)
    train.add_argument("--epochs", type=int)
    train.add_argument("--learning-rate", type=float)
    train.add_argument("--momentum", type=float)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--hidden", type=int)

    p = _Parser(prog="crackscope", description="Crack detection and crack statistics.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_, parents=()):
        sp = sub.add_parser(name, help=help_, parents=[common, *parents])
        sp.set_defaults(func=func)
        return sp

    sp = add("tile", cmd_tile, "split an image into windows")
    sp.add_argument("image")
    sp = add("annotate", cmd_annotate, "label the windows of an image from a P/N grid file")
    sp.add_argument("image")
    sp.add_argument("labels")
    sp = add("augment", cmd_augment, "append modified copies of tiles")
    sp.add_argument("manifest")
    sp.add_argument("--n-pos", type=int, required=True)
    sp.add_argument("--n-neg", type=int, required=True)
    sp = add("split", cmd_split, "stratified train/val/test split")
    sp.add_argument("manifest")
    sp.add_argument("--test-frac", type=float)
    sp.add_argument("--train-frac", type=float)
    sp = add("train-sfnn", cmd_train_sfnn, "train a fully connected classifier on pixels", [train])
    sp.add_argument("train")
    sp.add_argument("--val")
    sp = add("train-head", cmd_train_head, "train a classifier head on backbone features", [train])
    sp.add_argument("train")
    sp = add("predict", cmd_predict, "classify every tile of a manifest")
    sp.add_argument("manifest")
    sp = add("eval", cmd_eval, "metrics from predictions and true labels")
    sp.add_argument("predictions")
    sp.add_argument("manifest")
    sp = add("roc", cmd_roc, "ROC curve and AUC")
    sp.add_argument("predictions")
    sp.add_argument("manifest")
    sp = add("stats", cmd_stats, "crack statistics over a frame sequence")
    sp.add_argument("frames", help="frame index CSV")
    sp.add_argument("--pattern", help="write traced polylines as JSON here")
    sp.add_argument("--k", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--min-len", type=float)
    sp.add_argument("--scan-lines", type=int)
    sp.add_argument("--axis", choices=("x", "y"))
    sp = add("fit", cmd_fit, "fit crack-density or crack-width models to a stats series")
    sp.add_argument("series")
    sp.add_argument("--kind", choices=("trilinear", "constant-acw"), default="trilinear")
    sp.add_argument("--fit-window", help="lo,hi strain window for constant-acw")
    sp = add("theory", cmd_theory, "micromechanical crack spacing and maximum crack density")
    sp.add_argument("--fiber-length", type=float, required=True, help="mm")
    sp.add_argument("--fiber-radius", type=float, required=True, help="mm")
    sp.add_argument("--fiber-fraction", type=float, required=True)
    sp.add_argument("--matrix-fraction", type=float, required=True)
    sp.add_argument("--matrix-modulus", type=float, required=True, help="GPa")
    sp.add_argument("--matrix-failure-strain", type=float, required=True)
    sp.add_argument("--bond-strength", type=float, required=True, help="MPa")
    sp.add_argument("--snubbing", type=float, default=0.0)
    sp.add_argument("--exponential", action="store_true")
    sp = add("synth", cmd_synth, "generate a synthetic frame sequence or tile set")
    sp.add_argument("--frames", type=int)
    sp.add_argument("--tiles", type=int, help="tiles per class; generates a tile set instead of frames")
    sp.add_argument("--channels", type=int, choices=(1, 3), default=3)
    sp = add("heatmap", cmd_heatmap, "backbone activation heatmap for one tile")
    sp.add_argument("tile")
    sp.add_argument("--aggregate", choices=("mean", "max"), default="mean")
    sp.add_argument("--overlay", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("missing subcommand")
        _apply_config(args)
        if _opt(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"crackscope: usage error: {exc}\n")
        sys.stderr.write(parser.format_usage())
        return EXIT_USAGE
    except (TrainingError, micromech.SaturationError, FloatingPointError, OverflowError) as exc:
        sys.stderr.write(f"crackscope: numeric failure: {exc}\n")
        return EXIT_NUMERIC
    except (DataError, ImageFormatError, dataset.ManifestError, GraphError, OSError, ValueError, KeyError) as exc:
        sys.stderr.write(f"crackscope: data error: {' '.join(str(exc).split())}\n")
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
