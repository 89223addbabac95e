"""Per-tile classifiers and batch prediction over manifests."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .base import N_INDEX, P_INDEX, Prediction, softmax
from .cnn import (
    BatchNorm,
    CnnGraph,
    CnnHeadClassifier,
    Conv2D,
    Dense,
    GlobalAvgPool,
    GraphError,
    MaxPool,
    ReLU,
    ResidualAdd,
    Softmax,
    activation_heatmap,
    cnn_forward,
    desk_backbone,
    extract_features,
    infer_shapes,
    load_cnn,
    write_cnn,
)
from .mlp import (
    MlpClassifier,
    MlpModel,
    TrainConfig,
    TrainingError,
    TrainTrace,
    gradient_check,
    load_mlp,
    mlp_predict,
    mlp_train,
    save_mlp,
    sfnn_sizes,
    train_head,
)
from .otsu import AdtClassifier, adt_classify, otsu_threshold

mlp_gradient_check = gradient_check


@dataclass(frozen=True)
class PredictionRow:
    index: int
    prob_p: float
    prob_n: float
    label: str


def predict_dataset(classifier, manifest, jobs: int = 1) -> list[PredictionRow]:
    """Classify every record; rows come back in manifest order."""

    def one(i):
        pred = classifier(manifest.load_tile(i))
        return PredictionRow(i, pred.prob_p, pred.prob_n, pred.label)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, range(len(manifest))))
    return [one(i) for i in range(len(manifest))]


def format_predictions(rows: list[PredictionRow]) -> str:
    lines = ["recordIndex\tprobP\tprobN\tlabel"]
    lines += [f"{r.index}\t{r.prob_p:.17g}\t{r.prob_n:.17g}\t{r.label}" for r in rows]
    return "\n".join(lines) + "\n"


def parse_predictions(text: str) -> list[PredictionRow]:
    rows = []
    for line in text.splitlines()[1:]:
        if not line.strip():
            continue
        idx, pp, pn, label = line.split("\t")
        rows.append(PredictionRow(int(idx), float(pp), float(pn), label))
    return rows
