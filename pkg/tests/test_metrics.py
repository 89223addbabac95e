import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crackscope.metrics import ConfusionMatrix, confusion, mann_whitney_auc, report, roc


def test_confusion_examples():
    actual = ["P"] * 10 + ["N"] * 10
    assert confusion(actual, actual) == ConfusionMatrix(10, 0, 10, 0)
    assert confusion(["P"] * 20, actual) == ConfusionMatrix(10, 10, 0, 0)
    with pytest.raises(ValueError):
        confusion([], [])
    with pytest.raises(ValueError):
        confusion(["P"], ["P", "N"])


def test_report_examples():
    r = report(ConfusionMatrix(50, 5, 40, 5))
    assert r.accuracy == 0.9
    assert r.recall_tn == 40 / 45
    assert r.recall_standard == 50 / 55
    assert report(ConfusionMatrix(0, 0, 10, 0)).precision is None


def test_report_absent_never_zero():
    r = report(ConfusionMatrix(0, 0, 0, 3))
    assert r.precision is None and r.recall_standard == 0.0 and r.f1_standard is None
    assert "precision=absent" in r.to_text()


def test_empty_report():
    with pytest.raises(ValueError):
        report(ConfusionMatrix(0, 0, 0, 0))


@given(st.tuples(*[st.integers(0, 30)] * 4).filter(lambda t: sum(t) > 0))
def test_accuracy_integer_identity(t):
    cm = ConfusionMatrix(*t)
    assert round(report(cm).accuracy * cm.total) == cm.tp + cm.tn


def test_roc_examples():
    labels = ["P"] * 5 + ["N"] * 5
    assert roc([0.9] * 5 + [0.1] * 5, labels).auc == 1.0
    assert roc([0.5] * 10, labels).auc == 0.5
    with pytest.raises(ValueError):
        roc([0.1, 0.2], ["P", "P"])


def test_roc_endpoints_and_monotone():
    rng = np.random.default_rng(0)
    s = rng.random(50)
    lab = np.where(rng.random(50) < 0.5, "P", "N")
    c = roc(s, lab)
    assert (c.fpr[0], c.tpr[0]) == (0.0, 0.0) and (c.fpr[-1], c.tpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert c.to_csv().splitlines()[0] == "threshold,fpr,tpr"


def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == "P"]
    neg = [s for s, l in zip(scores, labels) if l == "N"]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


@given(st.lists(st.tuples(st.integers(0, 6), st.sampled_from("PN")), min_size=2, max_size=40))
def test_auc_equals_mann_whitney(items):
    scores = [s / 6 for s, _ in items]
    labels = [l for _, l in items]
    if len(set(labels)) < 2:
        return
    a = roc(scores, labels).auc
    assert a == mann_whitney_auc(scores, labels)
    assert math.isclose(a, brute_auc(scores, labels), rel_tol=0, abs_tol=1e-12)


def test_auc_invariances():
    rng = np.random.default_rng(3)
    s = rng.normal(size=200)
    lab = np.where(rng.random(200) < 0.4, "P", "N")
    a = roc(s, lab).auc
    assert roc(np.exp(3 * s), lab).auc == a
    flipped = np.where(lab == "P", "N", "P")
    assert math.isclose(roc(s, flipped).auc, 1 - a, abs_tol=1e-12)


def test_macro_averages():
    cm = ConfusionMatrix(8, 2, 6, 4)
    r = report(cm)
    p_p, p_n = 8 / 10, 6 / 10
    r_p, r_n = 8 / 12, 6 / 8
    assert math.isclose(r.macro_precision, (p_p + p_n) / 2)
    assert math.isclose(r.macro_recall, (r_p + r_n) / 2)
    f = [2 * a * b / (a + b) for a, b in ((p_p, r_p), (p_n, r_n))]
    assert math.isclose(r.macro_f1, sum(f) / 2)


def test_report_json_keys():
    keys = set(report(ConfusionMatrix(1, 1, 1, 1)).as_dict())
    assert {"accuracy", "recall_standard", "recall_tn", "f1_tn"} <= keys


@pytest.mark.parametrize("tp,fp,tn,fn", list(itertools.product([0, 3], [0, 2], [0, 4], [0, 1]))[1:])
def test_report_small_grid(tp, fp, tn, fn):
    r = report(ConfusionMatrix(tp, fp, tn, fn))
    for v in r.as_dict().values():
        assert v is None or 0.0 <= v <= 1.0
