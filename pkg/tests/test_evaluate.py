"""ROC construction against a quadratic threshold-enumeration oracle."""

import numpy as np
import pytest

from conftest import rng

from shadowalign.attack.evaluate import roc_curve
from shadowalign.errors import ShapeError


def oracle_roc(scores, labels):
    """O(n^2) oracle: for every distinct threshold, count rates by brute
    force; returns points sorted by descending threshold plus the origin."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = (labels == 1).sum()
    n_neg = (labels == 0).sum()
    points = [(0.0, 0.0)]
    for t in sorted(set(scores), reverse=True):
        pred = scores >= t
        fpr = ((pred == 1) & (labels == 0)).sum() / n_neg
        tpr = ((pred == 1) & (labels == 1)).sum() / n_pos
        points.append((float(fpr), float(tpr)))
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    auc = float(np.trapezoid(tpr, fpr))
    return fpr, tpr, auc


def test_perfect_scores_give_auc_one():
    labels = np.array([1, 1, 0, 0])
    curve = roc_curve(labels.astype(float), labels)
    assert curve.auc == 1.0


def test_hand_case_auc_one_tpr_at_zero_fpr():
    curve = roc_curve(np.array([0.9, 0.8, 0.3, 0.1]), np.array([1, 1, 0, 0]), fprs=(0.0, 0.01))
    assert curve.auc == 1.0
    assert curve.tpr_at[0.0] == 1.0
    assert curve.tpr_at[0.01] == 1.0


def test_random_scores_near_half():
    g = rng(1)
    scores = g.random(10_000)
    labels = (g.random(10_000) < 0.5).astype(int)
    curve = roc_curve(scores, labels)
    assert abs(curve.auc - 0.5) < 0.02


@pytest.mark.parametrize("n", [10, 117, 1000])
def test_matches_quadratic_oracle_exactly(n):
    g = rng(n)
    scores = np.round(g.random(n), 2)  # duplicates force tie handling
    labels = (g.random(n) < 0.4).astype(int)
    labels[0] = 1
    labels[1] = 0
    curve = roc_curve(scores, labels)
    o_fpr, o_tpr, o_auc = oracle_roc(scores, labels)
    np.testing.assert_array_equal(curve.fpr, o_fpr)
    np.testing.assert_array_equal(curve.tpr, o_tpr)
    assert curve.auc == o_auc


def test_monotone_curves():
    g = rng(9)
    curve = roc_curve(g.random(500), (g.random(500) < 0.5).astype(int))
    assert np.all(np.diff(curve.fpr) >= 0)
    assert np.all(np.diff(curve.tpr) >= 0)
    assert curve.fpr[0] == 0.0 and curve.fpr[-1] == 1.0


def test_tpr_at_low_fpr_is_step_interpolated():
    scores = np.array([0.95, 0.9, 0.6, 0.5, 0.2, 0.1])
    labels = np.array([1, 0, 1, 0, 1, 0])
    curve = roc_curve(scores, labels, fprs=(0.01, 1 / 3, 1.0))
    assert curve.tpr_at[0.01] == pytest.approx(1 / 3)  # threshold above first FP
    assert curve.tpr_at[1 / 3] == pytest.approx(2 / 3)
    assert curve.tpr_at[1.0] == 1.0


def test_single_class_rejected():
    with pytest.raises(ShapeError):
        roc_curve(np.array([0.1, 0.9]), np.array([1, 1]))


def test_csv_contains_summary_rows():
    curve = roc_curve(np.array([0.9, 0.1]), np.array([1, 0]), fprs=(0.01,))
    csv = curve.to_csv()
    assert csv.startswith("fpr,tpr\n")
    assert "# auc,1\n" in csv
    assert "# tpr@0.01,1\n" in csv
