import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from protofuse.errors import PreconditionError, UndefinedMetricError
from protofuse.tasks import (
    MetricsReport,
    Task,
    classification_loss,
    classification_metrics,
    concordance_index,
    quartile_cuts,
    risk_from_hazards,
    survival_loss,
    time_bins,
)

f64 = torch.float64


def _rand(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=f64)


def test_task_output_sizes():
    assert (Task.DIAGNOSIS.n_outputs, Task.GRADING.n_outputs, Task.SURVIVAL.n_outputs) == (6, 3, 4)


# -- classification loss -------------------------------------------------------


def test_uniform_logits_give_log_c():
    assert abs(classification_loss(torch.zeros(6, dtype=f64), 2).item() - math.log(6)) < 1e-12


def test_saturated_true_class():
    logits = torch.zeros(6, dtype=f64)
    logits[4] = 20.0
    assert abs(classification_loss(logits, 4).item() - math.log1p(5 * math.exp(-20))) < 1e-15


def test_classification_loss_matches_oracle():
    logits = _rand(5, 3, seed=1)
    labels = [0, 2, 1, 1, 0]
    expected = sum(oracles.log_softmax_nll(r, y) for r, y in zip(logits.tolist(), labels)) / 5
    assert abs(classification_loss(logits, labels).item() - expected) < 1e-12


def test_bad_label():
    with pytest.raises(PreconditionError):
        classification_loss(torch.zeros(3), 3)
    with pytest.raises(PreconditionError):
        classification_loss(torch.zeros(3), -1)


# -- survival loss -------------------------------------------------------------


def test_single_bin_event():
    assert abs(survival_loss(torch.zeros(1, dtype=f64), 0, True).item() - math.log(2)) < 1e-12


def test_certain_survival_censored():
    assert survival_loss(torch.tensor([-60.0], dtype=f64), 0, False).item() < 1e-20


def test_survival_matches_product_oracle():
    logits = _rand(8, 4, seed=2) * 2
    bins = [0, 1, 2, 3, 3, 2, 1, 0]
    events = [True, False, True, False, True, True, False, False]
    expected = sum(oracles.survival_nll(r, t, e) for r, t, e in zip(logits.tolist(), bins, events)) / 8
    assert abs(survival_loss(logits, bins, events).item() - expected) < 1e-10


def test_survival_clamp():
    # likelihood below the floor saturates at -log(1e-7)
    assert abs(survival_loss(torch.tensor([-40.0], dtype=f64), 0, True).item() + math.log(1e-7)) < 1e-9


def test_survival_bad_bin():
    with pytest.raises(PreconditionError):
        survival_loss(torch.zeros(1, 4), 4, True)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.integers(0, 3))
def test_survival_loss_decreases_with_event_bin_hazard(seed, t):
    logits = _rand(4, seed=seed)
    eps = 1e-4
    up, down = logits.clone(), logits.clone()
    up[t] += eps
    down[t] -= eps
    slope = (survival_loss(up, t, True) - survival_loss(down, t, True)).item() / (2 * eps)
    assert slope < 0


def test_risk_is_sum_of_cumulative_hazards():
    logits = _rand(4, seed=3)
    h = [1 / (1 + math.exp(-x)) for x in logits.tolist()]
    expected = sum(sum(h[: k + 1]) for k in range(4))
    assert abs(risk_from_hazards(logits).item() - expected) < 1e-12


def test_time_bins_quartiles():
    times = np.arange(1, 9, dtype=float)
    cuts = quartile_cuts(times)
    assert np.bincount(time_bins(times, cuts), minlength=4).tolist() == [2, 2, 2, 2]


# -- concordance ---------------------------------------------------------------


def test_c_index_perfect_and_inverted():
    assert concordance_index([3, 2, 1], [1, 2, 3], [1, 1, 1]) == 1.0
    assert concordance_index([1, 2, 3], [1, 2, 3], [1, 1, 1]) == 0.0
    assert concordance_index([1, 1, 1], [1, 2, 3], [1, 1, 1]) == 0.5


def test_c_index_matches_pair_oracle():
    rng = np.random.default_rng(4)
    for _ in range(20):
        risk = rng.integers(0, 4, 6).astype(float)
        times = rng.integers(1, 5, 6).astype(float)
        events = rng.random(6) < 0.6
        if not any(events[i] and times[i] < times[j] for i in range(6) for j in range(6)):
            continue
        assert abs(concordance_index(risk, times, events) - oracles.c_index(risk, times, events)) < 1e-12


def test_c_index_undefined():
    with pytest.raises(UndefinedMetricError):
        concordance_index([1, 2], [1, 2], [0, 0])
    with pytest.raises(PreconditionError):
        concordance_index([1], [1], [1])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_c_index_rank_invariance(seed):
    rng = np.random.default_rng(seed)
    risk = rng.standard_normal(10)
    times = rng.exponential(1, 10)
    events = np.ones(10, bool)
    assert concordance_index(risk, times, events) == concordance_index(np.exp(3 * risk) + 1, times, events)


# -- classification metrics ----------------------------------------------------


def test_perfect_classifier():
    labels = [0, 1, 2, 1, 0, 2]
    report = classification_metrics(np.eye(3)[labels], labels)
    for m in ("auc", "accuracy", "sensitivity", "specificity", "f1"):
        assert getattr(report, m) == 1.0


def test_binary_separable():
    report = classification_metrics(np.array([0.9, 0.1]), [1, 0])
    assert report.auc == 1.0


def test_metrics_match_oracle():
    rng = np.random.default_rng(5)
    scores = rng.random((20, 3))
    scores[3, 1] = scores[7, 1]  # tied AUC scores
    labels = rng.integers(0, 3, 20).tolist()
    report = classification_metrics(scores, labels, 3)
    ref = oracles.classification_metrics(scores.tolist(), labels, 3)
    for m, v in ref.items():
        assert abs(getattr(report, m) - v) < 1e-12, m


def test_absent_class_is_flagged_and_excluded():
    scores = np.array([[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.6, 0.3, 0.1]])
    labels = [0, 1, 0]
    report = classification_metrics(scores, labels, 3)
    assert report.flags == ["absent_class:2"]
    ref = oracles.classification_metrics(scores.tolist(), labels, 3)
    assert report.sensitivity == ref["sensitivity"] == 1.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_metric_invariances(seed):
    rng = np.random.default_rng(seed)
    scores = rng.standard_normal((15, 3))
    labels = np.concatenate([[0, 1, 2], rng.integers(0, 3, 12)])
    base = classification_metrics(scores, labels)
    mono = classification_metrics(np.exp(scores) * np.array([1.0, 2.0, 3.0]), labels)
    assert abs(base.auc - mono.auc) < 1e-12
    assert classification_metrics(scores * 7.5, labels).accuracy == base.accuracy
    for m in ("auc", "accuracy", "sensitivity", "specificity", "f1"):
        assert 0.0 <= getattr(base, m) <= 1.0


def test_report_row_format():
    report = MetricsReport("survival", 20, c_index=0.61234567, tags={"fold": "0", "rate": "0.20"})
    assert MetricsReport.columns() == ["task", "fold", "mode", "rate", "strategy", "n_samples", "auc",
                                       "accuracy", "sensitivity", "specificity", "f1", "c_index", "flags"]
    assert report.to_row() == ["survival", "0", "", "0.20", "", "20", "NA", "NA", "NA", "NA", "NA", "0.612346", ""]
