import numpy as np
import pytest
import torch

from protofuse.config import FillStrategy
from protofuse.data_model import MissingnessSpec
from protofuse.evaluation import (
    condition_tags,
    cross_validate,
    evaluate,
    format_results,
    metrics_from_predictions,
    pooled_predictions,
    predict,
    read_results,
    sweep_runs,
    write_results,
)
from protofuse.model import make_batch
from protofuse.tasks import MetricsReport, risk_from_hazards
from protofuse.training import train


def test_no_spec_equals_zero_rate(trained_tiny, tiny_cohort):
    state, _ = trained_tiny
    a = evaluate(state, tiny_cohort)
    b = evaluate(state, tiny_cohort, MissingnessSpec("patient_wise", 0.0))
    assert (a.c_index, a.n_samples) == (b.c_index, b.n_samples)


def test_strategy_tags_at_full_missingness(trained_tiny, tiny_cohort):
    state, _ = trained_tiny
    spec = MissingnessSpec("patient_wise", 1.0)
    sgi = evaluate(state, tiny_cohort, spec, FillStrategy.SGI)
    mf = evaluate(state, tiny_cohort, spec, FillStrategy.MEAN_FILL)
    assert sgi.tags != mf.tags
    assert (sgi.tags["strategy"], mf.tags["strategy"]) == ("sgi", "mean_fill")
    assert sgi.tags["rate"] == mf.tags["rate"] == "1.00"
    assert sgi.c_index != mf.c_index


def test_patient_score_is_mean_of_slide_scores(trained_tiny, tiny_cohort):
    state, _ = trained_tiny
    pred = predict(state, tiny_cohort)
    multi = [p for p in tiny_cohort.patients if len(p.slides) > 1]
    assert multi
    with torch.no_grad():
        for p in multi:
            per_slide = []
            for s in range(len(p.slides)):
                batch = make_batch([p], [s], state.gene_groups)
                per_slide.append(risk_from_hazards(state.model(batch)["logits"]).item())
            i = pred.patient_ids.index(p.patient_id)
            np.testing.assert_allclose(pred.scores[i], np.mean(per_slide), rtol=1e-6)
            np.testing.assert_allclose(pred.slide_scores[p.patient_id], per_slide, rtol=1e-6)


def test_prediction_does_not_depend_on_batch_composition(trained_tiny, tiny_cohort):
    state, _ = trained_tiny
    full = predict(state, tiny_cohort)
    half = predict(state, tiny_cohort.subset(tiny_cohort.patient_ids[3:7]))
    np.testing.assert_allclose(full.scores[3:7], half.scores, rtol=1e-5)


def test_feature_wise_missingness_is_repaired(trained_tiny, tiny_cohort):
    state, _ = trained_tiny
    base = predict(state, tiny_cohort).scores
    light = predict(state, tiny_cohort, MissingnessSpec("feature_wise", 0.2, 1)).scores
    assert np.all(np.isfinite(light))
    assert not np.array_equal(base, light)


def test_classification_evaluation(tiny_cohort, tiny_config):
    state, _ = train(tiny_cohort, tiny_config.replace(task="grading", epochs=2, phase1_epochs=1))
    report = evaluate(state, tiny_cohort)
    assert report.task == "grading"
    for m in ("auc", "accuracy", "sensitivity", "specificity", "f1"):
        assert 0.0 <= getattr(report, m) <= 1.0
    assert report.c_index is None


def test_undefined_c_index_is_flagged(trained_tiny, tiny_cohort):
    state, _ = trained_tiny
    pred = predict(state, tiny_cohort)
    pred.events = np.zeros_like(pred.events)
    report = metrics_from_predictions(pred)
    assert report.c_index is None and report.flags == ["undefined:c_index"]


@pytest.fixture(scope="module")
def tiny_runs(tiny_cohort, tiny_config):
    return cross_validate(tiny_cohort, tiny_config.replace(epochs=3, phase1_epochs=1), k=3)


def test_cross_validation_covers_every_patient_once(tiny_runs, tiny_cohort):
    val = [pid for r in tiny_runs for pid in r.val_ids]
    assert sorted(val) == sorted(tiny_cohort.patient_ids)
    for r in tiny_runs:
        assert not set(r.train_ids) & set(r.val_ids)
    pooled = pooled_predictions(tiny_runs, tiny_cohort)
    assert sorted(pooled.patient_ids) == sorted(tiny_cohort.patient_ids)


def test_sweep_counts_and_zero_rate_rows(tiny_runs, tiny_cohort, tmp_path):
    rows = sweep_runs(tiny_runs, tiny_cohort)
    assert len(rows) == 20
    keys = {(r.tags["mode"], r.tags["rate"], r.tags["strategy"]) for r in rows}
    assert len(keys) == 20
    assert {r.tags["rate"] for r in rows} == {"0.00", "0.20", "0.50", "0.80", "1.00"}
    for mode in ("patient_wise", "feature_wise"):
        zero = [r for r in rows if r.tags["mode"] == mode and r.tags["rate"] == "0.00"]
        assert len(zero) == 2
        assert zero[0].to_row()[5:12] == zero[1].to_row()[5:12]
    path = write_results(tmp_path / "results.tsv", rows)
    back = read_results(path)
    assert len(back) == 20 and list(back[0]) == MetricsReport.columns()
    assert path.read_text() == format_results(rows)


def test_condition_tags():
    assert condition_tags(None, FillStrategy.SGI) == {"fold": "", "mode": "none", "rate": "0.00", "strategy": "sgi"}
    tags = condition_tags(MissingnessSpec("feature_wise", 0.5), FillStrategy.MEAN_FILL, "cv5")
    assert tags == {"fold": "cv5", "mode": "feature_wise", "rate": "0.50", "strategy": "mean_fill"}
