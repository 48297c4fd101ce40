"""Patient-level prediction, metrics under missingness, and the missingness sweep."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .config import FillStrategy, TrainConfig
from .data_model import Cohort, MissingMode, MissingnessSpec, apply_missingness, split_folds
from .errors import UndefinedMetricError
from .model import make_batch
from .tasks import MetricsReport, Task, classification_metrics, concordance_index, risk_from_hazards
from .training import ModelState, train

DEFAULT_RATES = (0.0, 0.2, 0.5, 0.8, 1.0)
DEFAULT_MODES = (MissingMode.PATIENT_WISE, MissingMode.FEATURE_WISE)
DEFAULT_STRATEGIES = (FillStrategy.SGI, FillStrategy.MEAN_FILL)
EVAL_CHUNK = 64


@dataclass
class Predictions:
    """Per-patient scores: class probabilities (n, C) or survival risks (n,)."""

    task: Task
    patient_ids: List[str]
    scores: np.ndarray
    diagnosis: np.ndarray
    grade: np.ndarray
    times: np.ndarray
    events: np.ndarray
    slide_scores: Dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def concat(parts: Sequence["Predictions"]) -> "Predictions":
        return Predictions(
            parts[0].task,
            [pid for p in parts for pid in p.patient_ids],
            np.concatenate([p.scores for p in parts]),
            np.concatenate([p.diagnosis for p in parts]),
            np.concatenate([p.grade for p in parts]),
            np.concatenate([p.times for p in parts]),
            np.concatenate([p.events for p in parts]),
            {k: v for p in parts for k, v in p.slide_scores.items()},
        )


def _strategy(state: ModelState, strategy) -> FillStrategy:
    return FillStrategy(strategy) if strategy is not None else state.config.fill_strategy


@torch.no_grad()
def predict(
    state: ModelState,
    cohort: Cohort,
    spec: Optional[MissingnessSpec] = None,
    strategy: Optional[FillStrategy] = None,
) -> Predictions:
    """Score every slide, then average the scores of each patient's slides."""
    if spec is not None:
        cohort = apply_missingness(cohort, spec)
    strategy = _strategy(state, strategy)
    model = state.model
    model.eval()
    fill = state.mean_tokens if strategy is FillStrategy.MEAN_FILL else None
    pairs = [(p, s) for p in cohort.patients for s in range(len(p.slides))]
    per_slide = []
    for start in range(0, len(pairs), EVAL_CHUNK):
        chunk = pairs[start : start + EVAL_CHUNK]
        batch = make_batch([p for p, _ in chunk], [s for _, s in chunk], state.gene_groups)
        logits = model(batch, fill_tokens=fill)["logits"]
        if model.task is Task.SURVIVAL:
            per_slide.append(risk_from_hazards(logits).double().numpy())
        else:
            per_slide.append(torch.softmax(logits, dim=-1).double().numpy())
    model.train()
    slide_scores = np.concatenate(per_slide)
    scores, by_patient, pos = [], {}, 0
    for p in cohort.patients:
        k = len(p.slides)
        block = slide_scores[pos : pos + k]
        by_patient[p.patient_id] = block
        scores.append(block.mean(axis=0))
        pos += k
    return Predictions(
        model.task,
        cohort.patient_ids,
        np.stack(scores),
        np.array([p.label_diagnosis for p in cohort.patients]),
        np.array([p.label_grade for p in cohort.patients]),
        np.array([p.survival_time for p in cohort.patients]),
        np.array([p.event_indicator for p in cohort.patients]),
        by_patient,
    )


def metrics_from_predictions(pred: Predictions, tags: Optional[Dict[str, str]] = None) -> MetricsReport:
    tags = dict(tags or {})
    if pred.task is Task.SURVIVAL:
        report = MetricsReport(task=pred.task.value, n_samples=len(pred.patient_ids), tags=tags)
        try:
            report.c_index = concordance_index(pred.scores, pred.times, pred.events)
        except UndefinedMetricError:
            report.flags.append("undefined:c_index")
        return report
    labels = pred.diagnosis if pred.task is Task.DIAGNOSIS else pred.grade
    report = classification_metrics(pred.scores, labels, n_classes=pred.scores.shape[1])
    report.task = pred.task.value
    report.tags = tags
    return report


def condition_tags(spec: Optional[MissingnessSpec], strategy: FillStrategy, fold: str = "") -> Dict[str, str]:
    return {
        "fold": fold,
        "mode": spec.mode.value if spec is not None else "none",
        "rate": f"{spec.rate:.2f}" if spec is not None else "0.00",
        "strategy": strategy.value,
    }


def evaluate(
    state: ModelState,
    cohort: Cohort,
    spec: Optional[MissingnessSpec] = None,
    strategy: Optional[FillStrategy] = None,
    fold: str = "",
) -> MetricsReport:
    strategy = _strategy(state, strategy)
    pred = predict(state, cohort, spec, strategy)
    return metrics_from_predictions(pred, condition_tags(spec, strategy, fold))


@dataclass
class FoldRun:
    state: ModelState
    train_ids: List[str]
    val_ids: List[str]
    log: List[Dict]


def cross_validate(cohort: Cohort, cfg: TrainConfig, k: int = 5, seed: Optional[int] = None) -> List[FoldRun]:
    """Train one model per fold on that fold's training patients."""
    runs = []
    for train_ids, val_ids in split_folds(cohort, k, cfg.seed if seed is None else seed):
        state, rows = train(cohort.subset(train_ids), cfg)
        runs.append(FoldRun(state, train_ids, val_ids, rows))
    return runs


def pooled_predictions(
    runs: Sequence[FoldRun],
    cohort: Cohort,
    spec: Optional[MissingnessSpec] = None,
    strategy: Optional[FillStrategy] = None,
) -> Predictions:
    """Out-of-fold predictions of every patient, concatenated across folds."""
    return Predictions.concat([predict(r.state, cohort.subset(r.val_ids), spec, strategy) for r in runs])


def sweep_runs(
    runs: Sequence[FoldRun],
    cohort: Cohort,
    rates: Iterable[float] = DEFAULT_RATES,
    modes: Iterable = DEFAULT_MODES,
    strategies: Iterable = DEFAULT_STRATEGIES,
    seed: int = 0,
) -> List[MetricsReport]:
    rows = []
    for mode in modes:
        mode = MissingMode(mode)
        for rate in rates:
            for strategy in strategies:
                strategy = FillStrategy(strategy)
                spec = MissingnessSpec(mode, float(rate), seed)
                pred = pooled_predictions(runs, cohort, spec, strategy)
                rows.append(metrics_from_predictions(pred, condition_tags(spec, strategy, f"cv{len(runs)}")))
    return rows


def missingness_sweep(
    cohort: Cohort,
    cfg: TrainConfig,
    rates: Iterable[float] = DEFAULT_RATES,
    modes: Iterable = DEFAULT_MODES,
    strategies: Iterable = DEFAULT_STRATEGIES,
    k: int = 5,
) -> List[MetricsReport]:
    """Cross-validated metrics for every (mode, rate, strategy) combination.

    One model is trained per fold; each condition is applied to the held-out
    patients only and metrics are computed on the pooled out-of-fold scores.
    """
    runs = cross_validate(cohort, cfg, k)
    return sweep_runs(runs, cohort, rates, modes, strategies, cfg.seed)


def format_results(reports: Sequence[MetricsReport]) -> str:
    lines = ["\t".join(MetricsReport.columns())]
    lines += ["\t".join(r.to_row()) for r in reports]
    return "\n".join(lines) + "\n"


def write_results(path, reports: Sequence[MetricsReport]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_results(reports))
    return path


def read_results(path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))
