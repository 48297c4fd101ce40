"""Task heads, task losses and evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.stats import rankdata

from .data_model import N_DIAGNOSIS, N_GRADES
from .errors import PreconditionError, UndefinedMetricError

PROB_EPS = 1e-7
DEFAULT_SURVIVAL_BINS = 4


class Task(str, Enum):
    DIAGNOSIS = "diagnosis"
    GRADING = "grading"
    SURVIVAL = "survival"

    @property
    def n_outputs(self) -> int:
        return {Task.DIAGNOSIS: N_DIAGNOSIS, Task.GRADING: N_GRADES, Task.SURVIVAL: DEFAULT_SURVIVAL_BINS}[self]


class ClassifierHead(nn.Module):
    def __init__(self, dim: int, n_classes: int):
        super().__init__()
        self.linear = nn.Linear(dim, n_classes)

    def forward(self, x):
        return self.linear(x)


class SurvivalHead(nn.Module):
    """Affine map to discrete-time hazard logits."""

    def __init__(self, dim: int, n_bins: int = DEFAULT_SURVIVAL_BINS):
        super().__init__()
        self.n_bins = n_bins
        self.linear = nn.Linear(dim, n_bins)

    def forward(self, x):
        return self.linear(x)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def classification_loss(logits, label):
    """Mean negative log softmax probability of the true class."""
    logits = logits if logits.ndim > 1 else logits.unsqueeze(0)
    label = torch.as_tensor(label, dtype=torch.long).reshape(-1)
    n_classes = logits.shape[-1]
    if bool(((label < 0) | (label >= n_classes)).any()):
        raise PreconditionError(f"label outside [0, {n_classes})")
    return F.cross_entropy(logits, label)


def survival_loss(hazard_logits, time_bin, event):
    """Discrete-time hazard NLL, averaged over the batch.

    event:    -log(h_t * prod_{j<t}(1 - h_j))
    censored: -log(prod_{j<=t}(1 - h_j))
    Each likelihood is floored at ``PROB_EPS``.
    """
    logits = hazard_logits if hazard_logits.ndim > 1 else hazard_logits.unsqueeze(0)
    n_bins = logits.shape[-1]
    t = torch.as_tensor(time_bin, dtype=torch.long).reshape(-1)
    e = torch.as_tensor(event, dtype=torch.bool).reshape(-1)
    if bool(((t < 0) | (t >= n_bins)).any()):
        raise PreconditionError(f"time bin outside [0, {n_bins})")
    log_h = F.logsigmoid(logits)
    log_1mh = F.logsigmoid(-logits)
    cum_log_s = torch.cumsum(log_1mh, dim=-1)  # log S_k
    log_s_prev = torch.cat([torch.zeros_like(cum_log_s[..., :1]), cum_log_s[..., :-1]], dim=-1)
    rows = torch.arange(logits.shape[0])
    ll_event = log_h[rows, t] + log_s_prev[rows, t]
    ll_cens = cum_log_s[rows, t]
    ll = torch.where(e, ll_event, ll_cens).clamp_min(math.log(PROB_EPS))
    return -ll.mean()


def risk_from_hazards(hazard_logits):
    """Risk score = sum over bins of the cumulative hazard sum_{j<=k} h_j."""
    h = torch.sigmoid(hazard_logits)
    return torch.cumsum(h, dim=-1).sum(dim=-1)


def quartile_cuts(times: Sequence[float], n_bins: int = DEFAULT_SURVIVAL_BINS) -> np.ndarray:
    return np.quantile(np.asarray(times, dtype=float), np.arange(1, n_bins) / n_bins)


def time_bins(times, cuts) -> np.ndarray:
    return np.digitize(np.asarray(times, dtype=float), cuts, right=False)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    task: str
    n_samples: int
    auc: Optional[float] = None
    accuracy: Optional[float] = None
    sensitivity: Optional[float] = None
    specificity: Optional[float] = None
    f1: Optional[float] = None
    c_index: Optional[float] = None
    tags: Dict[str, str] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)

    METRICS = ("auc", "accuracy", "sensitivity", "specificity", "f1", "c_index")
    TAG_COLUMNS = ("fold", "mode", "rate", "strategy")

    @classmethod
    def columns(cls) -> List[str]:
        return ["task", *cls.TAG_COLUMNS, "n_samples", *cls.METRICS, "flags"]

    def to_row(self) -> List[str]:
        def fmt(v):
            return "NA" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"

        return [
            self.task,
            *(str(self.tags.get(c, "")) for c in self.TAG_COLUMNS),
            str(self.n_samples),
            *(fmt(getattr(self, m)) for m in self.METRICS),
            ";".join(self.flags),
        ]


def concordance_index(risk_scores, times, events) -> float:
    """Harrell's C.  Pair (i, j) is comparable when t_i < t_j and i had an event;
    it is concordant when risk_i > risk_j, and counts 0.5 on tied risks."""
    r = np.asarray(risk_scores, dtype=float)
    t = np.asarray(times, dtype=float)
    e = np.asarray(events, dtype=bool)
    if not (r.shape == t.shape == e.shape) or r.ndim != 1 or r.size < 2:
        raise PreconditionError("concordance_index needs equal-length vectors with n >= 2")
    comparable = (t[:, None] < t[None, :]) & e[:, None]
    n_comp = comparable.sum()
    if n_comp == 0:
        raise UndefinedMetricError("no comparable pairs")
    score = (r[:, None] > r[None, :]) + 0.5 * (r[:, None] == r[None, :])
    return float((score * comparable).sum() / n_comp)


def _binary_auc(pos_scores, neg_scores) -> float:
    ranks = rankdata(np.concatenate([pos_scores, neg_scores]))
    n_pos, n_neg = len(pos_scores), len(neg_scores)
    return float((ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def classification_metrics(scores, labels, n_classes: Optional[int] = None) -> MetricsReport:
    """Macro one-vs-rest AUC, accuracy and macro sensitivity/specificity/F1.

    A 1-D ``scores`` vector is read as the positive-class score of a binary
    problem.  Classes absent from ``labels`` are left out of every macro
    average and reported in ``flags``.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.ndim == 1:
        s = np.stack([1.0 - s, s], axis=1)
    if s.ndim != 2 or s.shape[0] != y.shape[0]:
        raise PreconditionError("scores must be (n, C) with one label per row")
    c = n_classes or s.shape[1]
    pred = np.argmax(s, axis=1)
    flags = []
    aucs, sens, specs, f1s = [], [], [], []
    for k in range(c):
        pos = y == k
        if not pos.any():
            flags.append(f"absent_class:{k}")
            continue
        tp = np.sum(pred[pos] == k)
        fn = np.sum(pos) - tp
        fp = np.sum(pred[~pos] == k)
        tn = np.sum(~pos) - fp
        sens.append(tp / (tp + fn))
        f1s.append(2 * tp / (2 * tp + fp + fn))
        if (~pos).any():
            specs.append(tn / (tn + fp))
            aucs.append(_binary_auc(s[pos, k], s[~pos, k]))
        else:
            flags.append(f"single_class:{k}")

    def mean(v):
        return float(np.mean(v)) if v else None

    return MetricsReport(
        task="classification",
        n_samples=int(y.size),
        auc=mean(aucs),
        accuracy=float(np.mean(pred == y)),
        sensitivity=mean(sens),
        specificity=mean(specs),
        f1=mean(f1s),
        flags=flags,
    )
