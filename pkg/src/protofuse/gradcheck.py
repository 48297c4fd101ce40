"""Finite-difference checks of every hand-written gradient path.

Each check builds a small float64 instance (B <= 4, D <= 8), perturbs every
entry of every input and parameter by +-eps, and compares the central
difference with autograd.  The error is relative in norm:
||g_auto - g_fd|| / max(||g_auto||, ||g_fd||, 1e-12).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import torch

from .alignment import Critic, diversity_regularizer, mi_estimator_loss, sample_alignment_loss
from .data_model import N_GROUPS
from .imputation import (
    DiscriminatorPair,
    TranslatorPair,
    adversarial_losses,
    cycle_loss,
    paired_reconstruction_loss,
)
from .prototyping import AttentionParams, ImportanceHead, cross_attention_refine
from .tasks import Task, classification_loss, survival_loss

DEFAULT_EPS = 1e-6
DEFAULT_TOL = 1e-4


@dataclass
class GradCheckResult:
    check: str
    tensor: str
    numel: int
    rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.rel_error <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.check}:{self.tensor} n={self.numel} rel_err={self.rel_error:.3e}"


def numerical_grad(fn: Callable[[], torch.Tensor], x: torch.Tensor, eps: float = DEFAULT_EPS) -> torch.Tensor:
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``x`` (modified in place, then restored)."""
    grad = torch.zeros_like(x)
    flat, gflat = x.data.view(-1), grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = fn().item()
            flat[i] = orig - eps
            down = fn().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
    return grad


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(a.norm().item(), b.norm().item(), 1e-12)
    return (a - b).norm().item() / denom


def check_function(
    name: str,
    fn: Callable[[], torch.Tensor],
    tensors: Dict[str, torch.Tensor],
    eps: float = DEFAULT_EPS,
    tol: float = DEFAULT_TOL,
) -> List[GradCheckResult]:
    for t in tensors.values():
        t.requires_grad_(True)
        t.grad = None
    fn().backward()
    results = []
    for tname, t in tensors.items():
        analytic = t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)
        numeric = numerical_grad(fn, t, eps)
        results.append(GradCheckResult(name, tname, t.numel(), relative_error(analytic, numeric), tol))
    return results


def _params(module: torch.nn.Module, prefix: str) -> Dict[str, torch.Tensor]:
    return {f"{prefix}.{n}": p for n, p in module.named_parameters()}


def _gen(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed)


def _randn(*shape, g):
    return torch.randn(*shape, generator=g, dtype=torch.float64)


# ---------------------------------------------------------------------------
# Individual suites
# ---------------------------------------------------------------------------


def check_cross_attention(seed=0, eps=DEFAULT_EPS, tol=DEFAULT_TOL):
    g = _gen(seed)
    d, n, m = 8, N_GROUPS, 5
    params = AttentionParams(d, n_iterations=2, generator=g).double()
    protos, patches = _randn(2, n, d, g=g), _randn(2, m, d, g=g)
    mask = torch.ones(2, m, dtype=torch.bool)
    mask[1, -2:] = False
    w = _randn(2, n, d, g=g)

    def fn():
        out, _ = cross_attention_refine(protos, patches, params, mask)
        return (out * w).sum()

    return check_function("cross_attention", fn, {"prototypes": protos, "patches": patches, **_params(params, "attn")}, eps, tol)


def check_importance(seed=0, eps=DEFAULT_EPS, tol=DEFAULT_TOL):
    g = _gen(seed)
    d = 8
    head = ImportanceHead(d, generator=g).double()
    tokens, w = _randn(3, N_GROUPS, d, g=g), _randn(3, N_GROUPS, d, g=g)

    def fn():
        weights = torch.sigmoid(head(tokens))
        return (tokens * weights.unsqueeze(-1) * w).sum()

    return check_function("importance", fn, {"tokens": tokens, **_params(head, "head")}, eps, tol)


def check_mi_estimator(seed=0, eps=DEFAULT_EPS, tol=DEFAULT_TOL, paired_denominator=False):
    g = _gen(seed)
    d = 8
    critic = Critic(d, generator=g).double()
    p, q = _randn(4, d, g=g), _randn(4, d, g=g)
    name = "mi_estimator_paired" if paired_denominator else "mi_estimator"
    return check_function(
        name, lambda: mi_estimator_loss(p, q, critic, paired_denominator), {"P": p, "G": q, **_params(critic, "critic")}, eps, tol
    )


def check_diversity(seed=0, eps=DEFAULT_EPS, tol=DEFAULT_TOL):
    g = _gen(seed)
    x = _randn(4, 8, g=g)
    return check_function("diversity_regularizer", lambda: diversity_regularizer(x), {"G": x}, eps, tol)


def check_sample_alignment(seed=0, eps=DEFAULT_EPS, tol=DEFAULT_TOL):
    g = _gen(seed)
    p, q = _randn(4, 8, g=g), _randn(4, 8, g=g)
    return check_function("sample_alignment", lambda: sample_alignment_loss(p, q), {"P": p, "G": q}, eps, tol)


def _translation_instance(seed):
    g = _gen(seed)
    d = 8
    t = TranslatorPair(d, generator=g, residual=False, n_rows=N_GROUPS).double()
    disc = DiscriminatorPair(d, generator=g).double()
    return t, disc, _randn(2, N_GROUPS, d, g=g), _randn(2, N_GROUPS, d, g=g)


def check_cycle(seed=0, eps=DEFAULT_EPS, tol=DEFAULT_TOL):
    t, _, p, q = _translation_instance(seed)
    return check_function("cycle", lambda: cycle_loss(p, q, t), {"P": p, "G": q, **_params(t, "translators")}, eps, tol)


def check_paired_reconstruction(seed=0, eps=DEFAULT_EPS, tol=DEFAULT_TOL):
    t, _, p, q = _translation_instance(seed)
    observed = torch.ones(2, N_GROUPS, dtype=torch.bool)
    observed[0, 2] = False
    return check_function(
        "paired_reconstruction",
        lambda: paired_reconstruction_loss(p, q, t, observed),
        {"P": p, "G": q, **_params(t.F_P_to_G, "F_P_to_G")},
        eps,
        tol,
    )


def check_adversarial(seed=0, eps=DEFAULT_EPS, tol=DEFAULT_TOL):
    t, disc, p, q = _translation_instance(seed)

    def fn():
        adv_g, adv_p = adversarial_losses(p, q, t, disc)
        return adv_g + adv_p

    return check_function(
        "adversarial", fn, {"P": p, "G": q, **_params(t, "translators"), **_params(disc, "discriminators")}, eps, tol
    )


def check_classification(seed=0, eps=DEFAULT_EPS, tol=DEFAULT_TOL):
    g = _gen(seed)
    logits = _randn(4, 6, g=g)
    labels = torch.tensor([0, 3, 5, 3])
    return check_function("classification_loss", lambda: classification_loss(logits, labels), {"logits": logits}, eps, tol)


def check_survival(seed=0, eps=DEFAULT_EPS, tol=DEFAULT_TOL):
    g = _gen(seed)
    logits = _randn(4, 4, g=g)
    bins = torch.tensor([0, 1, 3, 2])
    events = torch.tensor([1, 0, 1, 0])
    return check_function("survival_nll", lambda: survival_loss(logits, bins, events), {"logits": logits}, eps, tol)


def check_model(seed=0, eps=DEFAULT_EPS, tol=DEFAULT_TOL):
    """Task loss of a tiny end-to-end model w.r.t. each parameter group it reaches."""
    from .model import Batch, ProtoFuseModel

    torch.manual_seed(seed)
    g = _gen(seed)
    d = 8
    names = [f"category {i}" for i in range(N_GROUPS)]
    model = ProtoFuseModel(d_embed=d, dim=d, task=Task.SURVIVAL, category_names=names, seed=seed).double()
    n_genes, b, m = 12, 3, 5
    gene_mask = torch.ones(b, n_genes, dtype=torch.bool)
    gene_mask[0, :2] = False  # empty group 0 for patient 0 -> imputed row
    batch = Batch(
        patches=_randn(b, m, d, g=g),
        patch_mask=torch.ones(b, m, dtype=torch.bool),
        gene_values=_randn(b, n_genes, g=g),
        gene_mask=gene_mask,
        groups=torch.arange(n_genes) * N_GROUPS // n_genes,
        has_genomics=torch.tensor([True, True, False]),
        diagnosis=torch.zeros(b, dtype=torch.long),
        grade=torch.zeros(b, dtype=torch.long),
        time_bin=torch.tensor([0, 2, 3]),
        event=torch.tensor([1, 0, 1]),
        times=torch.zeros(b).numpy(),
    )
    missing = torch.tensor([False, True, True])
    weight = torch.tensor([0.0, 0.4, 0.0], dtype=torch.float64)

    def fn():
        out = model(batch, missing=missing, real_weight=weight)
        return survival_loss(out["logits"], batch.time_bin, batch.event)

    results = []
    for group, params in model.named_group_parameters().items():
        if group == "discriminator":
            continue  # the task loss never reaches the discriminators
        for r in check_function(f"model[{group}]", fn, dict(params), eps, tol):
            results.append(r)
    return results


SUITES: Dict[str, Callable[..., List[GradCheckResult]]] = {
    "cross_attention": check_cross_attention,
    "importance": check_importance,
    "mi_estimator": check_mi_estimator,
    "mi_estimator_paired": lambda **kw: check_mi_estimator(paired_denominator=True, **kw),
    "diversity_regularizer": check_diversity,
    "sample_alignment": check_sample_alignment,
    "cycle": check_cycle,
    "paired_reconstruction": check_paired_reconstruction,
    "adversarial": check_adversarial,
    "classification_loss": check_classification,
    "survival_nll": check_survival,
    "model": check_model,
}


def run_all(
    seed: int = 0, eps: float = DEFAULT_EPS, tol: float = DEFAULT_TOL, suites: Sequence[str] = tuple(SUITES)
) -> List[GradCheckResult]:
    results: List[GradCheckResult] = []
    for name in suites:
        results.extend(SUITES[name](seed=seed, eps=eps, tol=tol))
    return results


def main(seed: int = 0) -> bool:
    start = time.perf_counter()
    results = run_all(seed)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} gradient checks passed in {time.perf_counter() - start:.1f}s")
    return ok
