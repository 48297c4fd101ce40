"""Cross-modal alignment losses.

Distribution-wise alignment pairs a contrastive MI estimator with a
diversity regularizer on the genomic batch; sample-wise alignment matches the
intra-batch Gram matrices of the two modalities.  All losses take one pooled
vector per sample, shape (B, D).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, NormalizationError, PreconditionError
from .prototyping import AttentionParams, PrototypeSet, self_attention

DEFAULT_TEMPERATURE = 0.07
DEFAULT_LAMBDA_REG = 0.1


@dataclass(frozen=True)
class AlignmentConfig:
    lambda_reg: float = DEFAULT_LAMBDA_REG
    # sum the estimator's denominator over paired scores only (off: standard InfoNCE)
    paired_denominator: bool = False

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ConfigError("lambda_reg must be >= 0")


def pool_prototypes(protos: Union[PrototypeSet, torch.Tensor], importance: Optional[torch.Tensor] = None):
    """Importance-weighted mean over the prototype axis (-2)."""
    if isinstance(protos, PrototypeSet):
        tokens, importance = protos.tokens, protos.importance if importance is None else importance
    else:
        tokens = protos
    if tokens.shape[-2] < 1:
        raise PreconditionError("cannot pool an empty prototype set")
    if importance is None:
        return tokens.mean(dim=-2)
    w = importance.unsqueeze(-1)
    return (tokens * w).sum(dim=-2) / w.sum(dim=-2)


class Critic(nn.Module):
    """f_MI(p, g) = <a(p), b(g)> / temperature with a, b unit-normalized affine maps."""

    def __init__(self, dim: int, shared_dim: Optional[int] = None, temperature: float = DEFAULT_TEMPERATURE,
                 generator: Optional[torch.Generator] = None):
        super().__init__()
        if temperature <= 0:
            raise ConfigError("critic temperature must be > 0")
        shared_dim = shared_dim or dim
        self.temperature = temperature
        self.proj_p = nn.Linear(dim, shared_dim)
        self.proj_g = nn.Linear(dim, shared_dim)
        with torch.no_grad():
            for lin in (self.proj_p, self.proj_g):
                lin.weight.copy_(torch.randn(shared_dim, dim, generator=generator) / math.sqrt(dim))
                lin.bias.zero_()

    def embed(self, p, g):
        return F.normalize(self.proj_p(p), dim=-1), F.normalize(self.proj_g(g), dim=-1)

    def forward(self, p, g):
        """(B, B) score matrix, entry (i, j) = f_MI(p_i, g_j)."""
        a, b = self.embed(p, g)
        return a @ b.T / self.temperature

    def paired_cosine(self, p, g):
        a, b = self.embed(p, g)
        return (a * b).sum(-1)


def info_nce_from_scores(scores: torch.Tensor, paired_denominator: bool = False) -> torch.Tensor:
    """-sum_i log(exp(s_ii) / sum_j exp(s_ij)).

    With ``paired_denominator`` the denominator is sum_j exp(s_jj), i.e. the
    diagonal-only reading of the estimator.
    """
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1] or scores.shape[0] == 0:
        raise PreconditionError(f"need a non-empty square score matrix, got {tuple(scores.shape)}")
    diag = scores.diagonal()
    if paired_denominator:
        return -(diag - torch.logsumexp(diag, dim=0)).sum()
    return -(diag - torch.logsumexp(scores, dim=1)).sum()


def mi_estimator_loss(P_batch, G_batch, critic: Critic, paired_denominator: bool = False):
    if P_batch.shape[0] == 0 or P_batch.shape[0] != G_batch.shape[0]:
        raise PreconditionError("MI estimator needs B >= 1 paired rows")
    return info_nce_from_scores(critic(P_batch, G_batch), paired_denominator)


def _safe_pairwise_distance(x):
    sq = ((x.unsqueeze(1) - x.unsqueeze(0)) ** 2).sum(-1)
    # zero distances get a zero subgradient instead of NaN
    return torch.where(sq > 0, sq.clamp_min(torch.finfo(sq.dtype).tiny).sqrt(), torch.zeros_like(sq))


def diversity_regularizer(G_batch):
    """(1/B^2) sum_ij exp(-||g_i - g_j||), diagonal included."""
    if G_batch.shape[0] == 0:
        raise PreconditionError("diversity regularizer needs B >= 1")
    return torch.exp(-_safe_pairwise_distance(G_batch)).mean()


def distribution_loss(P_batch, G_batch, critic: Critic, cfg: AlignmentConfig = AlignmentConfig()):
    return mi_estimator_loss(P_batch, G_batch, critic, cfg.paired_denominator) + cfg.lambda_reg * diversity_regularizer(G_batch)


def _unit_rows(x):
    norms = x.norm(dim=-1, keepdim=True)
    if bool((norms == 0).any()):
        raise NormalizationError("zero-norm row cannot be L2-normalized")
    return x / norms


def gram_matrices(P_batch, G_batch):
    p, g = _unit_rows(P_batch), _unit_rows(G_batch)
    return p @ p.T, g @ g.T


def sample_alignment_loss(P_batch, G_batch):
    """(1/B^2) ||M_P - M_G||_F^2 over row-normalized Gram matrices."""
    m_p, m_g = gram_matrices(P_batch, G_batch)
    return ((m_p - m_g) ** 2).mean()


def alignment_loss(P_batch, G_batch, critic: Critic, cfg: AlignmentConfig = AlignmentConfig()):
    return sample_alignment_loss(P_batch, G_batch) + distribution_loss(P_batch, G_batch, critic, cfg)


class ClsAggregator(nn.Module):
    """Learnable [CLS] token plus one residual self-attention layer."""

    def __init__(self, dim: int, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.cls_token = nn.Parameter(torch.randn(dim, generator=generator) * 0.1)
        self.attn = AttentionParams(dim, n_iterations=1, generator=generator)


def aggregate_with_cls(protos: Union[PrototypeSet, torch.Tensor], agg: ClsAggregator) -> Tuple[torch.Tensor, torch.Tensor]:
    """Prepend the CLS token, run self-attention over N + 1 tokens.

    Returns the updated CLS vector (..., D) and the N contextualized tokens.
    """
    tokens = protos.tokens if isinstance(protos, PrototypeSet) else protos
    cls = agg.cls_token.to(tokens.dtype).expand(*tokens.shape[:-2], 1, tokens.shape[-1])
    out, _ = self_attention(torch.cat([cls, tokens], dim=-2), agg.attn)
    return out[..., 0, :], out[..., 1:, :]
