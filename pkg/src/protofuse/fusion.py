"""Bipartite fusion of histology and genomic prototypes.

Prototype pairs are ranked by cosine affinity and the Top-K are matched
greedily without reusing a prototype; matched pairs go through an affine
mixer and every unmatched prototype is carried through unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, NormalizationError, PreconditionError

DEFAULT_TOP_K = 3


@dataclass(frozen=True)
class FusionSelection:
    pairs: Tuple[Tuple[int, int], ...]
    residual_p: Tuple[int, ...]
    residual_g: Tuple[int, ...]

    @property
    def k(self) -> int:
        return len(self.pairs)


def affinity_matrix(p, g):
    """Row-pairwise cosine similarity, shape (..., N_P, N_G)."""
    p_norm = p.norm(dim=-1, keepdim=True)
    g_norm = g.norm(dim=-1, keepdim=True)
    if bool((p_norm == 0).any()) or bool((g_norm == 0).any()):
        raise NormalizationError("zero-norm prototype row has no cosine affinity")
    return (p / p_norm) @ (g / g_norm).transpose(-1, -2)


def select_top_k(A, K: int) -> FusionSelection:
    """Greedy Top-K matching: take the largest entry whose row and column are
    both unused, ties broken by the smaller (n, m)."""
    a = A.detach().cpu().numpy() if isinstance(A, torch.Tensor) else np.asarray(A)
    n_p, n_g = a.shape
    if not 0 <= K <= min(n_p, n_g):
        raise ConfigError(f"K must lie in [0, {min(n_p, n_g)}], got {K}")
    rows, cols = np.indices(a.shape)
    # lexsort keys: last is primary
    order = np.lexsort((cols.ravel(), rows.ravel(), -a.ravel()))
    used_p, used_g, pairs = set(), set(), []
    for flat in order:
        if len(pairs) == K:
            break
        n, m = divmod(int(flat), n_g)
        if n in used_p or m in used_g:
            continue
        pairs.append((n, m))
        used_p.add(n)
        used_g.add(m)
    return FusionSelection(
        tuple(pairs),
        tuple(i for i in range(n_p) if i not in used_p),
        tuple(j for j in range(n_g) if j not in used_g),
    )


class FusionParams(nn.Module):
    """Affine mixer from a concatenated pair (2D) back to D."""

    def __init__(self, dim: int, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.pair_mixer = nn.Linear(2 * dim, dim)
        with torch.no_grad():
            self.pair_mixer.weight.copy_(torch.randn(dim, 2 * dim, generator=generator) / math.sqrt(2 * dim))
            self.pair_mixer.bias.zero_()


def fuse(p, g, sel: FusionSelection, params: FusionParams):
    """[mixer(p_n ++ g_m) per pair] ++ residual histology ++ residual genomic."""
    if sel.residual_p and max(sel.residual_p) >= p.shape[0] or sel.residual_g and max(sel.residual_g) >= g.shape[0]:
        raise PreconditionError("selection indices exceed prototype counts")
    parts = []
    if sel.pairs:
        idx_p = torch.tensor([n for n, _ in sel.pairs])
        idx_g = torch.tensor([m for _, m in sel.pairs])
        parts.append(params.pair_mixer(torch.cat([p[idx_p], g[idx_g]], dim=-1)))
    parts.append(p[list(sel.residual_p)])
    parts.append(g[list(sel.residual_g)])
    return torch.cat(parts, dim=0)


def fuse_batch(p, g, selections: Sequence[FusionSelection], params: FusionParams):
    """Batched :func:`fuse` for selections that share one K; returns (B, L, D)."""
    ks = {s.k for s in selections}
    if len(ks) != 1:
        raise PreconditionError("batched fusion needs a common K")
    (k,) = ks
    d = p.shape[-1]

    def gather(x, idx):
        index = torch.tensor(idx, dtype=torch.long).unsqueeze(-1).expand(-1, -1, d)
        return torch.gather(x, 1, index)

    parts = []
    if k:
        pp = gather(p, [[n for n, _ in s.pairs] for s in selections])
        gg = gather(g, [[m for _, m in s.pairs] for s in selections])
        parts.append(params.pair_mixer(torch.cat([pp, gg], dim=-1)))
    if p.shape[1] > k:
        parts.append(gather(p, [list(s.residual_p) for s in selections]))
    if g.shape[1] > k:
        parts.append(gather(g, [list(s.residual_g) for s in selections]))
    return torch.cat(parts, dim=1)
