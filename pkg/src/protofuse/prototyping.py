"""Biological prototyping: prompt-initialized histology prototypes refined by
cross-attention over patches, group-pooled genomic prototypes refined by
self-attention, and sigmoid importance weighting."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from .data_model import N_GROUPS, GenomicProfile, SlideBag
from .errors import ArityError, InitializationError, LoadError, PreconditionError, SchemaError

N_PROTOTYPES = N_GROUPS
DEFAULT_ITERATIONS = 2


@dataclass
class PrototypeSet:
    """Ordered, named prototype tokens with optional importance weights."""

    tokens: torch.Tensor
    names: Tuple[str, ...]
    importance: Optional[torch.Tensor] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.names = tuple(self.names)
        if self.tokens.ndim != 2 or self.tokens.shape[0] != len(self.names):
            raise ArityError(f"{len(self.names)} names for token matrix of shape {tuple(self.tokens.shape)}")
        if self.importance is not None and self.importance.shape != (len(self.names),):
            raise ArityError("importance must have one entry per prototype")

    def __len__(self) -> int:
        return len(self.names)


class ProviderKind(str, Enum):
    FILE_BACKED = "file_backed"
    DETERMINISTIC_HASH = "deterministic_hash"


@dataclass(frozen=True)
class EmbeddingProvider:
    """Maps a prompt string to a fixed vector of length ``dimension``.

    ``deterministic_hash`` draws a unit Gaussian direction seeded by the
    SHA-256 of the prompt.  ``file_backed`` looks prompts up in a table loaded
    by :meth:`from_file`, e.g. precomputed text-encoder outputs.
    """

    kind: ProviderKind
    dimension: int
    table: Optional[Dict[str, np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ProviderKind(self.kind))
        if self.kind is ProviderKind.FILE_BACKED and self.table is None:
            raise InitializationError("file_backed provider needs a prompt table")

    @classmethod
    def hashed(cls, dimension: int) -> "EmbeddingProvider":
        return cls(ProviderKind.DETERMINISTIC_HASH, dimension)

    @classmethod
    def from_file(cls, path, names: Sequence[str]) -> "EmbeddingProvider":
        """Rows of the delimited file are matched to ``names`` in order."""
        path = Path(path)
        if not path.is_file():
            raise LoadError(f"prompt embedding file not found: {path}")
        first = path.read_text().splitlines()[0]
        rows = np.loadtxt(path, delimiter="\t" if "\t" in first else ",", ndmin=2)
        if rows.shape[0] != len(names):
            raise SchemaError(f"{path}: {rows.shape[0]} rows for {len(names)} prompts")
        table = {n: rows[i].astype(np.float32) for i, n in enumerate(names)}
        return cls(ProviderKind.FILE_BACKED, rows.shape[1], table)

    def __call__(self, prompt: str) -> np.ndarray:
        if self.kind is ProviderKind.FILE_BACKED:
            try:
                return self.table[prompt]
            except KeyError:
                raise InitializationError(f"no embedding for prompt {prompt!r}") from None
        seed = int.from_bytes(hashlib.sha256(prompt.encode("utf-8")).digest()[:8], "little")
        v = np.random.default_rng(seed).standard_normal(self.dimension)
        return (v / np.linalg.norm(v)).astype(np.float32)


def init_histology_prototypes(category_names: Sequence[str], provider: EmbeddingProvider) -> PrototypeSet:
    if len(category_names) != N_PROTOTYPES:
        raise ArityError(f"expected {N_PROTOTYPES} histology categories, got {len(category_names)}")
    rows = []
    for name in category_names:
        try:
            vec = np.asarray(provider(name), dtype=np.float32)
        except InitializationError:
            raise
        except Exception as exc:  # provider backends are pluggable
            raise InitializationError(f"embedding provider failed for {name!r}: {exc}") from exc
        if vec.shape != (provider.dimension,):
            raise InitializationError(f"prompt {name!r}: vector of shape {vec.shape}")
        rows.append(vec)
    return PrototypeSet(torch.from_numpy(np.stack(rows)), tuple(category_names))


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------


class AttentionParams(nn.Module):
    """Shared W_q, W_k, W_v (D x D) used for every refinement iteration."""

    def __init__(self, dim: int, n_iterations: int = DEFAULT_ITERATIONS, generator: Optional[torch.Generator] = None):
        super().__init__()
        if n_iterations < 1:
            raise PreconditionError("n_iterations must be positive")
        self.n_iterations = n_iterations
        scale = 1.0 / math.sqrt(dim)
        self.W_q = nn.Parameter(torch.randn(dim, dim, generator=generator) * scale)
        self.W_k = nn.Parameter(torch.randn(dim, dim, generator=generator) * scale)
        self.W_v = nn.Parameter(torch.randn(dim, dim, generator=generator) * scale)

    @property
    def dim(self) -> int:
        return self.W_q.shape[0]


def attend(queries, keys, wq, wk, wv, key_mask=None):
    """One scaled dot-product attention step, batched over leading dims.

    ``key_mask`` is True for valid keys.  Returns (output, attention weights).
    """
    d = queries.shape[-1]
    logits = (queries @ wq) @ (keys @ wk).transpose(-1, -2) / math.sqrt(d)
    if key_mask is not None:
        logits = logits.masked_fill(~key_mask.unsqueeze(-2), float("-inf"))
    attn = torch.softmax(logits, dim=-1)
    return attn @ (keys @ wv), attn


def cross_attention_refine(prototypes, patches, params: AttentionParams, key_mask=None):
    """Iterate P <- softmax(P Wq (X Wk)^T / sqrt(D)) (X Wv).

    ``prototypes`` is (..., N, D) and ``patches`` (..., M, D).  The attention
    matrix of the final iteration is returned alongside the prototypes.
    """
    out, attn = prototypes, None
    for _ in range(params.n_iterations):
        out, attn = attend(out, patches, params.W_q, params.W_k, params.W_v, key_mask)
    return out, attn


def self_attention(tokens, params: AttentionParams, residual: bool = True):
    out, attn = attend(tokens, tokens, params.W_q, params.W_k, params.W_v)
    return (tokens + out if residual else out), attn


def refine_histology_prototypes(
    protos: PrototypeSet, patches: Union[SlideBag, torch.Tensor], params: AttentionParams
) -> PrototypeSet:
    x = torch.tensor(patches.patch_embeddings) if isinstance(patches, SlideBag) else patches
    if x.ndim != 2 or x.shape[0] == 0:
        raise PreconditionError("cannot refine prototypes over an empty patch bag")
    if x.shape[1] != protos.tokens.shape[1] or params.dim != x.shape[1]:
        raise PreconditionError(
            f"dimension mismatch: prototypes {protos.tokens.shape[1]}, patches {x.shape[1]}, params {params.dim}"
        )
    x = x.to(params.W_q.dtype)
    tokens, attn = cross_attention_refine(protos.tokens.to(x.dtype), x, params)
    meta = dict(protos.metadata, attention=attn)
    return replace(protos, tokens=tokens, metadata=meta)


# ---------------------------------------------------------------------------
# Genomic prototypes
# ---------------------------------------------------------------------------


def group_means(values, mask, groups, n_groups: int = N_GROUPS):
    """Masked per-group mean of gene values.

    ``values``/``mask`` are (B, G) and ``groups`` is (G,).  Returns the (B, n_groups)
    means and a (B, n_groups) flag that is True where every gene of the group is
    masked (mean reported as 0).
    """
    onehot = torch.nn.functional.one_hot(groups, n_groups).to(values.dtype)  # (G, K)
    m = mask.to(values.dtype)
    sums = (values * m) @ onehot
    counts = m @ onehot
    empty = counts == 0
    return sums / counts.clamp_min(1.0), empty


class GenomicEncoder(nn.Module):
    """Per-group affine token map followed by one residual self-attention layer."""

    def __init__(self, dim: int, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.group_weight = nn.Parameter(torch.randn(N_GROUPS, dim, generator=generator) / math.sqrt(dim))
        self.group_bias = nn.Parameter(torch.randn(N_GROUPS, dim, generator=generator) * 0.1)
        self.self_attn = AttentionParams(dim, n_iterations=1, generator=generator)

    def pooled_tokens(self, values, mask, groups):
        means, empty = group_means(values, mask, groups)
        return means.unsqueeze(-1) * self.group_weight + self.group_bias, empty

    def forward(self, values, mask, groups):
        tokens, empty = self.pooled_tokens(values, mask, groups)
        refined, _ = self_attention(tokens, self.self_attn)
        return refined, empty


def build_genomic_prototypes(
    profile: GenomicProfile, encoder: GenomicEncoder, names: Sequence[str] = ()
) -> PrototypeSet:
    dtype = encoder.group_weight.dtype
    values = torch.tensor(profile.values, dtype=dtype).unsqueeze(0)
    mask = torch.tensor(profile.mask).unsqueeze(0)
    groups = torch.tensor(profile.groups)
    pooled, empty = encoder.pooled_tokens(values, mask, groups)
    refined, _ = self_attention(pooled, encoder.self_attn)
    names = tuple(names) or tuple(f"group_{k}" for k in range(N_GROUPS))
    meta = {"pooled": pooled[0], "empty_groups": [k for k in range(N_GROUPS) if bool(empty[0, k])]}
    return PrototypeSet(refined[0], names, metadata=meta)


# ---------------------------------------------------------------------------
# Importance weighting
# ---------------------------------------------------------------------------


class ImportanceHead(nn.Module):
    """Two affine layers with a tanh between them, D -> 1 logit."""

    def __init__(self, dim: int, hidden: int = 16, zero_init: bool = False, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.hidden = nn.Linear(dim, hidden)
        self.out = nn.Linear(hidden, 1)
        with torch.no_grad():
            self.hidden.weight.copy_(torch.randn(hidden, dim, generator=generator) / math.sqrt(dim))
            self.hidden.bias.zero_()
            self.out.weight.copy_(torch.randn(1, hidden, generator=generator) / math.sqrt(hidden))
            self.out.bias.zero_()
            if zero_init:
                self.out.weight.zero_()

    def forward(self, tokens):
        return self.out(torch.tanh(self.hidden(tokens))).squeeze(-1)


def importance_weights(protos: Union[PrototypeSet, torch.Tensor], head: ImportanceHead) -> torch.Tensor:
    tokens = protos.tokens if isinstance(protos, PrototypeSet) else protos
    return torch.sigmoid(head(tokens))


def apply_importance(protos: PrototypeSet, w: torch.Tensor) -> PrototypeSet:
    w = torch.as_tensor(w, dtype=protos.tokens.dtype)
    if w.shape != (len(protos),):
        raise ArityError(f"{len(protos)} prototypes but {tuple(w.shape)} weights")
    return replace(protos, tokens=protos.tokens * w.unsqueeze(-1), importance=w)
