"""End-to-end network: prototyping -> imputation -> importance -> alignment
pooling and [CLS] aggregation -> bipartite fusion -> task head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .alignment import ClsAggregator, Critic, aggregate_with_cls, pool_prototypes
from .data_model import N_GROUPS, Cohort, PatientRecord
from .fusion import FusionParams, affinity_matrix, fuse_batch, select_top_k
from .imputation import DiscriminatorPair, TranslatorPair
from .prototyping import (
    AttentionParams,
    EmbeddingProvider,
    GenomicEncoder,
    ImportanceHead,
    cross_attention_refine,
    init_histology_prototypes,
)
from .tasks import ClassifierHead, SurvivalHead, Task

PARAMETER_GROUPS = ("prototyping", "alignment", "generator", "discriminator", "fusion", "heads")


@dataclass
class Batch:
    """Padded tensors for one slide per patient."""

    patches: torch.Tensor  # (B, M, D_embed)
    patch_mask: torch.Tensor  # (B, M) True for real patches
    gene_values: torch.Tensor  # (B, G)
    gene_mask: torch.Tensor  # (B, G)
    groups: torch.Tensor  # (G,)
    has_genomics: torch.Tensor  # (B,) real genomics available
    diagnosis: torch.Tensor
    grade: torch.Tensor
    time_bin: torch.Tensor
    event: torch.Tensor
    times: np.ndarray

    def __len__(self) -> int:
        return self.patches.shape[0]


def make_batch(
    patients: Sequence[PatientRecord],
    slide_idx: Sequence[int],
    gene_groups: np.ndarray,
    cuts: Optional[np.ndarray] = None,
) -> Batch:
    bags = [p.slides[s].patch_embeddings for p, s in zip(patients, slide_idx)]
    b, m, d = len(bags), max(x.shape[0] for x in bags), bags[0].shape[1]
    patches = np.zeros((b, m, d), dtype=np.float32)
    pmask = np.zeros((b, m), dtype=bool)
    for i, x in enumerate(bags):
        patches[i, : x.shape[0]] = x
        pmask[i, : x.shape[0]] = True
    n_genes = len(gene_groups)
    values = np.zeros((b, n_genes), dtype=np.float32)
    gmask = np.zeros((b, n_genes), dtype=bool)
    has = np.zeros(b, dtype=bool)
    for i, p in enumerate(patients):
        if p.has_genomics:
            values[i] = p.genomic.values
            gmask[i] = p.genomic.mask
            has[i] = True
    times = np.array([p.survival_time for p in patients], dtype=float)
    bins = np.digitize(times, cuts) if cuts is not None else np.zeros(b, dtype=int)
    return Batch(
        patches=torch.from_numpy(patches),
        patch_mask=torch.from_numpy(pmask),
        gene_values=torch.from_numpy(values),
        gene_mask=torch.from_numpy(gmask),
        groups=torch.tensor(np.asarray(gene_groups), dtype=torch.long),
        has_genomics=torch.from_numpy(has),
        diagnosis=torch.tensor([p.label_diagnosis for p in patients]),
        grade=torch.tensor([p.label_grade for p in patients]),
        time_bin=torch.as_tensor(bins, dtype=torch.long),
        event=torch.tensor([p.event_indicator for p in patients]),
        times=times,
    )


class ProtoFuseModel(nn.Module):
    def __init__(
        self,
        d_embed: int,
        dim: int,
        task: Task,
        category_names: Sequence[str],
        top_k: int = 3,
        n_iterations: int = 2,
        multimodal: bool = True,
        provider: Optional[EmbeddingProvider] = None,
        seed: int = 0,
    ):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.task = Task(task)
        self.dim = dim
        self.top_k = top_k
        self.multimodal = multimodal
        provider = provider or EmbeddingProvider.hashed(dim)
        init = init_histology_prototypes(category_names, provider)
        # prototyping
        self.patch_proj = nn.Linear(d_embed, dim)
        with torch.no_grad():
            self.patch_proj.weight.copy_(torch.randn(dim, d_embed, generator=gen) / np.sqrt(d_embed))
            self.patch_proj.bias.zero_()
        self.histology_queries = nn.Parameter(init.tokens.clone())
        self.histology_attn = AttentionParams(dim, n_iterations, generator=gen)
        self.genomic_encoder = GenomicEncoder(dim, generator=gen)
        # both prototype streams are layer-normalized so translation maps between equal scales
        self.norm_p = nn.LayerNorm(dim)
        self.norm_g = nn.LayerNorm(dim)
        self.importance_p = ImportanceHead(dim, generator=gen)
        self.importance_g = ImportanceHead(dim, generator=gen)
        # alignment
        self.critic = Critic(dim, generator=gen)
        self.cls_p = ClsAggregator(dim, generator=gen)
        self.cls_g = ClsAggregator(dim, generator=gen)
        # imputation
        # prototype rows of the two modalities live in unrelated spaces, so the
        # translators are row-specific and not anchored at the identity
        self.translators = TranslatorPair(dim, generator=gen, residual=False, n_rows=N_GROUPS)
        self.discriminators = DiscriminatorPair(dim, generator=gen)
        # fusion and head
        self.fusion = FusionParams(dim, generator=gen)
        n_out = self.task.n_outputs
        self.head = SurvivalHead(dim, n_out) if self.task is Task.SURVIVAL else ClassifierHead(dim, n_out)

    def group_modules(self) -> Dict[str, List[nn.Module]]:
        return {
            "prototyping": [self.patch_proj, self.genomic_encoder, self.histology_attn,
                            self.norm_p, self.norm_g, self.importance_p, self.importance_g],
            "alignment": [self.critic, self.cls_p, self.cls_g],
            "generator": [self.translators],
            "discriminator": [self.discriminators],
            "fusion": [self.fusion],
            "heads": [self.head],
        }

    def group_parameters(self) -> Dict[str, List[nn.Parameter]]:
        groups = {k: [p for m in mods for p in m.parameters()] for k, mods in self.group_modules().items()}
        groups["prototyping"].insert(0, self.histology_queries)
        return groups

    def named_group_parameters(self) -> Dict[str, Dict[str, nn.Parameter]]:
        ids = {id(p): name for name, p in self.named_parameters()}
        return {k: {ids[id(p)]: p for p in ps} for k, ps in self.group_parameters().items()}

    # -- stages ---------------------------------------------------------------

    def histology_prototypes(self, batch: Batch):
        x = self.patch_proj(batch.patches)
        queries = self.histology_queries.expand(len(batch), -1, -1)
        tokens, attn = cross_attention_refine(queries, x, self.histology_attn, batch.patch_mask)
        return self.norm_p(tokens), attn

    def genomic_prototypes(self, batch: Batch):
        tokens, empty = self.genomic_encoder(batch.gene_values, batch.gene_mask, batch.groups)
        return self.norm_g(tokens), empty

    def forward(
        self,
        batch: Batch,
        missing: Optional[torch.Tensor] = None,
        real_weight: Optional[torch.Tensor] = None,
        fill_tokens: Optional[torch.Tensor] = None,
    ) -> Dict[str, torch.Tensor]:
        """Run the network on one slide per patient.

        ``missing`` (B,) marks patients whose genomics must be imputed.  For
        those, ``real_weight`` (B,) is the interpolation weight on the real
        tokens (0 when they are unavailable).  ``fill_tokens`` (N_G, D)
        replaces translator output with fixed tokens (mean filling).
        """
        b = len(batch)
        out: Dict[str, torch.Tensor] = {}
        p_raw, attn = self.histology_prototypes(batch)
        out["p_raw"], out["attention"] = p_raw, attn
        w_p = torch.sigmoid(self.importance_p(p_raw))
        out["w_p"] = w_p
        p_tokens = p_raw * w_p.unsqueeze(-1)
        cls_p, ctx_p = aggregate_with_cls(p_tokens, self.cls_p)
        out["pooled_p"] = pool_prototypes(p_raw, w_p)

        if not self.multimodal:
            rep = torch.cat([cls_p.unsqueeze(1), ctx_p], dim=1).mean(dim=1)
            out["rep"], out["logits"] = rep, self.head(rep)
            return out

        g_real, empty = self.genomic_prototypes(batch)
        out["g_real"], out["group_empty"] = g_real, empty
        if missing is None:
            missing = ~batch.has_genomics
        missing = missing | ~batch.has_genomics
        if real_weight is None:
            real_weight = torch.zeros(b)
        real_weight = torch.where(batch.has_genomics, real_weight, torch.zeros_like(real_weight))
        rows = missing.unsqueeze(-1) | empty  # (B, N_G)
        row_weight = torch.where(empty, torch.zeros_like(empty, dtype=g_real.dtype), real_weight.unsqueeze(-1))
        if bool(rows.any()):
            if fill_tokens is not None:
                generated = fill_tokens.to(g_real.dtype).expand_as(g_real)
            else:
                generated = self.translators.F_P_to_G(p_raw)
            out["g_generated"] = generated
            w = row_weight.unsqueeze(-1)
            mixed = torch.where(w > 0, w * g_real + (1 - w) * generated, generated)
            g_used = torch.where(rows.unsqueeze(-1), mixed, g_real)
        else:
            g_used = g_real
        out["g_used"], out["imputed_rows"] = g_used, rows

        w_g = torch.sigmoid(self.importance_g(g_used))
        out["w_g"] = w_g
        g_tokens = g_used * w_g.unsqueeze(-1)
        cls_g, ctx_g = aggregate_with_cls(g_tokens, self.cls_g)
        out["pooled_g"] = pool_prototypes(g_used, w_g)

        affinity = affinity_matrix(ctx_p, ctx_g)
        out["affinity"] = affinity
        sels = [select_top_k(a, self.top_k) for a in affinity.detach()]
        fused = fuse_batch(ctx_p, ctx_g, sels, self.fusion)
        rep = torch.cat([cls_p.unsqueeze(1), cls_g.unsqueeze(1), fused], dim=1).mean(dim=1)
        out["rep"], out["logits"] = rep, self.head(rep)
        out["selections"] = sels
        return out
