import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from protofuse.data_model import HISTOLOGY_CATEGORIES, GenomicProfile, SlideBag
from protofuse.errors import ArityError, InitializationError, PreconditionError
from protofuse.prototyping import (
    AttentionParams,
    EmbeddingProvider,
    GenomicEncoder,
    ImportanceHead,
    PrototypeSet,
    apply_importance,
    build_genomic_prototypes,
    cross_attention_refine,
    group_means,
    importance_weights,
    init_histology_prototypes,
    refine_histology_prototypes,
)


def _gen(seed=0):
    return torch.Generator().manual_seed(seed)


def _set(tokens):
    return PrototypeSet(tokens, tuple(f"p{i}" for i in range(tokens.shape[0])))


# -- initialization ------------------------------------------------------------


def test_hashed_provider_is_deterministic():
    a = init_histology_prototypes(HISTOLOGY_CATEGORIES, EmbeddingProvider.hashed(16))
    b = init_histology_prototypes(HISTOLOGY_CATEGORIES, EmbeddingProvider.hashed(16))
    assert torch.equal(a.tokens, b.tokens)
    assert a.names == tuple(HISTOLOGY_CATEGORIES)
    assert torch.allclose(a.tokens.norm(dim=1), torch.ones(6))
    # different prompts give different directions
    assert not torch.allclose(a.tokens[0], a.tokens[1])


def test_file_backed_provider_reads_rows_in_order(tmp_path):
    rows = np.arange(24, dtype=np.float32).reshape(6, 4) / 10
    path = tmp_path / "prompts.tsv"
    np.savetxt(path, rows, delimiter="\t")
    provider = EmbeddingProvider.from_file(path, HISTOLOGY_CATEGORIES)
    protos = init_histology_prototypes(HISTOLOGY_CATEGORIES, provider)
    np.testing.assert_allclose(protos.tokens.numpy(), rows)


def test_five_names_is_arity_error():
    with pytest.raises(ArityError):
        init_histology_prototypes(HISTOLOGY_CATEGORIES[:5], EmbeddingProvider.hashed(8))


def test_unknown_prompt_is_initialization_error(tmp_path):
    path = tmp_path / "prompts.tsv"
    np.savetxt(path, np.ones((6, 4)), delimiter="\t")
    provider = EmbeddingProvider.from_file(path, [f"x{i}" for i in range(6)])
    with pytest.raises(InitializationError):
        init_histology_prototypes(HISTOLOGY_CATEGORIES, provider)


# -- cross-attention refinement ------------------------------------------------


def _identity_params(d, n_iterations=2):
    params = AttentionParams(d, n_iterations)
    with torch.no_grad():
        for w in (params.W_q, params.W_k, params.W_v):
            w.copy_(torch.eye(d))
    return params


def test_single_patch_identity_weights_copies_patch():
    protos = init_histology_prototypes(HISTOLOGY_CATEGORIES, EmbeddingProvider.hashed(4))
    patch = np.array([[0.3, -1.0, 2.0, 0.5]], dtype=np.float32)
    out = refine_histology_prototypes(protos, SlideBag("s", patch), _identity_params(4))
    np.testing.assert_allclose(out.tokens.detach().numpy(), np.repeat(patch, 6, axis=0), rtol=1e-6)
    assert out.metadata["attention"].shape == (6, 1)


@settings(max_examples=30, deadline=None)
@given(m=st.integers(1, 12), d=st.integers(1, 8), seed=st.integers(0, 10_000))
def test_attention_rows_sum_to_one(m, d, seed):
    g = _gen(seed)
    params = AttentionParams(d, generator=g)
    _, attn = cross_attention_refine(torch.randn(6, d, generator=g) * 3, torch.randn(m, d, generator=g) * 3, params)
    assert torch.allclose(attn.sum(-1), torch.ones(6), atol=1e-6)


def test_cross_attention_matches_scalar_oracle():
    g = _gen(3)
    params = AttentionParams(4, n_iterations=2, generator=g).double()
    protos = torch.randn(6, 4, generator=g, dtype=torch.float64)
    patches = torch.randn(3, 4, generator=g, dtype=torch.float64)
    out, attn = cross_attention_refine(protos, patches, params)
    ref_out, ref_attn = oracles.cross_attention(
        protos.tolist(), patches.tolist(), params.W_q.tolist(), params.W_k.tolist(), params.W_v.tolist(), 2)
    np.testing.assert_allclose(out.detach().numpy(), ref_out, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(attn.detach().numpy(), ref_attn, rtol=1e-10, atol=1e-12)


def test_single_iteration_output_in_convex_hull_of_values():
    g = _gen(5)
    params = AttentionParams(4, n_iterations=1, generator=g).double()
    patches = torch.randn(7, 4, generator=g, dtype=torch.float64)
    out, attn = cross_attention_refine(torch.randn(6, 4, generator=g, dtype=torch.float64), patches, params)
    values = patches @ params.W_v
    coeffs, *_ = np.linalg.lstsq(values.detach().numpy().T, out.detach().numpy().T, rcond=None)
    residual = values.detach().numpy().T @ coeffs - out.detach().numpy().T
    assert np.abs(residual).max() < 1e-10
    assert (attn >= 0).all()


def test_empty_patch_bag_rejected():
    protos = init_histology_prototypes(HISTOLOGY_CATEGORIES, EmbeddingProvider.hashed(4))
    with pytest.raises(PreconditionError):
        refine_histology_prototypes(protos, torch.zeros(0, 4), AttentionParams(4))


def test_dimension_mismatch_rejected():
    protos = init_histology_prototypes(HISTOLOGY_CATEGORIES, EmbeddingProvider.hashed(4))
    with pytest.raises(PreconditionError):
        refine_histology_prototypes(protos, torch.zeros(3, 5), AttentionParams(4))


# -- genomic prototypes --------------------------------------------------------


def _profile(values, mask=None, per_group=2):
    n = len(values)
    groups = np.repeat(np.arange(6), per_group)[:n]
    mask = np.ones(n, bool) if mask is None else np.asarray(mask)
    return GenomicProfile(tuple(f"g{i}" for i in range(n)), np.asarray(values, np.float32), groups, mask)


def _zero_bias_encoder(d=4, seed=0):
    enc = GenomicEncoder(d, generator=_gen(seed))
    with torch.no_grad():
        enc.group_bias.zero_()
    return enc


def test_zero_values_zero_bias_pool_to_zero():
    protos = build_genomic_prototypes(_profile(np.zeros(12)), _zero_bias_encoder())
    assert torch.equal(protos.metadata["pooled"], torch.zeros(6, 4))
    assert protos.metadata["empty_groups"] == []


def test_fully_masked_equals_all_zero_case():
    enc = GenomicEncoder(4, generator=_gen(1))
    values = np.random.default_rng(0).standard_normal(12)
    masked = build_genomic_prototypes(_profile(values, np.zeros(12, bool)), enc)
    zeros = build_genomic_prototypes(_profile(np.zeros(12)), enc)
    assert torch.allclose(masked.tokens, zeros.tokens)
    # an empty group's token is its learned bias
    assert torch.allclose(masked.metadata["pooled"], enc.group_bias)
    assert masked.metadata["empty_groups"] == list(range(6))


def test_pooled_tokens_match_group_mean_oracle():
    enc = GenomicEncoder(4, generator=_gen(2)).double()
    values = np.random.default_rng(1).standard_normal(12).astype(np.float32)
    mask = np.ones(12, bool)
    mask[3] = False
    protos = build_genomic_prototypes(_profile(values, mask), enc)
    w, b = enc.group_weight.detach().numpy(), enc.group_bias.detach().numpy()
    for k in range(6):
        members = [j for j in (2 * k, 2 * k + 1) if mask[j]]
        mean = sum(float(values[j]) for j in members) / len(members)
        expected = [mean * w[k, c] + b[k, c] for c in range(4)]
        np.testing.assert_allclose(protos.metadata["pooled"][k].detach().numpy(), expected, rtol=1e-12)
    assert protos.tokens.shape == (6, 4)


def test_group_means_flag_empty_groups():
    values = torch.tensor([[1.0, 3.0, 5.0, 7.0, 0, 0, 0, 0, 0, 0, 0, 0]])
    mask = torch.ones(1, 12, dtype=torch.bool)
    mask[0, 2:4] = False
    means, empty = group_means(values, mask, torch.arange(12) // 2)
    assert means[0, 0] == 2.0 and means[0, 1] == 0.0
    assert empty[0].tolist() == [False, True, False, False, False, False]


# -- importance ----------------------------------------------------------------


def test_zero_init_head_gives_one_half():
    head = ImportanceHead(4, zero_init=True)
    w = importance_weights(torch.randn(6, 4), head)
    assert torch.equal(w, torch.full((6,), 0.5))


def test_saturated_head():
    head = ImportanceHead(4, zero_init=True)
    with torch.no_grad():
        head.out.bias.fill_(20.0)
    assert (importance_weights(torch.randn(6, 4), head) > 0.9999).all()


def test_importance_matches_scalar_oracle():
    head = ImportanceHead(4, hidden=5, generator=_gen(4)).double()
    with torch.no_grad():
        head.hidden.bias.normal_(generator=_gen(9))
        head.out.bias.fill_(0.3)
    tokens = torch.randn(6, 4, generator=_gen(8), dtype=torch.float64)
    w = importance_weights(tokens, head)
    hw, hb = head.hidden.weight.tolist(), head.hidden.bias.tolist()
    ow, ob = head.out.weight.tolist(), head.out.bias.tolist()
    for i, row in enumerate(tokens.tolist()):
        hidden = [np.tanh(v) for v in oracles.affine(row, hw, hb)]
        logit = oracles.affine(hidden, ow, ob)[0]
        assert abs(w[i].item() - 1 / (1 + np.exp(-logit))) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_importance_in_open_unit_interval(seed):
    head = ImportanceHead(8, generator=_gen(seed))
    w = importance_weights(torch.randn(6, 8, generator=_gen(seed + 1)) * 5, head)
    assert ((w > 0) & (w < 1)).all()


def test_apply_importance_scaling():
    tokens = torch.randn(6, 4, generator=_gen(0))
    protos = _set(tokens)
    assert torch.equal(apply_importance(protos, torch.ones(6)).tokens, tokens)
    assert torch.equal(apply_importance(protos, torch.zeros(6)).tokens, torch.zeros(6, 4))
    half = apply_importance(protos, torch.full((6,), 0.5))
    assert torch.equal(half.tokens, 0.5 * tokens)
    assert torch.equal(half.importance, torch.full((6,), 0.5))
    with pytest.raises(ArityError):
        apply_importance(protos, torch.ones(5))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_weight_then_scale_is_permutation_equivariant(seed):
    head = ImportanceHead(4, generator=_gen(seed))
    tokens = torch.randn(6, 4, generator=_gen(seed + 1))
    perm = torch.randperm(6, generator=_gen(seed + 2))

    def run(t):
        s = _set(t)
        return apply_importance(s, importance_weights(s, head)).tokens

    assert torch.allclose(run(tokens)[perm], run(tokens[perm]), atol=1e-6)
