import pytest
import torch
from hypothesis import given, settings, strategies as st

from bytelab import numcore as nc
from bytelab.budget import LAYER_TERMS, flops_forward, flops_per_step, plan_budget
from bytelab.model import ModelConfig, build_model

from oracles import TINY_FLOPS, TINY_FORWARD, TINY_TRAIN

TINY = ModelConfig(vocab_size=16, d_model=4, n_layers=1, n_heads=1, d_head=4, d_ff=8, max_seq_len=8)


def test_tiny_breakdown_matches_hand_oracle():
    br = flops_forward(TINY, 8)
    assert br.totals() == TINY_FLOPS
    assert br.fwd_per_seq == TINY_FORWARD
    assert br.train_per_seq == TINY_TRAIN


def test_doubling_sequence_length():
    a, b = flops_forward(TINY, 8), flops_forward(TINY, 16)
    assert b.attn_logits == 4 * a.attn_logits and b.attn_weighting == 4 * a.attn_weighting
    for term in ("embeddings", "qkv", "out_proj", "mlp_up_gate", "mlp_down", "lm_head"):
        assert getattr(b, term) == 2 * getattr(a, term)


def test_mask_row_enlarges_only_embeddings():
    ar = flops_forward(TINY, 8)
    mdm = flops_forward(TINY.replace(attention_mode="bidirectional"), 8)
    assert mdm.embeddings == 2 * 8 * 17 * 4
    assert mdm.lm_head == ar.lm_head


def _instrumented(cfg, L):
    m = build_model(cfg)
    with nc.FlopCounter() as fc, torch.no_grad():
        m(torch.zeros(1, L, dtype=torch.long))
    return dict(fc.counts)


@settings(max_examples=25, deadline=None)
@given(L=st.integers(2, 12), V=st.integers(2, 40), h=st.integers(1, 3), dh=st.sampled_from([2, 4]),
       ff=st.integers(1, 20), layers=st.integers(0, 3),
       mode=st.sampled_from(["causal", "bidirectional"]))
def test_formula_equals_instrumented_forward(L, V, h, dh, ff, layers, mode):
    cfg = ModelConfig(vocab_size=V, d_model=h * dh, n_heads=h, d_head=dh, d_ff=ff, n_layers=layers,
                      max_seq_len=L, attention_mode=mode)
    counted = _instrumented(cfg, L)
    br = flops_forward(cfg, L)
    expected = {k: v for k, v in br.totals().items() if v}
    assert counted == expected
    assert sum(counted.values()) == br.fwd_per_seq


def test_homogeneity_in_width():
    a = flops_forward(TINY, 8)
    b = flops_forward(TINY.replace(d_model=8, d_head=8, d_ff=16, vocab_size=32), 8)
    assert b.embeddings == 4 * a.embeddings and b.lm_head == 4 * a.lm_head
    assert b.qkv == 4 * a.qkv and b.mlp_up_gate == 4 * a.mlp_up_gate
    assert b.attn_logits == 2 * a.attn_logits


def test_plan_budget_exact_and_boundary():
    per = flops_per_step(TINY, 8, 4)
    plan = plan_budget(7 * per, TINY, 8, 4)
    assert plan.steps == 7 and plan.slack == 0
    assert plan.data_budget_tokens == 7 * 4 * 8
    assert plan_budget(8 * per - 1, TINY, 8, 4).steps == 7
    with pytest.raises(ValueError):
        plan_budget(per - 1, TINY, 8, 4)


def test_plan_budget_invariants():
    cfg = ModelConfig(vocab_size=256, max_seq_len=512)
    for F in (1e12, 3.3e13, 7.77e14):
        p = plan_budget(F, cfg, 512, 32)
        assert p.steps * p.flops_per_step <= F < (p.steps + 1) * p.flops_per_step


def test_longer_byte_context_gets_fewer_steps():
    byte = ModelConfig(vocab_size=256, max_seq_len=2048)
    bpe = ModelConfig(vocab_size=4096, max_seq_len=512)
    F = 1e15
    pb, pt = plan_budget(F, byte, 2048, 8), plan_budget(F, bpe, 512, 8)
    assert pb.steps < pt.steps
    ratio = flops_forward(byte, 2048).fwd_per_seq / flops_forward(bpe, 512).fwd_per_seq
    assert abs(pt.steps / pb.steps - ratio) / ratio < 0.01


def test_layer_terms_sum_per_layer():
    br = flops_forward(TINY.replace(n_layers=3), 8)
    assert br.per_layer == sum(getattr(br, t) for t in LAYER_TERMS)
    assert br.fwd_per_seq == br.embeddings + 3 * br.per_layer + br.lm_head
