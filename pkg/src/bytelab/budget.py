"""Closed-form FLOPs accounting and compute-matched run planning.

Forward cost is the sum of the dense products of one sequence of length L:
embedding lookup (as a one-hot matmul), fused QKV, the two L x L attention
products, output projection, SwiGLU up/gate and down, and the LM head. No
discount is taken for causal masking; norms, RoPE and the softmax exp are
not counted. Training cost is 3x forward.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .model import ModelConfig

TRAIN_FACTOR = 3

LAYER_TERMS = ("qkv", "attn_logits", "attn_weighting", "out_proj", "mlp_up_gate", "mlp_down")
TERMS = ("embeddings",) + LAYER_TERMS + ("lm_head",)


@dataclass(frozen=True)
class FlopsBreakdown:
    seq_len: int
    n_layers: int
    embeddings: int
    qkv: int
    attn_logits: int
    attn_weighting: int
    out_proj: int
    mlp_up_gate: int
    mlp_down: int
    lm_head: int

    @property
    def per_layer(self) -> int:
        return sum(getattr(self, t) for t in LAYER_TERMS)

    def totals(self) -> dict[str, int]:
        """Whole-model count per term (per-layer terms multiplied by depth)."""
        out = {"embeddings": self.embeddings}
        for t in LAYER_TERMS:
            out[t] = getattr(self, t) * self.n_layers
        out["lm_head"] = self.lm_head
        return out

    @property
    def fwd_per_seq(self) -> int:
        return self.embeddings + self.n_layers * self.per_layer + self.lm_head

    @property
    def train_per_seq(self) -> int:
        return TRAIN_FACTOR * self.fwd_per_seq

    def to_rows(self) -> list[tuple[str, int, int]]:
        """``(term, per_layer_or_once, total)`` rows plus the forward/train totals."""
        rows = [("embeddings", self.embeddings, self.embeddings)]
        rows += [(t, getattr(self, t), getattr(self, t) * self.n_layers) for t in LAYER_TERMS]
        rows.append(("lm_head", self.lm_head, self.lm_head))
        rows.append(("forward_total", self.fwd_per_seq, self.fwd_per_seq))
        rows.append(("train_total", self.train_per_seq, self.train_per_seq))
        return rows


def flops_forward(config: ModelConfig, seq_len: int | None = None) -> FlopsBreakdown:
    L = config.max_seq_len if seq_len is None else int(seq_len)
    d, inner, ff = config.d_model, config.n_heads * config.d_head, config.d_ff
    return FlopsBreakdown(
        seq_len=L,
        n_layers=config.n_layers,
        # the mask row enlarges the input vocabulary only
        embeddings=2 * L * config.vocab_in * d,
        qkv=3 * 2 * L * d * inner,
        attn_logits=2 * L * L * inner,
        attn_weighting=2 * L * L * inner,
        out_proj=2 * L * inner * d,
        mlp_up_gate=2 * (2 * L * d * ff),
        mlp_down=2 * L * ff * d,
        lm_head=2 * L * d * config.vocab_out,
    )


def flops_per_step(config: ModelConfig, seq_len: int, batch_size: int) -> int:
    return batch_size * flops_forward(config, seq_len).train_per_seq


@dataclass(frozen=True)
class BudgetPlan:
    flops_budget: float
    config: ModelConfig
    seq_len: int
    batch_size: int
    steps: int
    flops_per_step: int

    @property
    def data_budget_tokens(self) -> int:
        return self.steps * self.batch_size * self.seq_len

    @property
    def flops_used(self) -> int:
        return self.steps * self.flops_per_step

    @property
    def slack(self) -> float:
        return self.flops_budget - self.flops_used

    def as_dict(self) -> dict:
        return {
            "flops_budget": self.flops_budget,
            "seq_len": self.seq_len,
            "batch_size": self.batch_size,
            "steps": self.steps,
            "flops_per_step": self.flops_per_step,
            "flops_used": self.flops_used,
            "data_budget_tokens": self.data_budget_tokens,
            "slack": self.slack,
            "model": asdict(self.config),
        }


def plan_budget(flops: float, config: ModelConfig, seq_len: int, batch_size: int) -> BudgetPlan:
    """Largest whole number of steps whose training FLOPs fit in ``flops``."""
    per_step = flops_per_step(config, seq_len, batch_size)
    if flops < per_step:
        raise ValueError(f"budget {flops:.4g} FLOPs is below one step ({per_step} FLOPs)")
    # integer floor division keeps exact budgets exact
    steps = int(flops) // per_step if float(flops).is_integer() else int(flops // per_step)
    return BudgetPlan(float(flops), config, seq_len, batch_size, steps, per_step)
