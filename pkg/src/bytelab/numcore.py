"""Tensor operations used by the transformer, on top of torch autograd.

Every op here is written out explicitly (stable softmax, log-softmax, RMS
normalisation, SwiGLU pieces, RoPE) so its numerics are pinned down in one
place. ``matmul`` and ``embedding`` report their multiply-adds to an active
:class:`FlopCounter`; that is how FLOP formulas are tied to the real forward
pass. ``grad_check`` compares autograd against central differences.
"""

from __future__ import annotations

import math
import threading
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Sequence

import torch
import torch.nn.functional as F

DTYPES = {"float32": torch.float32, "float64": torch.float64}

_local = threading.local()


def resolve_dtype(name: str | torch.dtype) -> torch.dtype:
    if isinstance(name, torch.dtype):
        return name
    try:
        return DTYPES[name]
    except KeyError:
        raise ValueError(f"unsupported precision {name!r}; use float32 or float64") from None


class FlopCounter:
    """Context manager tallying 2 * multiply-adds per tag.

    >>> with FlopCounter() as fc:
    ...     _ = matmul(torch.ones(2, 3), torch.ones(3, 4), tag="demo")
    >>> fc.counts["demo"]
    48
    """

    def __init__(self):
        self.counts: dict[str, int] = defaultdict(int)

    def __enter__(self):
        stack = getattr(_local, "counters", None)
        if stack is None:
            stack = _local.counters = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.counters.pop()
        return False

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def _record(tag: str | None, macs: int) -> None:
    for counter in getattr(_local, "counters", None) or ():
        counter.counts[tag or "untagged"] += 2 * macs


def matmul(a: torch.Tensor, b: torch.Tensor, tag: str | None = None) -> torch.Tensor:
    """``a @ b`` over the last two dims; only leading batch dims broadcast."""
    if a.dim() < 2 or b.dim() < 2:
        raise ValueError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} @ {tuple(b.shape)}")
    out = a @ b
    batch = math.prod(out.shape[:-2])
    _record(tag, batch * a.shape[-2] * a.shape[-1] * b.shape[-1])
    return out


def embedding(ids: torch.Tensor, table: torch.Tensor, tag: str | None = "embeddings") -> torch.Tensor:
    """Row gather, counted as the equivalent one-hot matmul (ids x V x d)."""
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= table.shape[0]):
        raise IndexError(f"token id out of range for table of {table.shape[0]} rows")
    _record(tag, ids.numel() * table.shape[0] * table.shape[1])
    return table[ids]


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    if x.shape[dim] == 0:
        raise ValueError("softmax over an empty axis")
    z = x - x.amax(dim=dim, keepdim=True).detach()
    e = torch.exp(z)
    return e / e.sum(dim=dim, keepdim=True)


def log_softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    if x.shape[dim] == 0:
        raise ValueError("log_softmax over an empty axis")
    z = x - x.amax(dim=dim, keepdim=True).detach()
    return z - torch.log(torch.exp(z).sum(dim=dim, keepdim=True))


def logsumexp(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    m = x.amax(dim=dim, keepdim=True).detach()
    return (m + torch.log(torch.exp(x - m).sum(dim=dim, keepdim=True))).squeeze(dim)


def cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Per-position negative log-likelihood in nats, computed in log space."""
    logp = log_softmax(logits, dim=-1)
    return -torch.gather(logp, -1, targets.unsqueeze(-1)).squeeze(-1)


def entropy(logits: torch.Tensor) -> torch.Tensor:
    logp = log_softmax(logits, dim=-1)
    return -(torch.exp(logp) * logp).sum(dim=-1)


def rms_norm(x: torch.Tensor, gain: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    return x * torch.rsqrt((x * x).mean(dim=-1, keepdim=True) + eps) * gain


def silu(x: torch.Tensor) -> torch.Tensor:
    return x * torch.sigmoid(x)


def rope_tables(position_ids: torch.Tensor, head_dim: int, base: float = 10000.0,
                dtype: torch.dtype = torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """cos/sin of shape ``position_ids.shape + (head_dim // 2,)``."""
    if head_dim % 2:
        raise ValueError("RoPE needs an even head dimension")
    inv_freq = base ** (-torch.arange(0, head_dim, 2, dtype=torch.float64) / head_dim)
    angles = position_ids.to(torch.float64).unsqueeze(-1) * inv_freq
    return torch.cos(angles).to(dtype), torch.sin(angles).to(dtype)


def apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate channel pairs ``(i, i + d/2)`` of ``x[..., L, d]`` by the given angles."""
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    return torch.cat([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1)


def attention_reference(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, causal: bool) -> torch.Tensor:
    """Explicit softmax(q k^T / sqrt(d)) v over ``(..., L, d)`` operands."""
    L = q.shape[-2]
    scores = matmul(q, k.transpose(-1, -2), tag="attn_logits") / math.sqrt(q.shape[-1])
    if causal:
        future = torch.ones(L, L, dtype=torch.bool, device=q.device).triu(1)
        scores = scores.masked_fill(future, float("-inf"))
    return matmul(softmax(scores, dim=-1), v, tag="attn_weighting")


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, causal: bool) -> torch.Tensor:
    """Fused scaled dot-product attention; the causal mask is by slot order.

    Multiply-adds of the two L x L products are recorded exactly as the
    explicit path would record them.
    """
    if q.shape != k.shape or k.shape != v.shape:
        raise ValueError("q, k, v must share a shape")
    batch = math.prod(q.shape[:-2])
    L, d = q.shape[-2], q.shape[-1]
    _record("attn_logits", batch * L * d * L)
    _record("attn_weighting", batch * L * L * d)
    return F.scaled_dot_product_attention(q, k, v, is_causal=causal)


# -- gradient verification ----------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    n_coords: int
    worst: tuple[int, int]  # (param index, flat coordinate)
    passed: bool


def grad_check(f: Callable[[], torch.Tensor], params: Sequence[torch.Tensor],
               eps: float = 1e-5, tol: float = 1e-6, floor: float = 1e-6) -> GradCheckReport:
    """Central-difference check of autograd gradients of scalar ``f()``.

    Relative error per coordinate is ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, floor)``;
    ``floor`` keeps coordinates whose true gradient is ~0 from dividing rounding
    noise by zero. Parameters must be float64 leaf tensors.
    """
    for p in params:
        if p.dtype != torch.float64:
            raise ValueError("grad_check requires float64 parameters")
    for p in params:
        p.grad = None
    value = f()
    if value.numel() != 1:
        raise ValueError("f must return a scalar")
    if not torch.isfinite(value):
        raise FloatingPointError(f"f is not finite at the check point: {value.item()}")
    analytic = torch.autograd.grad(value, list(params))

    worst_rel, worst_abs, worst_at, count = 0.0, 0.0, (-1, -1), 0
    with torch.no_grad():
        for pi, (p, g) in enumerate(zip(params, analytic)):
            flat = p.view(-1)
            gflat = g.reshape(-1)
            for j in range(flat.numel()):
                orig = flat[j].item()
                flat[j] = orig + eps
                up = f().item()
                flat[j] = orig - eps
                down = f().item()
                flat[j] = orig
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise FloatingPointError(f"f not finite near param {pi} coord {j}")
                fd = (up - down) / (2 * eps)
                ad = gflat[j].item()
                abs_err = abs(ad - fd)
                rel = abs_err / max(abs(ad), abs(fd), floor)
                if rel > worst_rel:
                    worst_rel, worst_at = rel, (pi, j)
                worst_abs = max(worst_abs, abs_err)
                count += 1
    return GradCheckReport(worst_rel, worst_abs, count, worst_at, worst_rel < tol)
