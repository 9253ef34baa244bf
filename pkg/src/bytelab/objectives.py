"""Autoregressive and masked-diffusion training objectives.

Masked diffusion follows the continuous-time absorbing-state formulation:
each token survives to time ``t`` with probability ``alpha(t)`` and is
otherwise replaced by the mask symbol; the loss is the masked cross-entropy
weighted by ``alpha'(t) / (1 - alpha(t))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from . import numcore as nc

EPS_T = 1e-3


def _cos(x):
    return torch.cos(x) if isinstance(x, torch.Tensor) else np.cos(x)


def _tan(x):
    return torch.tan(x) if isinstance(x, torch.Tensor) else np.tan(x)


def _sin(x):
    return torch.sin(x) if isinstance(x, torch.Tensor) else np.sin(x)


@dataclass(frozen=True)
class MaskSchedule:
    """Retention probability ``alpha(t)`` and loss weight ``alpha'(t)/(1-alpha(t))``.

    Evaluation is restricted to ``[eps, 1 - eps]``: the linear weight is
    singular at ``t = 0``.
    """

    kind: str = "linear"
    eps: float = EPS_T

    def __post_init__(self):
        if self.kind not in ("linear", "cosine"):
            raise ValueError(f"unknown schedule {self.kind!r}")

    def _check(self, t):
        lo, hi = self.eps - 1e-12, 1 - self.eps + 1e-12
        arr = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
        if np.any(arr < lo) or np.any(arr > hi):
            raise ValueError(f"t must lie in [{self.eps}, {1 - self.eps}], got {t}")

    def clamp(self, t):
        if isinstance(t, torch.Tensor):
            return t.clamp(self.eps, 1 - self.eps)
        return float(min(max(t, self.eps), 1 - self.eps))

    def alpha(self, t):
        self._check(t)
        if self.kind == "linear":
            return 1 - t
        return 1 - _cos(math.pi / 2 * (1 - t))

    def dalpha(self, t):
        self._check(t)
        if self.kind == "linear":
            return -1.0 + 0 * t
        return -(math.pi / 2) * _sin(math.pi / 2 * (1 - t))

    def weight(self, t):
        self._check(t)
        if self.kind == "linear":
            return -1 / t
        return -(math.pi / 2) * _tan(math.pi / 2 * (1 - t))


LINEAR = MaskSchedule("linear")
COSINE = MaskSchedule("cosine")


def get_schedule(kind: str) -> MaskSchedule:
    return MaskSchedule(kind)


@dataclass
class MaskedBatch:
    x0: torch.Tensor
    xt: torch.Tensor
    t: float
    mask: torch.Tensor  # bool, True where xt holds the mask symbol

    @property
    def mask_indices(self) -> torch.Tensor:
        return self.mask.nonzero()


@dataclass(frozen=True)
class SpanPartition:
    """Contiguous half-open blocks ``[(start, end), ...]`` tiling ``0..length``."""

    blocks: tuple[tuple[int, int], ...]
    length: int

    def __post_init__(self):
        pos = 0
        for start, end in self.blocks:
            if start != pos or end <= start:
                raise ValueError(f"invalid partition block ({start}, {end}) at offset {pos}")
            pos = end
        if pos != self.length:
            raise ValueError(f"partition covers {pos} positions, expected {self.length}")

    @classmethod
    def unit(cls, length: int) -> "SpanPartition":
        return cls(tuple((i, i + 1) for i in range(length)), length)

    @classmethod
    def from_spans(cls, spans: np.ndarray, offset: int = 0, length: int | None = None) -> "SpanPartition":
        """Blocks from a token span map, shifted by ``-offset`` and clipped to ``length``."""
        spans = np.asarray(spans).reshape(-1, 2) - offset
        if length is None:
            length = int(spans[-1, 1])
        blocks = []
        for start, end in spans.tolist():
            start, end = max(start, 0), min(end, length)
            if end > start:
                blocks.append((start, end))
        return cls(tuple(blocks), length)

    def block_ids(self) -> np.ndarray:
        ids = np.empty(self.length, dtype=np.int64)
        for k, (start, end) in enumerate(self.blocks):
            ids[start:end] = k
        return ids


def _check_time(t: float) -> None:
    if not 0.0 < t < 1.0:
        raise ValueError(f"t must lie in (0, 1), got {t}")


def _mask_from_uniforms(x0, u, t, schedule, mask_id):
    t = schedule.clamp(t)
    masked = u < (1.0 - schedule.alpha(t))
    xt = torch.where(masked, torch.full_like(x0, mask_id), x0)
    return MaskedBatch(x0, xt, t, masked)


def forward_mask(x0: torch.Tensor, t: float, schedule: MaskSchedule,
                 rng: torch.Generator, mask_id: int) -> MaskedBatch:
    """Mask every position independently with probability ``1 - alpha(t)``."""
    _check_time(t)
    u = torch.rand(x0.shape, generator=rng, dtype=torch.float64)
    return _mask_from_uniforms(x0, u, t, schedule, mask_id)


def forward_mask_span(x0: torch.Tensor, t: float, schedule: MaskSchedule,
                      partition: SpanPartition | Sequence[SpanPartition],
                      rng: torch.Generator, mask_id: int) -> MaskedBatch:
    """Keep or mask each block of ``partition`` as a unit.

    ``partition`` is shared by all rows or given per row. One uniform draw is
    made per position and each block uses the draw at its block index, so
    unit blocks consume randomness exactly like :func:`forward_mask`.
    """
    _check_time(t)
    squeeze = x0.dim() == 1
    x = x0.unsqueeze(0) if squeeze else x0
    parts = [partition] * x.shape[0] if isinstance(partition, SpanPartition) else list(partition)
    if len(parts) != x.shape[0]:
        raise ValueError("need one partition per row")
    for p in parts:
        if p.length != x.shape[1]:
            raise ValueError(f"partition length {p.length} != sequence length {x.shape[1]}")
    ids = torch.from_numpy(np.stack([p.block_ids() for p in parts]))
    u = torch.rand(x.shape, generator=rng, dtype=torch.float64)
    batch = _mask_from_uniforms(x, torch.gather(u, 1, ids), t, schedule, mask_id)
    if squeeze:
        return MaskedBatch(x0, batch.xt[0], batch.t, batch.mask[0])
    return batch


def _require(model, mode: str, what: str) -> None:
    if model.attention_mode != mode:
        raise ValueError(f"{what} needs a {mode} model, got {model.attention_mode}")


def ar_token_nll(model, batch: torch.Tensor, position_ids: torch.Tensor | None = None) -> torch.Tensor:
    """NLL (nats) of tokens ``1..L-1`` given their prefixes, shape ``(B, L-1)``."""
    _require(model, "causal", "ar_loss")
    if batch.shape[-1] < 2:
        raise ValueError("ar_loss needs sequences of length >= 2")
    logits = model(batch, position_ids)
    return nc.cross_entropy(logits[..., :-1, :], batch[..., 1:])


def ar_loss(model, batch: torch.Tensor, position_ids: torch.Tensor | None = None):
    """``(mean NLL in nats/token, per-token NLL)``; the first token is unscored."""
    per_token = ar_token_nll(model, batch, position_ids)
    return per_token.mean(), per_token


def masked_nll_sum(model, xt: torch.Tensor, x0: torch.Tensor, mask: torch.Tensor,
                   position_ids: torch.Tensor | None = None) -> torch.Tensor:
    """Per-row sum of ``-log p(x0_i | xt)`` over masked positions."""
    logits = model(xt, position_ids)
    nll = nc.cross_entropy(logits, x0)
    return (nll * mask.to(nll.dtype)).sum(dim=-1)


def mdm_loss(model, x0: torch.Tensor, schedule: MaskSchedule, rng: torch.Generator,
             partition=None, position_ids: torch.Tensor | None = None,
             resample_empty: bool = False):
    """Single-``t`` Monte-Carlo estimate of the NELBO, in nats per token.

    One ``t ~ U(0, 1)`` (clamped to ``[eps, 1 - eps]``) is drawn for the whole
    batch. A batch with no masked position contributes exactly zero; pass
    ``resample_empty=True`` to redraw ``t`` instead, which biases the
    estimate upward.
    """
    _require(model, "bidirectional", "mdm_loss")
    mask_id = model.config.mask_id
    while True:
        u = torch.rand((), generator=rng, dtype=torch.float64).item()
        t = schedule.clamp(u)
        if partition is None:
            mb = forward_mask(x0, t, schedule, rng, mask_id)
        else:
            mb = forward_mask_span(x0, t, schedule, partition, rng, mask_id)
        if mb.mask.any() or not resample_empty:
            break
    weight = -float(schedule.weight(mb.t))
    nll = masked_nll_sum(model, mb.xt, mb.x0, mb.mask, position_ids)
    loss = weight * nll.sum() / x0.numel()
    diag = {"t": mb.t, "weight": weight, "masked": int(mb.mask.sum()),
            "masked_fraction": float(mb.mask.float().mean())}
    return loss, diag


@torch.no_grad()
def mdm_nelbo_quadrature(model, x0: torch.Tensor, schedule: MaskSchedule = COSINE,
                         rng: torch.Generator | None = None, n_points: int = 64,
                         position_ids: torch.Tensor | None = None) -> torch.Tensor:
    """Per-row NELBO (nats, summed over positions) with midpoint-stratified ``t``.

    ``t`` takes the midpoints of ``n_points`` equal bins; masks are drawn
    afresh at each point.
    """
    _require(model, "bidirectional", "mdm_nelbo_quadrature")
    rng = rng if rng is not None else torch.Generator().manual_seed(0)
    x = x0.unsqueeze(0) if x0.dim() == 1 else x0
    total = torch.zeros(x.shape[0], dtype=torch.float64)
    for k in range(n_points):
        t = schedule.clamp((k + 0.5) / n_points)
        mb = forward_mask(x, t, schedule, rng, model.config.mask_id)
        nll = masked_nll_sum(model, mb.xt, x, mb.mask, position_ids).to(torch.float64)
        total += -float(schedule.weight(t)) * nll
    return total / n_points


@torch.no_grad()
def sample_reverse(model, length: int, steps: int, schedule: MaskSchedule,
                   rng: torch.Generator, prompt: Sequence[int] | None = None,
                   num_samples: int = 1, return_trajectory: bool = False):
    """Iterative unmasking on the uniform grid ``t_k = 1 - k/steps``.

    At each step ``t -> s`` a still-masked position is revealed with
    probability ``(alpha_s - alpha_t) / (1 - alpha_t)`` and, if revealed,
    drawn from the model's softmax; otherwise it stays masked. The last step
    uses ``alpha_s = 1`` so nothing is left masked. Prompt tokens fill the
    first positions and are never re-masked.
    """
    _require(model, "bidirectional", "sample_reverse")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    prompt = list(prompt or [])
    if len(prompt) > length:
        raise ValueError("prompt longer than the requested length")
    mask_id = model.config.mask_id
    x = torch.full((num_samples, length), mask_id, dtype=torch.long)
    if prompt:
        x[:, : len(prompt)] = torch.tensor(prompt, dtype=torch.long)
    trajectory = [x.clone()] if return_trajectory else None

    for k in range(steps):
        t = schedule.clamp(1 - k / steps)
        alpha_t = float(schedule.alpha(t))
        alpha_s = 1.0 if k == steps - 1 else float(schedule.alpha(schedule.clamp(1 - (k + 1) / steps)))
        p_reveal = (alpha_s - alpha_t) / (1 - alpha_t)
        masked = x == mask_id
        if not masked.any():
            if return_trajectory:
                trajectory.append(x.clone())
            continue
        probs = nc.softmax(model(x).to(torch.float64), dim=-1)
        reveal = masked & (torch.rand(x.shape, generator=rng, dtype=torch.float64) < p_reveal)
        draws = torch.multinomial(probs.reshape(-1, probs.shape[-1]), 1, generator=rng).view(x.shape)
        x = torch.where(reveal, draws, x)
        if return_trajectory:
            trajectory.append(x.clone())
    return (x, trajectory) if return_trajectory else x


@torch.no_grad()
def sample_ar(model, length: int, rng: torch.Generator, prompt: Sequence[int] | None = None,
              num_samples: int = 1, temperature: float = 1.0) -> torch.Tensor:
    """Ancestral left-to-right sampling from a causal model."""
    _require(model, "causal", "sample_ar")
    prompt = list(prompt or [])
    if not prompt:
        raise ValueError("AR sampling needs a non-empty prompt")
    if length > model.config.max_seq_len or len(prompt) > length:
        raise ValueError("requested length does not fit the model context")
    x = torch.tensor([prompt] * num_samples, dtype=torch.long)
    while x.shape[1] < length:
        logits = model(x)[:, -1].to(torch.float64) / temperature
        nxt = torch.multinomial(nc.softmax(logits, dim=-1), 1, generator=rng)
        x = torch.cat([x, nxt], dim=1)
    return x
