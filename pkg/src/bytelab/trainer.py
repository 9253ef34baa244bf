"""Deterministic training loop shared by the AR and MDM objectives."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import budget, metrics
from .corpus import PackedDataset
from .model import Transformer, save_checkpoint
from .objectives import SpanPartition, ar_loss, get_schedule, mdm_loss

LOG_FIELDS = ("step", "tokens", "flops", "train_loss_nats", "val_bpb", "lr", "grad_norm")


class NumericalError(FloatingPointError):
    """Raised when the training loss or gradient stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    peak_lr: float = 3e-3
    min_lr: float = 2e-4
    warmup_fraction: float = 0.01
    total_steps: int = 1000
    weight_decay: float = 0.1
    grad_clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    seed: int = 0
    objective: str = "ar"
    train_schedule: str = "linear"   # MDM masking schedule during training
    eval_schedule: str = "cosine"    # MDM schedule for validation NELBO
    eval_interval: int = 100
    eval_sequences: int = 32
    eval_quadrature: int = 64

    def __post_init__(self):
        if not 0 < self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in (0, 1)")
        if self.min_lr > self.peak_lr:
            raise ValueError("min_lr must not exceed peak_lr")
        if self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive")
        if self.batch_size < 1 or self.total_steps < 1:
            raise ValueError("batch_size and total_steps must be >= 1")
        if self.objective not in ("ar", "mdm"):
            raise ValueError(f"objective must be 'ar' or 'mdm', got {self.objective!r}")

    @property
    def warmup_steps(self) -> int:
        return max(1, round(self.warmup_fraction * self.total_steps))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear warmup from 0 to ``peak_lr``, then cosine down to ``min_lr`` at the last step."""
    warm = config.warmup_steps
    last = config.total_steps - 1
    if step <= warm:
        return config.peak_lr * step / warm
    if step >= last:
        return config.min_lr
    progress = (step - warm) / (last - warm)
    return config.min_lr + 0.5 * (config.peak_lr - config.min_lr) * (1 + math.cos(math.pi * progress))


class EpochSampler:
    """Yields batches of row indices; each epoch is a fresh seeded shuffle."""

    def __init__(self, n_rows: int, batch_size: int, seed: int):
        if n_rows < 1:
            raise ValueError("dataset is empty")
        self.n, self.batch_size, self.seed = n_rows, batch_size, seed
        self.epoch, self.pos = 0, 0
        self.order = self._order(0)

    def _order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, epoch]).permutation(self.n)

    def next(self) -> np.ndarray:
        out = []
        while len(out) < self.batch_size:
            if self.pos == self.n:
                self.epoch += 1
                self.pos = 0
                self.order = self._order(self.epoch)
            take = min(self.batch_size - len(out), self.n - self.pos)
            out.extend(self.order[self.pos : self.pos + take].tolist())
            self.pos += take
        return np.asarray(out, dtype=np.int64)


def _step_generator(seed: int, step: int) -> torch.Generator:
    state = np.random.SeedSequence([seed, step]).generate_state(2, dtype=np.uint32)
    return torch.Generator().manual_seed(int(state[0]) << 32 | int(state[1]))


def _param_groups(model: torch.nn.Module, weight_decay: float):
    decay = [p for p in model.parameters() if p.dim() >= 2]
    no_decay = [p for p in model.parameters() if p.dim() < 2]
    return [{"params": decay, "weight_decay": weight_decay},
            {"params": no_decay, "weight_decay": 0.0}]


def build_optimizer(model: torch.nn.Module, config: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        _param_groups(model, config.weight_decay), lr=0.0,
        betas=(config.beta1, config.beta2), eps=config.adam_eps,
    )


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_log(rows: Sequence[dict], path: str | os.PathLike) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_FIELDS)
    for r in rows:
        w.writerow([_fmt(r.get(k)) for k in LOG_FIELDS])
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(buf.getvalue())
    os.replace(tmp, path)


_INT_FIELDS = ("step", "tokens", "flops")


def read_log(path: str | os.PathLike) -> list[dict]:
    """Inverse of :func:`write_log`: ints and floats come back typed, blanks as None."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key, value in row.items():
            row[key] = None if value == "" else int(value) if key in _INT_FIELDS else float(value)
    return rows


@dataclass
class TrainResult:
    model: Transformer
    log: list[dict]
    final_val_bpb: float | None
    flops_per_step: int

    @property
    def final_train_loss(self) -> float:
        return self.log[-1]["train_loss_nats"]

    def tail_train_loss(self, n: int = 20) -> float:
        """Mean training loss over the last ``n`` logged steps."""
        vals = [r["train_loss_nats"] for r in self.log[-n:]]
        return float(np.mean(vals))


def _permute_batch(batch: torch.Tensor, permutation):
    if permutation is None:
        return batch, None
    pi = torch.as_tensor(permutation.pi, dtype=torch.long)
    if pi.numel() != batch.shape[1]:
        raise ValueError(f"permutation length {pi.numel()} != sequence length {batch.shape[1]}")
    return batch[:, pi], pi.expand_as(batch)


def train(model: Transformer, dataset: PackedDataset, config: TrainConfig,
          val_dataset: PackedDataset | None = None,
          log_path: str | os.PathLike | None = None,
          checkpoint_dir: str | os.PathLike | None = None,
          permutation=None,
          partitions: Callable[[np.ndarray], Sequence[SpanPartition]] | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Run ``config.total_steps`` optimizer steps and return the model plus its log.

    ``permutation`` (a corruption spec) is applied to tokens and position ids
    of every training and validation sequence. ``partitions`` maps the
    batch's row indices to span partitions for block-coupled MDM masking.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if dataset.vocab_size != model.config.vocab_size:
        raise ValueError(f"dataset vocab {dataset.vocab_size} != model vocab {model.config.vocab_size}")
    want_mode = "causal" if config.objective == "ar" else "bidirectional"
    if model.attention_mode != want_mode:
        raise ValueError(f"objective {config.objective} needs a {want_mode} model")

    L, B = dataset.seq_len, config.batch_size
    per_step = budget.flops_per_step(model.config, L, B)
    train_schedule = get_schedule(config.train_schedule)
    optimizer = build_optimizer(model, config)
    sampler = EpochSampler(len(dataset), B, config.seed)
    data = torch.from_numpy(dataset.sequences)
    val = val_dataset.subset(config.eval_sequences) if val_dataset is not None else None

    log: list[dict] = []
    final_bpb = None
    model.train()
    for step in range(config.total_steps):
        lr = lr_at(step, config)
        for group in optimizer.param_groups:
            group["lr"] = lr
        rows = sampler.next()
        batch, pos = _permute_batch(data[torch.from_numpy(rows)], permutation)

        if config.objective == "ar":
            loss, _ = ar_loss(model, batch, pos)
        else:
            part = partitions(rows) if partitions is not None else None
            loss, _ = mdm_loss(model, batch, train_schedule, _step_generator(config.seed, step),
                               partition=part, position_ids=pos)
        if not torch.isfinite(loss):
            raise NumericalError(f"non-finite training loss {loss.item()} at step {step} (lr={lr:.3g})")

        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        grad_norm = float(torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip_norm))
        if not math.isfinite(grad_norm):
            raise NumericalError(f"non-finite gradient norm at step {step}")
        optimizer.step()

        row = {"step": step, "tokens": (step + 1) * B * L, "flops": (step + 1) * per_step,
               "train_loss_nats": float(loss.item()), "val_bpb": None, "lr": lr, "grad_norm": grad_norm}
        last = step == config.total_steps - 1
        if val is not None and ((config.eval_interval and (step + 1) % config.eval_interval == 0) or last):
            report = metrics.bpb(model, val, objective=config.objective,
                                 schedule=get_schedule(config.eval_schedule),
                                 n_points=config.eval_quadrature, permutation=permutation)
            model.train()
            row["val_bpb"] = report.bpb
            final_bpb = report.bpb
        log.append(row)
        if progress is not None:
            progress(row)

    model.eval()
    if log_path is not None:
        write_log(log, log_path)
    if checkpoint_dir is not None:
        save_checkpoint(checkpoint_dir, model, step=config.total_steps,
                        extra_tensors=_optimizer_tensors(model, optimizer),
                        extra_meta={"train_config": asdict(config)})
    return TrainResult(model, log, final_bpb, per_step)


def _optimizer_tensors(model, optimizer) -> dict[str, torch.Tensor]:
    names = {id(p): n for n, p in model.named_parameters()}
    out = {}
    for p, state in optimizer.state.items():
        for key, value in state.items():
            if isinstance(value, torch.Tensor):
                out[f"adam.{names[id(p)]}.{key}"] = value.detach().to(torch.float64 if value.is_floating_point() else value.dtype)
    return out
