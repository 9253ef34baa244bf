"""Bits-per-byte, chain-rule conditional likelihood and entropy/boundary analysis."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from scipy.stats import rankdata

from . import numcore as nc
from .corpus import PackedDataset
from .objectives import COSINE, MaskSchedule, mdm_nelbo_quadrature

LN2 = math.log(2.0)


@dataclass(frozen=True)
class EvalReport:
    nll_nats_total: float
    bytes_total: int
    tokens_scored: int
    objective: str
    representation: str

    @property
    def bpb(self) -> float:
        # one rounding in the denominator: a uniform byte model gives exactly 8.0
        return self.nll_nats_total / (self.bytes_total * LN2)

    @property
    def nats_per_token(self) -> float:
        return self.nll_nats_total / self.tokens_scored

    def as_dict(self) -> dict:
        return {"objective": self.objective, "representation": self.representation,
                "nll_nats_total": self.nll_nats_total, "bytes_total": self.bytes_total,
                "tokens_scored": self.tokens_scored, "bpb": self.bpb}


def _positions(permutation, n: int, L: int):
    if permutation is None:
        return None, None
    pi = np.asarray(permutation.pi, dtype=np.int64)
    if len(pi) != L:
        raise ValueError(f"permutation length {len(pi)} != sequence length {L}")
    return pi, torch.from_numpy(pi).expand(n, L)


@torch.no_grad()
def bpb(model, dataset: PackedDataset, objective: str = "ar", schedule: MaskSchedule = COSINE,
        batch_size: int = 16, n_points: int = 64, seed: int = 0, permutation=None) -> EvalReport:
    """Bits per raw byte of ``dataset`` under ``model``.

    AR: exact teacher-forced NLL of tokens ``1..L-1`` of every row; the bytes
    counted are those under the scored tokens. MDM: stratified-quadrature
    NELBO of whole rows over all their bytes.
    """
    if dataset.vocab_size != model.config.vocab_size:
        raise ValueError(f"tokenizer/model vocab mismatch: data V={dataset.vocab_size}, "
                         f"model V={model.config.vocab_size}")
    if objective not in ("ar", "mdm"):
        raise ValueError(f"unknown objective {objective!r}")
    n, L = dataset.sequences.shape
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    pi, _ = _positions(permutation, n, L)
    widths = dataset.widths() if objective == "ar" else None
    rng = torch.Generator().manual_seed(seed)

    sums: list[float] = []
    bytes_total = 0
    for lo in range(0, n, batch_size):
        rows = dataset.sequences[lo : lo + batch_size]
        x = torch.from_numpy(rows)
        pos = None
        if pi is not None:
            x = x[:, torch.from_numpy(pi)]
            pos = torch.from_numpy(pi).expand_as(x)
        if objective == "ar":
            logits = model(x, pos).to(torch.float64)
            nll = nc.cross_entropy(logits[:, :-1], x[:, 1:])
            sums.extend(nll.reshape(-1).tolist())  # per token, so fsum rounds once
            w = widths[lo : lo + batch_size]
            if pi is not None:
                w = w[:, pi]
            bytes_total += int(w[:, 1:].sum())
        else:
            nelbo = mdm_nelbo_quadrature(model, x, schedule, rng, n_points, position_ids=pos)
            sums.extend(nelbo.tolist())
            bytes_total += int(dataset.seq_bytes[lo : lo + batch_size].sum())
    if was_training:
        model.train()
    tokens = n * (L - 1) if objective == "ar" else n * L
    return EvalReport(math.fsum(sums), bytes_total, tokens, objective, dataset.representation)


@torch.no_grad()
def chain_rule_loglik(model, prompt: Sequence[int], continuation: Sequence[int]) -> float:
    """``sum_i log p(c_i | prompt, c_<i)`` in nats.

    AR reads every term off one causal pass. MDM runs one bidirectional pass
    per term with the not-yet-decoded suffix fully masked.
    """
    prompt, continuation = list(prompt), list(continuation)
    if not continuation:
        raise ValueError("empty continuation")
    total_len = len(prompt) + len(continuation)
    if total_len > model.config.max_seq_len:
        raise ValueError(f"prompt+continuation ({total_len}) exceeds max_seq_len")
    p = len(prompt)
    if model.attention_mode == "causal":
        if p == 0:
            raise ValueError("AR scoring needs a non-empty prompt")
        x = torch.tensor(prompt + continuation, dtype=torch.long)
        logits = model(x.unsqueeze(0)).to(torch.float64)
        nll = nc.cross_entropy(logits[:, :-1], x.unsqueeze(0)[:, 1:])[0]
        return float(-nll[p - 1 :].sum())

    mask_id = model.config.mask_id
    rows = []
    for i in range(len(continuation)):
        rows.append(prompt + continuation[:i] + [mask_id] * (len(continuation) - i))
    x = torch.tensor(rows, dtype=torch.long)
    logp = nc.log_softmax(model(x).to(torch.float64), dim=-1)
    terms = [logp[i, p + i, continuation[i]].item() for i in range(len(continuation))]
    return math.fsum(terms)


@torch.no_grad()
def entropy_map(model, text: bytes, window: int | None = None) -> np.ndarray:
    """Predictive entropy (nats) of each byte given the bytes before it.

    Byte 0 has no context and gets NaN. Texts longer than the model context
    are scored with half-overlapping windows; each byte takes its prediction
    from the window that gives it the most left context.
    """
    if model.attention_mode != "causal":
        raise ValueError("entropy_map needs a causal model")
    if model.config.vocab_size != 256:
        raise ValueError("entropy_map needs a byte-level model")
    data = np.frombuffer(bytes(text), dtype=np.uint8).astype(np.int64)
    n = len(data)
    out = np.full(n, np.nan)
    if n < 2:
        return out
    W = min(window or model.config.max_seq_len, model.config.max_seq_len)
    stride = max(1, W // 2)
    start = 0
    while True:
        chunk = torch.from_numpy(data[start : start + W])
        ent = nc.entropy(model(chunk.unsqueeze(0)).to(torch.float64))[0].numpy()
        # slot j predicts byte start + j + 1
        first = 0 if start == 0 else W - stride - 1
        for j in range(first, len(chunk) - 1):
            out[start + j + 1] = ent[j]
        if start + W >= n:
            break
        start += stride
    return out


@dataclass(frozen=True)
class BoundaryAlignmentReport:
    entropies: np.ndarray
    labels: np.ndarray
    roc_auc: float
    n_pos: int
    n_neg: int


def boundary_auc(entropies, labels) -> BoundaryAlignmentReport:
    """ROC AUC of entropy as a score for boundary labels (Mann-Whitney, ties half).

    Positions with NaN entropy are dropped.
    """
    s = np.asarray(entropies, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {y.shape}")
    keep = ~np.isnan(s)
    s, y = s[keep], y[keep]
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("boundary_auc needs both positive and negative labels")
    ranks = rankdata(s)  # average ranks count ties as half wins
    auc = (ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
    return BoundaryAlignmentReport(s, y, float(auc), n_pos, n_neg)


def write_entropy_csv(path: str | os.PathLike, text: bytes, entropies: np.ndarray,
                      labels: np.ndarray | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["byte_index", "byte_hex", "entropy_nats", "boundary_label"])
        for i, b in enumerate(bytes(text)):
            e = entropies[i]
            w.writerow([i, f"{b:02x}", "" if np.isnan(e) else repr(float(e)),
                        "" if labels is None else int(labels[i])])
