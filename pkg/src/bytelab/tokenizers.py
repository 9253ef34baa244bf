"""Byte and byte-pair-encoding tokenizers with exact byte-offset tracking.

Both kinds operate on raw bytes: there is no pre-tokenization regex, no
whitespace marker and no special token. Token ids ``0..255`` are always the
single bytes; BPE merges append ids ``256, 257, ...`` in creation order.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_HEADER = "bytelab-tokenizer v1"
SPACE = 0x20


@dataclass(frozen=True)
class Tokenizer:
    kind: str  # "byte" or "bpe"
    merges: tuple[tuple[int, int], ...] = ()
    token_bytes: tuple[bytes, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("byte", "bpe"):
            raise ValueError(f"unknown tokenizer kind {self.kind!r}")
        if self.kind == "byte" and self.merges:
            raise ValueError("byte tokenizer cannot carry merges")
        table = [bytes([i]) for i in range(256)]
        for rank, (left, right) in enumerate(self.merges):
            new_id = 256 + rank
            if not (0 <= left < new_id and 0 <= right < new_id):
                raise ValueError(f"merge {rank} references an undefined token")
            table.append(table[left] + table[right])
        object.__setattr__(self, "token_bytes", tuple(table))

    @property
    def vocab_size(self) -> int:
        return 256 + len(self.merges)

    @property
    def token_lengths(self) -> np.ndarray:
        return np.array([len(b) for b in self.token_bytes], dtype=np.int64)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def dumps(self) -> str:
        lines = [FORMAT_HEADER, f"kind {self.kind}", f"vocab_size {self.vocab_size}"]
        for left, right in self.merges:
            lines.append(
                f"merge {left} {right} "
                f"{self.token_bytes[left].hex()} {self.token_bytes[right].hex()}"
            )
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "Tokenizer":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != FORMAT_HEADER:
            raise ValueError("not a bytelab tokenizer file")
        kind = None
        vocab_size = None
        merges = []
        for ln in lines[1:]:
            parts = ln.split()
            if parts[0] == "kind":
                kind = parts[1]
            elif parts[0] == "vocab_size":
                vocab_size = int(parts[1])
            elif parts[0] == "merge":
                merges.append((int(parts[1]), int(parts[2])))
            else:
                raise ValueError(f"unrecognised tokenizer line: {ln!r}")
        tok = cls(kind, tuple(merges))
        if vocab_size != tok.vocab_size:
            raise ValueError(
                f"vocab_size {vocab_size} disagrees with {len(merges)} merges"
            )
        # byte strings are redundant with the ids; check them anyway
        for ln in lines[1:]:
            parts = ln.split()
            if parts[0] == "merge" and (
                tok.token_bytes[int(parts[1])].hex() != parts[3]
                or tok.token_bytes[int(parts[2])].hex() != parts[4]
            ):
                raise ValueError(f"merge bytes do not match ids: {ln!r}")
        return tok

    @classmethod
    def load(cls, path: str | Path) -> "Tokenizer":
        return cls.loads(Path(path).read_text())


def byte_tokenizer() -> Tokenizer:
    return Tokenizer("byte")


def _merge_positions(ids: np.ndarray, left: int, right: int) -> np.ndarray:
    """Start indices of the pair, chosen greedily left to right without overlap."""
    if len(ids) < 2:
        return np.empty(0, dtype=np.int64)
    cand = np.flatnonzero((ids[:-1] == left) & (ids[1:] == right))
    if left != right or len(cand) < 2:
        return cand
    # runs like "aaaa" yield consecutive candidates; keep every other one per run
    is_start = np.empty(len(cand), dtype=bool)
    is_start[0] = True
    is_start[1:] = np.diff(cand) != 1
    run_first = np.maximum.accumulate(np.where(is_start, np.arange(len(cand)), 0))
    return cand[(np.arange(len(cand)) - run_first) % 2 == 0]


def _apply_merge(ids: np.ndarray, pos: np.ndarray, new_id: int) -> np.ndarray:
    out = ids.copy()
    out[pos] = new_id
    keep = np.ones(len(ids), dtype=bool)
    keep[pos + 1] = False
    return out[keep]


def train_bpe(corpus, target_vocab: int) -> Tokenizer:
    """Greedy BPE over raw bytes.

    ``corpus`` is a byte string or anything exposing ``train_bytes()``.
    Equal pair counts are broken by the smaller left id, then the smaller
    right id. Training stops early, with a warning, once no adjacent pair
    is left to merge.
    """
    if target_vocab <= 256:
        raise ValueError(f"target_vocab must exceed 256, got {target_vocab}")
    data = corpus.train_bytes() if hasattr(corpus, "train_bytes") else bytes(corpus)
    if not data:
        raise ValueError("empty training text")

    V = target_vocab
    ids = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    counts = np.zeros(V * V, dtype=np.int64)
    np.add.at(counts, ids[:-1] * V + ids[1:], 1)

    merges: list[tuple[int, int]] = []
    for new_id in range(256, V):
        best = int(np.argmax(counts))  # row-major: smallest left, then right
        if counts[best] == 0:
            warnings.warn(
                f"BPE stopped at vocab {new_id}: no adjacent pair left to merge "
                f"(requested {V})",
                stacklevel=2,
            )
            break
        left, right = divmod(best, V)
        pos = _merge_positions(ids, left, right)

        n = len(ids)
        old = np.unique(np.concatenate([pos - 1, pos, pos + 1]))
        old = old[(old >= 0) & (old < n - 1)]
        np.subtract.at(counts, ids[old] * V + ids[old + 1], 1)

        ids = _apply_merge(ids, pos, new_id)
        q = pos - np.arange(len(pos))
        new = np.unique(np.concatenate([q - 1, q]))
        new = new[(new >= 0) & (new < len(ids) - 1)]
        np.add.at(counts, ids[new] * V + ids[new + 1], 1)
        merges.append((left, right))

    return Tokenizer("bpe", tuple(merges))


def encode_with_spans(tok: Tokenizer, data: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Token ids plus half-open byte spans, shape ``(n, 2)``."""
    if tok.kind == "byte":
        ids = np.frombuffer(bytes(data), dtype=np.uint8).astype(np.int64)
        starts = np.arange(len(ids), dtype=np.int64)
        return ids, np.stack([starts, starts + 1], axis=1)
    ids = np.frombuffer(bytes(data), dtype=np.uint8).astype(np.int32)
    starts = np.arange(len(ids), dtype=np.int64)
    present = np.zeros(tok.vocab_size, dtype=bool)
    present[np.unique(ids)] = True
    for rank, (left, right) in enumerate(tok.merges):
        if len(ids) < 2:
            break
        if not (present[left] and present[right]):
            continue
        pos = _merge_positions(ids, left, right)
        if len(pos) == 0:
            continue
        new_id = 256 + rank
        keep = np.ones(len(ids), dtype=bool)
        keep[pos + 1] = False
        ids[pos] = new_id
        ids = ids[keep]
        starts = starts[keep]
        present[new_id] = True
        # left/right may now be exhausted; a stale True only costs a scan
    ends = np.append(starts[1:], len(data)).astype(np.int64)
    spans = np.stack([starts, ends], axis=1) if len(ids) else np.empty((0, 2), np.int64)
    return ids.astype(np.int64), spans


def encode(tok: Tokenizer, data: bytes) -> np.ndarray:
    return encode_with_spans(tok, data)[0]


def decode(tok: Tokenizer, tokens: Sequence[int] | np.ndarray) -> bytes:
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= tok.vocab_size):
        bad = arr[(arr < 0) | (arr >= tok.vocab_size)][0]
        raise ValueError(f"token id {bad} out of range for vocab {tok.vocab_size}")
    if tok.kind == "byte":
        return arr.astype(np.uint8).tobytes()
    table = tok.token_bytes
    return b"".join(table[i] for i in arr.tolist())


def boundary_labels(spans: np.ndarray, data: bytes) -> np.ndarray:
    """1 at the first non-space byte of every token span, 0 elsewhere.

    Only ASCII 0x20 counts as space; a span made purely of spaces has no
    boundary byte.
    """
    spans = np.asarray(spans, dtype=np.int64).reshape(-1, 2)
    n = len(data)
    if len(spans) == 0:
        if n:
            raise ValueError("span map is empty but bytes are not")
        return np.zeros(0, dtype=np.int8)
    if spans[0, 0] != 0 or spans[-1, 1] != n or np.any(spans[1:, 0] != spans[:-1, 1]):
        raise ValueError(f"spans do not tile the {n}-byte input")
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    labels = np.zeros(n, dtype=np.int8)
    for start, end in spans.tolist():
        nz = np.flatnonzero(buf[start:end] != SPACE)
        if len(nz):
            labels[start + nz[0]] = 1
    return labels
