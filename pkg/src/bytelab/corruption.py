"""Static sequence permutations and compression-based regularity proxies.

A permutation ``pi`` rearranges a length-L sequence so that slot ``j`` holds
``seq[pi[j]]`` with position id ``pi[j]``. Block strategies cut ``0..L-1``
into aligned blocks of ``k`` (the last block may be shorter and is then a unit
of its own).
"""

from __future__ import annotations

import bz2
import lzma
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

STRATEGIES = ("identity", "global", "inter_block", "intra_block", "global_bpe")


@dataclass(frozen=True)
class PermutationSpec:
    strategy: str
    L: int
    k: int
    seed: int
    pi: np.ndarray = field(repr=False, compare=False)

    @property
    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.pi)
        inv[self.pi] = np.arange(len(self.pi))
        return inv

    def label(self) -> str:
        if self.strategy in ("inter_block", "intra_block"):
            return f"{self.strategy.split('_')[0]}-{self.k}"
        return self.strategy


def _blocks(L: int, k: int) -> list[np.ndarray]:
    return [np.arange(s, min(s + k, L)) for s in range(0, L, k)]


def make_permutation(strategy: str, L: int, k: int = 1, seed: int = 0) -> PermutationSpec:
    """Draw one static permutation; the same ``seed`` always gives the same ``pi``."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if L < 1:
        raise ValueError("L must be >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    if strategy == "identity":
        pi = np.arange(L)
    elif strategy in ("global", "global_bpe"):
        pi = rng.permutation(L)
    elif strategy == "inter_block":
        blocks = _blocks(L, k)
        pi = np.concatenate([blocks[i] for i in rng.permutation(len(blocks))])
    else:
        pi = np.concatenate([rng.permutation(b) for b in _blocks(L, k)])
    return PermutationSpec(strategy, L, k, seed, pi.astype(np.int64))


def apply_permutation(seq, spec: PermutationSpec) -> tuple[np.ndarray, np.ndarray]:
    """``(tokens, position_ids)`` with ``tokens[j] = seq[pi[j]]`` and ``position_ids[j] = pi[j]``."""
    arr = np.asarray(seq)
    if arr.shape[-1] != spec.L:
        raise ValueError(f"sequence length {arr.shape[-1]} != permutation length {spec.L}")
    return arr[..., spec.pi], spec.pi.copy()


def unapply_permutation(permuted, spec: PermutationSpec) -> np.ndarray:
    arr = np.asarray(permuted)
    if arr.shape[-1] != spec.L:
        raise ValueError(f"sequence length {arr.shape[-1]} != permutation length {spec.L}")
    return arr[..., spec.inverse]


def permute_bytes(data: bytes, spec: PermutationSpec) -> bytes:
    """Apply ``spec`` to every full L-byte window; a short tail is left as is."""
    arr = np.frombuffer(bytes(data), dtype=np.uint8)
    n = len(arr) // spec.L
    out = arr.copy()
    if n:
        out[: n * spec.L] = arr[: n * spec.L].reshape(n, spec.L)[:, spec.pi].reshape(-1)
    return out.tobytes()


# -- compressors ------------------------------------------------------------------

def _deflate(data: bytes) -> int:
    # raw DEFLATE stream, no zlib header or checksum
    c = zlib.compressobj(9, zlib.DEFLATED, -15)
    return len(c.compress(data) + c.flush())


COMPRESSORS: dict[str, Callable[[bytes], int]] = {
    "deflate": _deflate,
    "lzma": lambda d: len(lzma.compress(d, preset=9)),
    "bz2": lambda d: len(bz2.compress(d, 9)),
}

COMPRESSOR_SETTINGS = {"deflate": "zlib raw deflate level 9", "lzma": "xz preset 9", "bz2": "bzip2 level 9"}


def register_compressor(name: str, size_fn: Callable[[bytes], int], settings: str = "") -> None:
    """Add a compressor; ``size_fn`` returns the compressed size in bytes."""
    COMPRESSORS[name] = size_fn
    COMPRESSOR_SETTINGS[name] = settings


def compressed_size(data: bytes, compressor: str = "deflate") -> int:
    try:
        fn = COMPRESSORS[compressor]
    except KeyError:
        raise ValueError(f"unknown compressor {compressor!r}; have {sorted(COMPRESSORS)}") from None
    return fn(data)


@dataclass(frozen=True)
class RegularityReport:
    strategy: str
    k: int
    seed: int
    compressor: str
    raw_bytes: int
    original_compressed: int
    permuted_compressed: int

    @property
    def c_orig(self) -> float:
        return 1 - self.original_compressed / self.raw_bytes

    @property
    def c_perm(self) -> float:
        return 1 - self.permuted_compressed / self.raw_bytes

    @property
    def loss_pct(self) -> float:
        """Share of the original compressibility destroyed by the permutation, in percent."""
        if self.original_compressed == self.permuted_compressed:
            return 0.0
        return 100 * (self.c_orig - self.c_perm) / self.c_orig

    @property
    def points_drop(self) -> float:
        """Absolute drop of compressibility in percentage points."""
        return 100 * (self.c_orig - self.c_perm)

    @property
    def size_increase_pct(self) -> float:
        """Relative growth of the compressed size, in percent."""
        return 100 * (self.permuted_compressed - self.original_compressed) / self.original_compressed

    def row(self) -> dict:
        return {"strategy": self.strategy, "k": self.k, "seed": self.seed, "compressor": self.compressor,
                "c_orig": self.c_orig, "c_perm": self.c_perm, "loss_pct": self.loss_pct,
                "points_drop": self.points_drop, "size_increase_pct": self.size_increase_pct}


REPORT_FIELDS = ("strategy", "k", "seed", "compressor", "c_orig", "c_perm", "loss_pct", "points_drop",
                 "size_increase_pct")


def _windows(data: bytes, L: int) -> list[bytes]:
    return [data[i : i + L] for i in range(0, len(data) - L + 1, L)]


def regularity_loss(raw: bytes, spec: PermutationSpec, compressor: str = "deflate",
                    tokenizer=None) -> RegularityReport:
    """Compressibility lost when every L-window of ``raw`` is permuted by ``spec``.

    Each window is compressed on its own, before and after permutation, and
    sizes are summed over windows. For ``global_bpe`` the windows are L BPE
    tokens; permuted tokens are decoded back to bytes before compression.
    """
    if compressor not in COMPRESSORS:
        raise ValueError(f"unknown compressor {compressor!r}; have {sorted(COMPRESSORS)}")
    if spec.strategy == "global_bpe":
        if tokenizer is None:
            raise ValueError("global_bpe needs a tokenizer")
        from .tokenizers import decode, encode

        ids = encode(tokenizer, raw)
        n = len(ids) // spec.L
        if n == 0:
            raise ValueError(f"input has fewer than L={spec.L} tokens")
        rows = ids[: n * spec.L].reshape(n, spec.L)
        originals = [decode(tokenizer, r) for r in rows]
        permuted = [decode(tokenizer, r[spec.pi]) for r in rows]
    else:
        if len(raw) < max(spec.k, spec.L):
            raise ValueError(f"input shorter than the permutation length {spec.L}")
        originals = _windows(raw, spec.L)
        arr = np.frombuffer(b"".join(originals), dtype=np.uint8).reshape(len(originals), spec.L)
        permuted = [r.tobytes() for r in arr[:, spec.pi]]
    raw_total = sum(len(w) for w in originals)
    orig = sum(compressed_size(w, compressor) for w in originals)
    perm = sum(compressed_size(w, compressor) for w in permuted)
    return RegularityReport(spec.strategy, spec.k, spec.seed, compressor, raw_total, orig, perm)


def permuted_training_run(model, dataset, config, spec: PermutationSpec, val_dataset=None, **kwargs):
    """Train an AR model with ``spec`` applied to every sequence (and to validation)."""
    from .trainer import train

    if config.objective != "ar" or model.attention_mode != "causal":
        raise ValueError("permuted training runs use the autoregressive objective")
    if spec.L != dataset.seq_len:
        raise ValueError(f"permutation length {spec.L} != dataset sequence length {dataset.seq_len}")
    return train(model, dataset, config, val_dataset=val_dataset, permutation=spec, **kwargs)
