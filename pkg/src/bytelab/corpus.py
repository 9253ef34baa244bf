"""Raw byte corpora, train/validation splits and fixed-length packing."""

from __future__ import annotations

import glob
import gzip
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tokenizers import Tokenizer, decode, encode_with_spans


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class RawCorpus:
    source_path: str
    bytes_total: int
    split_fraction: float
    seed: int
    data: bytes = field(repr=False, compare=False)

    @property
    def split_at(self) -> int:
        """First byte of the validation suffix."""
        return self.bytes_total - int(round(self.bytes_total * self.split_fraction))

    @property
    def train_range(self) -> tuple[int, int]:
        return (0, self.split_at)

    @property
    def val_range(self) -> tuple[int, int]:
        return (self.split_at, self.bytes_total)

    def train_bytes(self) -> bytes:
        return self.data[: self.split_at]

    def val_bytes(self) -> bytes:
        return self.data[self.split_at :]

    def split_bytes(self, split: str) -> bytes:
        if split == "train":
            return self.train_bytes()
        if split in ("val", "validation"):
            return self.val_bytes()
        raise ValueError(f"unknown split {split!r}")


def _read_source(path: Path) -> bytes:
    if path.is_dir():
        shards = sorted(p for p in path.rglob("*") if p.is_file())
        if not shards:
            raise CorpusError(f"no shards under {path}")
        return b"".join(p.read_bytes() for p in shards)
    return path.read_bytes()


def ingest(path: str | os.PathLike, split_fraction: float = 0.1, seed: int = 0) -> RawCorpus:
    """Read a file (or a directory of shards, in sorted order) as one byte stream.

    The validation split is the contiguous suffix holding ``split_fraction``
    of the bytes.
    """
    p = Path(path)
    if not p.exists():
        raise CorpusError(f"missing corpus file: {p}")
    if not 0.0 < split_fraction < 1.0:
        raise CorpusError(f"split_fraction must lie in (0, 1), got {split_fraction}")
    try:
        data = _read_source(p)
    except OSError as exc:
        raise CorpusError(f"unreadable corpus {p}: {exc}") from exc
    if not data:
        raise CorpusError("empty corpus")
    return RawCorpus(str(p), len(data), split_fraction, int(seed), data)


def from_bytes(data: bytes, split_fraction: float = 0.1, seed: int = 0, name: str = "<memory>") -> RawCorpus:
    if not data:
        raise CorpusError("empty corpus")
    return RawCorpus(name, len(data), split_fraction, int(seed), bytes(data))


def normalize_seq_len(l_byte: int, bytes_per_token: float) -> int:
    """Token context that carries ``l_byte`` raw bytes; round half to even, floor 1."""
    if l_byte <= 0 or bytes_per_token <= 0:
        raise ValueError("l_byte and bytes_per_token must be positive")
    if bytes_per_token < 1:
        raise ValueError(f"bytes_per_token must be >= 1, got {bytes_per_token}")
    return max(1, round(l_byte / bytes_per_token))


@dataclass(frozen=True)
class PackedDataset:
    sequences: np.ndarray  # (n, L) int64
    seq_bytes: np.ndarray  # (n,) raw bytes under each sequence
    vocab_size: int
    representation: str
    tokenizer_fingerprint: str = ""
    token_widths: np.ndarray | None = field(default=None, repr=False, compare=False)  # (n, L) bytes per token

    def widths(self) -> np.ndarray:
        """Raw bytes under every token, shape ``(n, L)``."""
        if self.token_widths is not None:
            return self.token_widths
        if self.representation == "byte":
            return np.ones_like(self.sequences)
        raise ValueError("dataset carries no per-token byte widths")

    @property
    def seq_len(self) -> int:
        return int(self.sequences.shape[1])

    @property
    def bytes_total(self) -> int:
        return int(self.seq_bytes.sum())

    @property
    def tokens_total(self) -> int:
        return int(self.sequences.size)

    @property
    def bytes_per_token(self) -> float:
        return self.bytes_total / self.tokens_total

    def __len__(self) -> int:
        return len(self.sequences)

    def subset(self, n: int) -> "PackedDataset":
        return PackedDataset(
            self.sequences[:n], self.seq_bytes[:n], self.vocab_size,
            self.representation, self.tokenizer_fingerprint,
            None if self.token_widths is None else self.token_widths[:n],
        )

    def save(self, path: str | os.PathLike) -> None:
        extra = {} if self.token_widths is None else {"token_widths": self.token_widths}
        np.savez(
            path,
            sequences=self.sequences,
            seq_bytes=self.seq_bytes,
            **extra,
            meta=np.array(json.dumps({
                "vocab_size": self.vocab_size,
                "representation": self.representation,
                "tokenizer_fingerprint": self.tokenizer_fingerprint,
            })),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PackedDataset":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            widths = z["token_widths"].astype(np.int64) if "token_widths" in z.files else None
            return cls(z["sequences"].astype(np.int64), z["seq_bytes"].astype(np.int64), **meta,
                       token_widths=widths)


def pack_bytes(data: bytes, tokenizer: Tokenizer, seq_len: int) -> PackedDataset:
    if seq_len < 2:
        raise ValueError(f"seq_len must be >= 2, got {seq_len}")
    ids, spans = encode_with_spans(tokenizer, data)
    n = len(ids) // seq_len
    if n == 0:
        raise CorpusError("corpus shorter than one sequence")
    ids = ids[: n * seq_len].reshape(n, seq_len)
    widths = (spans[: n * seq_len, 1] - spans[: n * seq_len, 0]).reshape(n, seq_len)
    return PackedDataset(
        sequences=ids.astype(np.int64),
        seq_bytes=widths.sum(axis=1).astype(np.int64),
        vocab_size=tokenizer.vocab_size,
        representation=tokenizer.kind,
        tokenizer_fingerprint=tokenizer.fingerprint(),
        token_widths=None if tokenizer.kind == "byte" else widths.astype(np.int32),
    )


def pack(corpus: RawCorpus, tokenizer: Tokenizer, seq_len: int, split: str = "train") -> PackedDataset:
    """Chunk the token stream of one split into non-overlapping length-``seq_len`` rows.

    The trailing partial row is dropped.
    """
    return pack_bytes(corpus.split_bytes(split), tokenizer, seq_len)


def unpack_bytes(ds: PackedDataset, tokenizer: Tokenizer) -> bytes:
    return decode(tokenizer, ds.sequences.reshape(-1))


def manifest(corpus: RawCorpus, tokenizer: Tokenizer, train: PackedDataset, val: PackedDataset) -> dict:
    return {
        "source_path": corpus.source_path,
        "bytes_total": corpus.bytes_total,
        "split_fraction": corpus.split_fraction,
        "seed": corpus.seed,
        "train_range": list(corpus.train_range),
        "val_range": list(corpus.val_range),
        "sha256": hashlib.sha256(corpus.data).hexdigest(),
        "tokenizer_kind": tokenizer.kind,
        "tokenizer_fingerprint": tokenizer.fingerprint(),
        "vocab_size": tokenizer.vocab_size,
        "seq_len": train.seq_len,
        "train_sequences": len(train),
        "val_sequences": len(val),
        "train_bytes_covered": train.bytes_total,
        "val_bytes_covered": val.bytes_total,
        "bytes_per_token": train.bytes_per_token,
    }


# -- local English text harvesting -------------------------------------------
#
# The lab has no bundled corpus. These helpers gather English prose that ships
# with a typical Linux/Python install (package docs, licences, docstrings and
# comments) so desk-scale experiments have 10+ MB of natural text to work on.

_PROSE = re.compile(r"^[A-Za-z][A-Za-z ,.;:'\"()!?-]+$")

_DOC_GLOBS = (
    "/usr/share/doc/**/*",
    "/usr/share/perl*/**/*.pod",
    "/usr/share/**/*.txt",
    "/usr/lib/**/*.rst",
    "/usr/lib/**/*.md",
    "/usr/lib/**/*.txt",
    "/usr/local/lib/**/*.rst",
    "/usr/local/lib/**/*.md",
    "/usr/local/lib/**/*.txt",
    "/usr/local/lib/**/METADATA",
)
_SOURCE_GLOBS = (
    "/usr/local/lib/python3*/*-packages/**/*.py",
    "/usr/lib/python3*/**/*.py",
)


def _prose_lines(text: str, strip_comment: bool):
    for line in text.splitlines():
        s = line.strip()
        if strip_comment:
            s = s.lstrip("#").strip()
        if len(s) >= 50 and s.count(" ") >= 6 and _PROSE.match(s):
            yield s


def _source_group(path: str) -> str:
    parts = Path(path).parts
    for anchor in ("dist-packages", "site-packages", "doc"):
        if anchor in parts:
            i = parts.index(anchor)
            if i + 1 < len(parts):
                return "/".join(parts[: i + 2])
    return str(Path(path).parent)


def harvest_local_text(max_bytes: int = 16_000_000, group_cap: int = 600_000,
                       chunk: int = 4096) -> bytes:
    """Deterministically collect deduplicated English prose lines from local files.

    Lines are grouped by their source package, each group is capped at
    ``group_cap`` bytes, and groups are interleaved round-robin in
    ``chunk``-byte slices so a contiguous suffix is representative of the
    whole.
    """
    groups: dict[str, list[str]] = {}
    sizes: dict[str, int] = {}
    seen_lines: set[str] = set()
    seen_files: set[bytes] = set()

    def feed(path: str, strip_comment: bool) -> None:
        group = _source_group(path)
        if sizes.get(group, 0) >= group_cap:
            return
        try:
            raw = gzip.open(path).read() if path.endswith(".gz") else open(path, "rb").read()
            text = raw.decode("utf-8")
        except (OSError, UnicodeDecodeError, EOFError):
            return
        digest = hashlib.sha1(raw).digest()
        if digest in seen_files:
            return
        seen_files.add(digest)
        bucket = groups.setdefault(group, [])
        for s in _prose_lines(text, strip_comment):
            if s in seen_lines:
                continue
            seen_lines.add(s)
            bucket.append(s)
            sizes[group] = sizes.get(group, 0) + len(s) + 1
            if sizes[group] >= group_cap:
                break

    for pattern in _DOC_GLOBS:
        for path in sorted(glob.glob(pattern, recursive=True)):
            if os.path.isfile(path):
                feed(path, strip_comment=False)
    for pattern in _SOURCE_GLOBS:
        for path in sorted(glob.glob(pattern, recursive=True)):
            feed(path, strip_comment=True)

    streams = [("\n".join(groups[g]) + "\n").encode() for g in sorted(groups) if groups[g]]
    out = bytearray()
    offsets = [0] * len(streams)
    while len(out) < max_bytes:
        progressed = False
        for i, s in enumerate(streams):
            start = offsets[i]
            if start >= len(s):
                continue
            # cut on a line boundary so slices do not splice words
            end = s.find(b"\n", start + chunk)
            end = len(s) if end < 0 else end + 1
            out += s[start:end]
            offsets[i] = end
            progressed = True
        if not progressed:
            break
    return bytes(out[:max_bytes])
