import numpy as np
import pytest

from bytelab.corpus import (
    CorpusError, PackedDataset, from_bytes, ingest, manifest, normalize_seq_len, pack, pack_bytes,
    unpack_bytes,
)
from bytelab.tokenizers import byte_tokenizer, train_bpe


VOCAB = [b"rain", b"spain", b"stays", b"mainly", b"in", b"the", b"plain", b"on", b"a", b"quiet", b"day"]


def words(n, seed=0):
    rng = np.random.default_rng(seed)
    return b" ".join(VOCAB[i] for i in rng.integers(0, len(VOCAB), n)) + b"."


def test_ingest_counts_and_split(tmp_path):
    p = tmp_path / "c.bin"
    p.write_bytes(bytes(range(256)) * 3906 + bytes(64))  # 1,000,000 bytes
    c = ingest(p, 0.1, seed=3)
    assert c.bytes_total == 1_000_000
    assert c.val_range == (900_000, 1_000_000)
    assert c.train_range[1] == c.val_range[0]  # disjoint, contiguous
    again = ingest(p, 0.1, seed=3)
    assert again.train_bytes() == c.train_bytes() and again.val_bytes() == c.val_bytes()


def test_ingest_errors(tmp_path):
    with pytest.raises(CorpusError, match="missing corpus file"):
        ingest(tmp_path / "nope.txt")
    (tmp_path / "empty.txt").write_bytes(b"")
    with pytest.raises(CorpusError, match="empty corpus"):
        ingest(tmp_path / "empty.txt")


def test_ingest_shard_directory_in_sorted_order(tmp_path):
    d = tmp_path / "shards"
    d.mkdir()
    (d / "b.txt").write_bytes(b"BBB")
    (d / "a.txt").write_bytes(b"AAA")
    assert ingest(d).data == b"AAABBB"


def test_pack_byte_drops_tail():
    ds = pack_bytes(bytes(100), byte_tokenizer(), 32)
    assert ds.sequences.shape == (3, 32)
    assert ds.bytes_total == 96
    assert ds.bytes_per_token == 1.0


def test_pack_too_short():
    with pytest.raises(CorpusError, match="shorter than one sequence"):
        pack_bytes(bytes(31), byte_tokenizer(), 32)


def test_normalize_seq_len():
    assert normalize_seq_len(8192, 4.5714) == 1792
    assert normalize_seq_len(8192, 3.74) == 2190
    assert normalize_seq_len(512, 1.0) == 512
    assert normalize_seq_len(10, 4.0) == 2  # 2.5 rounds half to even
    assert normalize_seq_len(1, 8.0) == 1
    for bad in ((0, 2.0), (8, 0.0), (8, 0.5)):
        with pytest.raises(ValueError):
            normalize_seq_len(*bad)


def test_bpe_pack_reconstructs_prefix_and_counts_bytes():
    text = words(2000)
    tok = train_bpe(text, 300)
    c = from_bytes(text, 0.25)
    ds = pack(c, tok, 16, "train")
    stream = unpack_bytes(ds, tok)
    assert c.train_bytes().startswith(stream)
    assert ds.bytes_total == len(stream)
    assert np.array_equal(ds.widths().sum(axis=1), ds.seq_bytes)
    assert ds.bytes_per_token > 1.0
    assert ds.sequences.max() < tok.vocab_size


def test_pack_deterministic_and_persisted(tmp_path):
    text = words(500, seed=1)
    tok = train_bpe(text, 270)
    c = from_bytes(text)
    a, b = pack(c, tok, 8), pack(c, tok, 8)
    assert np.array_equal(a.sequences, b.sequences)
    a.save(tmp_path / "p.npz")
    back = PackedDataset.load(tmp_path / "p.npz")
    assert np.array_equal(back.sequences, a.sequences)
    assert np.array_equal(back.widths(), a.widths())
    assert back.tokenizer_fingerprint == tok.fingerprint()
    m = manifest(c, tok, a, pack(c, tok, 8, "val"))
    assert m["seq_len"] == 8 and m["tokenizer_fingerprint"] == tok.fingerprint()
