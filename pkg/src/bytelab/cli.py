"""Command-line driver: every experiment step as a subcommand over an INI run config.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
Environment: BYTELAB_OUT_DIR overrides ``[run] out_dir``; BYTELAB_THREADS caps
torch threads.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import csv
import io
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import torch

from . import budget, corpus, corruption, metrics, scaling, tokenizers
from .model import SIZE_LADDER, ModelConfig, build_model, load_checkpoint, param_count
from .objectives import get_schedule, sample_ar, sample_reverse
from .trainer import NumericalError, TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "run": {"run_id": "default", "out_dir": "runs"},
    "corpus": {"path": "", "split_fraction": "0.1", "seed": "0"},
    "tokenizer": {"kind": "byte", "vocab_size": "4096", "train_bytes": "4000000", "path": ""},
    "model": {"size": "", "vocab_size": "0", "d_model": "64", "n_layers": "2", "n_heads": "4",
              "d_head": "16", "d_ff": "128", "seed": "0", "rope_base": "10000.0", "precision": "float32"},
    "objective": {"kind": "ar", "train_schedule": "linear", "eval_schedule": "cosine",
                  "eval_quadrature": "64", "span_masking": "false"},
    "trainer": {"batch_size": "32", "seq_len_bytes": "512", "seq_len": "0", "peak_lr": "3e-3",
                "min_lr": "2e-4", "warmup_fraction": "0.01", "total_steps": "1000",
                "weight_decay": "0.1", "grad_clip_norm": "1.0", "beta1": "0.9", "beta2": "0.95",
                "adam_eps": "1e-8", "seed": "0", "eval_interval": "100", "eval_sequences": "32"},
    "budget": {"flops": "0"},
    "corruption": {"strategy": "identity", "k": "8", "seed": "0", "compressor": "deflate"},
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- config ------------------------------------------------------------------------

def load_config(path: str | None, overrides: list[str] | None = None) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser(interpolation=None)
    cfg.read_dict(DEFAULTS)
    if path:
        if not Path(path).exists():
            raise UsageError(f"config file not found: {path}")
        with open(path) as fh:
            cfg.read_file(fh)
    for item in overrides or []:
        key, sep, value = item.partition("=")
        section, dot, option = key.partition(".")
        if not sep or not dot:
            raise UsageError(f"--set expects section.option=value, got {item!r}")
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section, option, value)
    unknown = [s for s in cfg.sections() if s not in DEFAULTS]
    if unknown:
        raise UsageError(f"unknown config sections: {unknown}")
    if env := os.environ.get("BYTELAB_OUT_DIR"):
        cfg.set("run", "out_dir", env)
    return cfg


def dump_config(cfg: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    cfg.write(buf)
    return buf.getvalue()


def _get(cfg, section, option, kind=str):
    raw = cfg.get(section, option)
    try:
        if kind is bool:
            return cfg.getboolean(section, option)
        return kind(raw)
    except ValueError:
        raise UsageError(f"[{section}] {option} = {raw!r} is not a valid {kind.__name__}") from None


def run_dir(cfg) -> Path:
    return Path(cfg.get("run", "out_dir")) / cfg.get("run", "run_id")


@contextlib.contextmanager
def locked(directory: Path):
    """Exclusive ownership of a run directory for the lifetime of one command."""
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"run directory {directory} is locked by another process ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield directory
    finally:
        lock.unlink(missing_ok=True)


def freeze_config(cfg, directory: Path, name: str = "config.frozen.ini") -> None:
    (directory / name).write_text(dump_config(cfg))


def objective_kind(cfg) -> str:
    kind = cfg.get("objective", "kind")
    if kind not in ("ar", "mdm"):
        raise UsageError(f"[objective] kind must be ar or mdm, got {kind!r}")
    return kind


def model_config(cfg, vocab_size: int | None = None, seq_len: int | None = None) -> ModelConfig:
    fields = {k: _get(cfg, "model", k, int) for k in ("d_model", "n_layers", "n_heads", "d_head", "d_ff", "seed")}
    size = cfg.get("model", "size")
    if size:
        if size not in SIZE_LADDER:
            raise UsageError(f"unknown model size {size!r}; have {sorted(SIZE_LADDER)}")
        fields.update(SIZE_LADDER[size])
    v = _get(cfg, "model", "vocab_size", int) or vocab_size
    if not v:
        raise UsageError("model vocab size unknown: set [model] vocab_size or provide a tokenizer")
    L = seq_len or _get(cfg, "trainer", "seq_len", int) or _get(cfg, "trainer", "seq_len_bytes", int)
    try:
        return ModelConfig(
            vocab_size=v, max_seq_len=L,
            attention_mode="causal" if objective_kind(cfg) == "ar" else "bidirectional",
            rope_base=_get(cfg, "model", "rope_base", float),
            precision=cfg.get("model", "precision"), **fields)
    except ValueError as exc:
        raise UsageError(f"invalid model config: {exc}") from None


def train_config(cfg, total_steps: int | None = None) -> TrainConfig:
    t = {k: cfg.get("trainer", k) for k in DEFAULTS["trainer"]}
    try:
        return TrainConfig(
            batch_size=int(t["batch_size"]), peak_lr=float(t["peak_lr"]), min_lr=float(t["min_lr"]),
            warmup_fraction=float(t["warmup_fraction"]),
            total_steps=total_steps or int(t["total_steps"]),
            weight_decay=float(t["weight_decay"]), grad_clip_norm=float(t["grad_clip_norm"]),
            beta1=float(t["beta1"]), beta2=float(t["beta2"]), adam_eps=float(t["adam_eps"]),
            seed=int(t["seed"]), objective=objective_kind(cfg),
            train_schedule=cfg.get("objective", "train_schedule"),
            eval_schedule=cfg.get("objective", "eval_schedule"),
            eval_interval=int(t["eval_interval"]), eval_sequences=int(t["eval_sequences"]),
            eval_quadrature=_get(cfg, "objective", "eval_quadrature", int))
    except ValueError as exc:
        raise UsageError(f"invalid trainer config: {exc}") from None


def _load_corpus(cfg) -> corpus.RawCorpus:
    path = cfg.get("corpus", "path")
    if not path:
        raise UsageError("[corpus] path is not set")
    return corpus.ingest(path, _get(cfg, "corpus", "split_fraction", float), _get(cfg, "corpus", "seed", int))


def _load_tokenizer(cfg, directory: Path) -> tokenizers.Tokenizer:
    if cfg.get("tokenizer", "kind") == "byte":
        return tokenizers.byte_tokenizer()
    path = Path(cfg.get("tokenizer", "path") or directory / "tokenizer.txt")
    if not path.exists():
        raise DataError(f"missing tokenizer file {path}; run tokenize-train first")
    return tokenizers.Tokenizer.load(path)


def _seq_len(cfg, tok, train_bytes: bytes) -> int:
    fixed = _get(cfg, "trainer", "seq_len", int)
    if fixed:
        return fixed
    l_byte = _get(cfg, "trainer", "seq_len_bytes", int)
    if tok.kind == "byte":
        return l_byte
    sample = train_bytes[:1_000_000]
    bpt = len(sample) / max(1, len(tokenizers.encode(tok, sample)))
    return corpus.normalize_seq_len(l_byte, bpt)


def _emit_csv(rows, header, path: Path | None = None, stream=None) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if path is not None:
        path.write_text(buf.getvalue())
    if stream is not None:
        stream.write(buf.getvalue())


# -- subcommands ---------------------------------------------------------------------

def cmd_tokenize_train(args, cfg):
    with locked(run_dir(cfg)) as d:
        kind = cfg.get("tokenizer", "kind")
        if kind == "byte":
            tok = tokenizers.byte_tokenizer()
        else:
            raw = _load_corpus(cfg)
            tok = tokenizers.train_bpe(raw.train_bytes()[: _get(cfg, "tokenizer", "train_bytes", int)],
                                       _get(cfg, "tokenizer", "vocab_size", int))
        tok.save(d / "tokenizer.txt")
        freeze_config(cfg, d)
        print(f"tokenizer {tok.kind} V={tok.vocab_size} fingerprint={tok.fingerprint()} -> {d / 'tokenizer.txt'}")


def cmd_pack(args, cfg):
    with locked(run_dir(cfg)) as d:
        raw = _load_corpus(cfg)
        tok = _load_tokenizer(cfg, d)
        L = _seq_len(cfg, tok, raw.train_bytes())
        tr = corpus.pack(raw, tok, L, "train")
        va = corpus.pack(raw, tok, L, "val")
        tr.save(d / "train.npz")
        va.save(d / "val.npz")
        man = corpus.manifest(raw, tok, tr, va)
        (d / "manifest.json").write_text(json.dumps(man, indent=2) + "\n")
        freeze_config(cfg, d)
        print(f"packed L={L}: {len(tr)} train / {len(va)} val sequences, "
              f"{tr.bytes_per_token:.4f} bytes/token -> {d}")


def _packed(d: Path, split: str) -> corpus.PackedDataset:
    path = d / f"{split}.npz"
    if not path.exists():
        raise DataError(f"missing packed data {path}; run pack first")
    return corpus.PackedDataset.load(path)


def cmd_train(args, cfg):
    with locked(run_dir(cfg)) as d:
        tr, va = _packed(d, "train"), _packed(d, "val")
        mcfg = model_config(cfg, tr.vocab_size, tr.seq_len)
        if mcfg.vocab_size != tr.vocab_size:
            raise UsageError(f"model vocab {mcfg.vocab_size} does not match packed data vocab {tr.vocab_size}")
        steps = None
        flops = _get(cfg, "budget", "flops", float)
        if flops > 0:
            try:
                plan = budget.plan_budget(flops, mcfg, tr.seq_len, _get(cfg, "trainer", "batch_size", int))
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            steps = plan.steps
            (d / "budget.json").write_text(json.dumps(plan.as_dict(), indent=2) + "\n")
        tcfg = train_config(cfg, steps)
        partitions = None
        if objective_kind(cfg) == "mdm" and _get(cfg, "objective", "span_masking", bool):
            partitions = _span_partitions(cfg, d, tr)
        perm = None
        strategy = cfg.get("corruption", "strategy")
        if strategy != "identity":
            perm = corruption.make_permutation(strategy, tr.seq_len, _get(cfg, "corruption", "k", int),
                                               _get(cfg, "corruption", "seed", int))
        model = build_model(mcfg)
        result = train(model, tr, tcfg, val_dataset=va, log_path=d / "metrics.csv",
                       checkpoint_dir=d / "checkpoint", permutation=perm, partitions=partitions,
                       progress=None if args.quiet else _progress)
        freeze_config(cfg, d)
        print(f"trained {tcfg.total_steps} steps; final val BPB {result.final_val_bpb:.6f} -> {d}")


def _progress(row):
    if row["val_bpb"] is not None:
        print(f"step {row['step']:>6}  loss {row['train_loss_nats']:.4f}  val_bpb {row['val_bpb']:.4f}",
              file=sys.stderr, flush=True)


def _span_partitions(cfg, d: Path, ds: corpus.PackedDataset):
    """Blocks from a BPE tokenizer laid over each byte-level row."""
    from .objectives import SpanPartition

    if ds.representation != "byte":
        raise UsageError("span masking couples BPE blocks onto byte-level data")
    path = Path(cfg.get("tokenizer", "path") or d / "span_tokenizer.txt")
    if not path.exists():
        raise DataError(f"span masking needs a BPE tokenizer file at {path}")
    tok = tokenizers.Tokenizer.load(path)
    cache = {}

    def partitions(rows):
        out = []
        for r in rows.tolist():
            if r not in cache:
                _, spans = tokenizers.encode_with_spans(tok, ds.sequences[r].astype(np.uint8).tobytes())
                cache[r] = SpanPartition.from_spans(spans, length=ds.seq_len)
            out.append(cache[r])
        return out

    return partitions


def _checkpoint(path: str) -> tuple:
    p = Path(path)
    if not (p / "manifest.json").exists():
        raise DataError(f"missing checkpoint at {p}")
    return load_checkpoint(p)


def cmd_eval_bpb(args, cfg):
    model, meta, _ = _checkpoint(args.checkpoint)
    data = corpus.PackedDataset.load(args.data) if args.data else _packed(run_dir(cfg), "val")
    if args.zero_head:
        with torch.no_grad():
            model.head.zero_()
    objective = "ar" if model.attention_mode == "causal" else "mdm"
    if data.vocab_size != model.config.vocab_size:
        raise UsageError(f"data vocab {data.vocab_size} does not match model vocab {model.config.vocab_size}")
    report = metrics.bpb(model, data, objective=objective, schedule=get_schedule(cfg.get("objective", "eval_schedule")),
                         n_points=_get(cfg, "objective", "eval_quadrature", int), seed=args.seed)
    out = report.as_dict()
    print(json.dumps(out, indent=2))
    if args.output:
        Path(args.output).write_text(json.dumps(out, indent=2) + "\n")


def cmd_sample(args, cfg):
    model, meta, _ = _checkpoint(args.checkpoint)
    tok = tokenizers.Tokenizer.load(args.tokenizer) if args.tokenizer else tokenizers.byte_tokenizer()
    if tok.vocab_size != model.config.vocab_size:
        raise UsageError("tokenizer and model vocabularies differ")
    prompt = tokenizers.encode(tok, args.prompt.encode()).tolist() if args.prompt else []
    rng = torch.Generator().manual_seed(args.seed)
    length = args.length or model.config.max_seq_len
    if model.attention_mode == "causal":
        x = sample_ar(model, length, rng, prompt or [tokenizers.encode(tok, b" ")[0]], args.num)
    else:
        x = sample_reverse(model, length, args.steps, get_schedule(cfg.get("objective", "eval_schedule")),
                           rng, prompt, args.num)
    texts = [tokenizers.decode(tok, row.tolist()) for row in x]
    blob = b"\n----\n".join(texts)
    if args.output:
        Path(args.output).write_bytes(blob)
    sys.stdout.write(blob.decode("utf-8", errors="replace") + "\n")


def _text_and_labels(args):
    if not Path(args.text).exists():
        raise DataError(f"missing text file {args.text}")
    text = Path(args.text).read_bytes()[: args.max_bytes]
    labels = None
    if args.tokenizer:
        tok = tokenizers.Tokenizer.load(args.tokenizer)
        _, spans = tokenizers.encode_with_spans(tok, text)
        labels = tokenizers.boundary_labels(spans, text)
    return text, labels


def cmd_entropy_map(args, cfg):
    model, _, _ = _checkpoint(args.checkpoint)
    text, labels = _text_and_labels(args)
    ent = metrics.entropy_map(model, text)
    metrics.write_entropy_csv(args.output, text, ent, labels)
    print(f"mean entropy {np.nanmean(ent):.4f} nats over {len(text)} bytes -> {args.output}")


def cmd_boundary_auc(args, cfg):
    if not args.tokenizer:
        raise UsageError("boundary-auc needs --tokenizer for boundary labels")
    model, _, _ = _checkpoint(args.checkpoint)
    text, labels = _text_and_labels(args)
    rep = metrics.boundary_auc(metrics.entropy_map(model, text), labels)
    out = {"roc_auc": rep.roc_auc, "n_pos": rep.n_pos, "n_neg": rep.n_neg, "bytes": len(text)}
    print(json.dumps(out, indent=2))
    if args.output:
        Path(args.output).write_text(json.dumps(out, indent=2) + "\n")


def cmd_flops(args, cfg):
    mcfg = model_config(cfg)
    L = args.seq_len or mcfg.max_seq_len
    br = budget.flops_forward(mcfg, L)
    rows = br.to_rows()
    width = max(len(r[0]) for r in rows)
    print(f"FLOPs per sequence (L={L}, layers={mcfg.n_layers}, V={mcfg.vocab_size})")
    for term, per, total in rows:
        print(f"  {term:<{width}}  {per:>16,d}  {total:>16,d}")
    print()
    _emit_csv(rows, ["term", "per_layer_or_once", "total"], stream=sys.stdout,
              path=Path(args.csv) if args.csv else None)


def cmd_plan_budget(args, cfg):
    mcfg = model_config(cfg)
    L = args.seq_len or mcfg.max_seq_len
    B = args.batch_size or _get(cfg, "trainer", "batch_size", int)
    F = args.flops or _get(cfg, "budget", "flops", float)
    try:
        plan = budget.plan_budget(F, mcfg, L, B)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    non_emb, total = param_count(mcfg)
    out = plan.as_dict() | {"non_embedding_params": non_emb, "total_params": total}
    print(json.dumps(out, indent=2))


def synthetic_scaling_csv() -> Path:
    return Path(str(resources.files("bytelab") / "data" / "synthetic_scaling.csv"))


def cmd_fit_scaling(args, cfg):
    src = Path(args.input) if args.input else synthetic_scaling_csv()
    if not src.exists():
        raise DataError(f"missing scaling CSV {src}")
    points = scaling.read_points(src)
    report = scaling.fit_points(points, space=args.space)
    text = "\n".join(report.lines()) + "\n"
    sys.stdout.write(text)
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "scaling_report.txt").write_text(text)
        scaling.write_curves(out / "scaling_curves.csv", report)


def cmd_corrupt(args, cfg):
    src = Path(args.input)
    if not src.exists():
        raise DataError(f"missing input {src}")
    raw = src.read_bytes()
    strategy = args.strategy or cfg.get("corruption", "strategy")
    k = args.k or _get(cfg, "corruption", "k", int)
    seed = args.seed if args.seed is not None else _get(cfg, "corruption", "seed", int)
    compressor = args.compressor or cfg.get("corruption", "compressor")
    if strategy == "global_bpe":
        if not args.tokenizer:
            raise UsageError("global_bpe needs --tokenizer")
        tok = tokenizers.Tokenizer.load(args.tokenizer)
        L = args.L or corpus.normalize_seq_len(8192, len(raw) / max(1, len(tokenizers.encode(tok, raw))))
        spec = corruption.make_permutation(strategy, L, k, seed)
        ids = tokenizers.encode(tok, raw)
        n = len(ids) // L
        permuted = tokenizers.decode(tok, np.concatenate([ids[: n * L].reshape(n, L)[:, spec.pi].reshape(-1), ids[n * L :]]))
        report = corruption.regularity_loss(raw, spec, compressor, tokenizer=tok)
    else:
        L = args.L or 8192
        spec = corruption.make_permutation(strategy, L, k, seed)
        permuted = corruption.permute_bytes(raw, spec)
        report = corruption.regularity_loss(raw, spec, compressor)
    Path(args.output).write_bytes(permuted)
    row = report.row()
    _emit_csv([[row[f] for f in corruption.REPORT_FIELDS]], corruption.REPORT_FIELDS, stream=sys.stdout,
              path=Path(args.report) if args.report else None)


def cmd_regularity(args, cfg):
    src = Path(args.input)
    if not src.exists():
        raise DataError(f"missing input {src}")
    raw = src.read_bytes()
    tok = tokenizers.Tokenizer.load(args.tokenizer) if args.tokenizer else None
    rows = []
    for item in args.strategies.split(","):
        strategy, _, k = item.partition(":")
        k = int(k or 1)
        if strategy == "global_bpe":
            if tok is None:
                raise UsageError("global_bpe needs --tokenizer")
            L = corpus.normalize_seq_len(args.L, len(raw) / len(tokenizers.encode(tok, raw)))
        else:
            L = args.L
        for compressor in args.compressors.split(","):
            for seed in range(args.seeds):
                rep = corruption.regularity_loss(raw, corruption.make_permutation(strategy, L, k, seed),
                                                 compressor, tokenizer=tok)
                r = rep.row()
                rows.append([r[f] for f in corruption.REPORT_FIELDS])
    _emit_csv(rows, corruption.REPORT_FIELDS, stream=sys.stdout,
              path=Path(args.output) if args.output else None)


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bytelab", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="INI run config (sections: " + ", ".join(DEFAULTS) + ")")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.OPTION=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    sub.add_parser("tokenize-train", help="train the configured tokenizer on the corpus train split")
    sub.add_parser("pack", help="tokenize and pack train/val splits into fixed-length rows")
    s = sub.add_parser("train", help="train a model on the packed data of the run directory")
    s.add_argument("--quiet", action="store_true", help="no progress lines on stderr")

    s = sub.add_parser("eval-bpb", help="bits per byte of a checkpoint on packed data")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", help="packed .npz (default: run directory val.npz)")
    s.add_argument("--zero-head", action="store_true", help="zero the output head (uniform predictor)")
    s.add_argument("--seed", type=int, default=0, help="mask RNG seed for MDM quadrature")
    s.add_argument("--output", help="write the report as JSON here")

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--tokenizer", help="tokenizer file (default: byte)")
    s.add_argument("--prompt", default="")
    s.add_argument("--length", type=int, default=0)
    s.add_argument("--steps", type=int, default=64, help="reverse steps for MDM sampling")
    s.add_argument("--num", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output")

    for name, hlp in (("entropy-map", "per-byte predictive entropy CSV"),
                      ("boundary-auc", "ROC AUC of entropy against BPE token starts")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--text", required=True, help="raw text file")
        s.add_argument("--tokenizer", help="BPE tokenizer file for boundary labels")
        s.add_argument("--max-bytes", type=int, default=100_000)
        s.add_argument("--output", required=name == "entropy-map")

    s = sub.add_parser("flops", help="FLOPs breakdown of the configured model")
    s.add_argument("--seq-len", type=int, default=0)
    s.add_argument("--csv", help="also write the CSV table here")

    s = sub.add_parser("plan-budget", help="steps and data budget for a FLOPs budget")
    s.add_argument("--flops", type=float, default=0)
    s.add_argument("--seq-len", type=int, default=0)
    s.add_argument("--batch-size", type=int, default=0)

    s = sub.add_parser("fit-scaling", help="isoFLOPs and power-law fits from a run CSV")
    s.add_argument("--input", help="CSV objective,representation,F,N,bpb (default: shipped synthetic set)")
    s.add_argument("--space", choices=("linear", "log"), default="linear")
    s.add_argument("--output-dir")

    s = sub.add_parser("corrupt", help="permute a file and report its compressibility loss")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--strategy", choices=corruption.STRATEGIES)
    s.add_argument("--k", type=int, default=0)
    s.add_argument("--L", type=int, default=0, help="window length (bytes, or tokens for global_bpe)")
    s.add_argument("--seed", type=int)
    s.add_argument("--compressor")
    s.add_argument("--tokenizer")
    s.add_argument("--report", help="write the report CSV here")

    s = sub.add_parser("regularity", help="compressibility loss table over strategies, compressors and seeds")
    s.add_argument("--input", required=True)
    s.add_argument("--strategies", default="global,intra_block:8,inter_block:4,inter_block:8",
                   help="comma list of strategy[:k]")
    s.add_argument("--compressors", default="deflate")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--L", type=int, default=8192, help="window length in bytes")
    s.add_argument("--tokenizer", help="needed for global_bpe")
    s.add_argument("--output")
    return p


COMMANDS = {
    "tokenize-train": cmd_tokenize_train, "pack": cmd_pack, "train": cmd_train,
    "eval-bpb": cmd_eval_bpb, "sample": cmd_sample, "entropy-map": cmd_entropy_map,
    "boundary-auc": cmd_boundary_auc, "flops": cmd_flops, "plan-budget": cmd_plan_budget,
    "fit-scaling": cmd_fit_scaling, "corrupt": cmd_corrupt, "regularity": cmd_regularity,
}


def main(argv: list[str] | None = None) -> int:
    if threads := os.environ.get("BYTELAB_THREADS"):
        torch.set_num_threads(max(1, int(threads)))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, args.set)
        if args.print_config:
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        if not args.command:
            parser.print_help()
            return EXIT_USAGE
        COMMANDS[args.command](args, cfg)
        return EXIT_OK
    except (UsageError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, corpus.CorpusError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
