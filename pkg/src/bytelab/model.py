"""Pre-norm transformer with SwiGLU MLPs and rotary positions.

One backbone serves both objectives. ``attention_mode="causal"`` gives the
autoregressive model; ``"bidirectional"`` gives the masked-diffusion denoiser,
which also gets one extra input embedding row for the mask symbol (id ``V``).
The output head always predicts over the ``V`` real tokens.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import numcore as nc

ATTENTION_MODES = ("causal", "bidirectional")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_head: int = 16
    d_ff: int = 128
    max_seq_len: int = 256
    attention_mode: str = "causal"
    seed: int = 0
    rope_base: float = 10000.0
    precision: str = "float32"

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_heads", "d_head", "d_ff", "max_seq_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.n_heads * self.d_head != self.d_model:
            raise ValueError(
                f"n_heads * d_head ({self.n_heads}*{self.d_head}) must equal d_model ({self.d_model})"
            )
        if self.d_head % 2:
            raise ValueError("d_head must be even for rotary embeddings")
        if self.attention_mode not in ATTENTION_MODES:
            raise ValueError(f"attention_mode must be one of {ATTENTION_MODES}")
        nc.resolve_dtype(self.precision)

    @property
    def has_mask_token(self) -> bool:
        return self.attention_mode == "bidirectional"

    @property
    def vocab_in(self) -> int:
        return self.vocab_size + (1 if self.has_mask_token else 0)

    @property
    def vocab_out(self) -> int:
        return self.vocab_size

    @property
    def mask_id(self) -> int | None:
        return self.vocab_size if self.has_mask_token else None

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# Desk-scale size ladder; the name is the approximate non-embedding parameter count.
SIZE_LADDER = {
    "tiny": dict(d_model=64, n_layers=2, n_heads=4, d_head=16, d_ff=128),
    "0.5M": dict(d_model=128, n_layers=3, n_heads=4, d_head=32, d_ff=256),
    "2M": dict(d_model=192, n_layers=5, n_heads=6, d_head=32, d_ff=448),
    "8M": dict(d_model=320, n_layers=6, n_heads=10, d_head=32, d_ff=896),
}


def param_count(config: ModelConfig) -> tuple[int, int]:
    """``(non_embedding, total)``; the input embedding and output head are the embedding params."""
    d, inner, ff = config.d_model, config.n_heads * config.d_head, config.d_ff
    per_layer = (
        d                      # attention norm gain
        + 3 * d * inner        # fused q, k, v
        + inner * d            # output projection
        + d                    # mlp norm gain
        + 2 * d * ff           # gate and up
        + ff * d               # down
    )
    non_embedding = config.n_layers * per_layer + d  # + final norm gain
    total = non_embedding + config.vocab_in * d + d * config.vocab_out
    return non_embedding, total


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig, dtype: torch.dtype):
        super().__init__()
        d, inner = cfg.d_model, cfg.n_heads * cfg.d_head
        self.attn_norm = nn.Parameter(torch.ones(d, dtype=dtype))
        self.wqkv = nn.Parameter(torch.empty(d, 3 * inner, dtype=dtype))
        self.wo = nn.Parameter(torch.empty(inner, d, dtype=dtype))
        self.mlp_norm = nn.Parameter(torch.ones(d, dtype=dtype))
        self.w_gate_up = nn.Parameter(torch.empty(d, 2 * cfg.d_ff, dtype=dtype))
        self.w_down = nn.Parameter(torch.empty(cfg.d_ff, d, dtype=dtype))
        self.n_heads, self.d_head, self.d_ff = cfg.n_heads, cfg.d_head, cfg.d_ff
        self.causal = cfg.attention_mode == "causal"

    def forward(self, x, cos, sin):
        B, L, _ = x.shape
        H, Dh = self.n_heads, self.d_head
        h = nc.rms_norm(x, self.attn_norm)
        qkv = nc.matmul(h, self.wqkv, tag="qkv").view(B, L, 3, H, Dh)
        q, k, v = (qkv[:, :, i].transpose(1, 2) for i in range(3))  # (B, H, L, Dh)
        q = nc.apply_rope(q, cos, sin)
        k = nc.apply_rope(k, cos, sin)
        o = nc.attention(q, k, v, self.causal).transpose(1, 2).reshape(B, L, H * Dh)
        x = x + nc.matmul(o, self.wo, tag="out_proj")
        h = nc.rms_norm(x, self.mlp_norm)
        gate, up = nc.matmul(h, self.w_gate_up, tag="mlp_up_gate").split(self.d_ff, dim=-1)
        return x + nc.matmul(nc.silu(gate) * up, self.w_down, tag="mlp_down")


class Transformer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        dtype = nc.resolve_dtype(config.precision)
        self.dtype = dtype
        self.tok_emb = nn.Parameter(torch.empty(config.vocab_in, config.d_model, dtype=dtype))
        self.blocks = nn.ModuleList(Block(config, dtype) for _ in range(config.n_layers))
        self.final_norm = nn.Parameter(torch.ones(config.d_model, dtype=dtype))
        self.head = nn.Parameter(torch.empty(config.d_model, config.vocab_out, dtype=dtype))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        g = torch.Generator().manual_seed(self.config.seed)
        resid_std = 0.02 / math.sqrt(2 * max(self.config.n_layers, 1))
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("_norm"):
                    p.fill_(1.0)
                elif name.endswith(("wo", "w_down")):
                    p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float64) * resid_std)
                else:
                    p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float64) * 0.02)

    @property
    def attention_mode(self) -> str:
        return self.config.attention_mode

    def forward(self, tokens: torch.Tensor, position_ids: torch.Tensor | None = None) -> torch.Tensor:
        """Logits ``(B, L, V)`` for token ids ``(B, L)`` (a 1-D input is treated as B=1)."""
        squeeze = tokens.dim() == 1
        if squeeze:
            tokens = tokens.unsqueeze(0)
        B, L = tokens.shape
        if L > self.config.max_seq_len:
            raise ValueError(f"sequence length {L} exceeds max_seq_len {self.config.max_seq_len}")
        if position_ids is None:
            position_ids = torch.arange(L).expand(B, L)
        elif position_ids.dim() == 1:
            position_ids = position_ids.expand(B, L)
        if position_ids.shape != tokens.shape:
            raise ValueError("position_ids must match tokens in shape")
        cos, sin = nc.rope_tables(position_ids, self.config.d_head, self.config.rope_base, self.dtype)
        cos, sin = cos.unsqueeze(1), sin.unsqueeze(1)  # broadcast over heads

        x = nc.embedding(tokens, self.tok_emb)
        for block in self.blocks:
            x = block(x, cos, sin)
        x = nc.rms_norm(x, self.final_norm)
        logits = nc.matmul(x, self.head, tag="lm_head")
        return logits[0] if squeeze else logits


def build_model(config: ModelConfig) -> Transformer:
    return Transformer(config)


# -- checkpoints ----------------------------------------------------------------
#
# <dir>/manifest.json : config, step, tensor table (name, shape, dtype, offset)
# <dir>/tensors.bin   : little-endian raw tensors, concatenated in table order

_NP_DTYPES = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8"}


def _atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str | os.PathLike, model: Transformer, step: int = 0,
                    extra_tensors: dict[str, torch.Tensor] | None = None,
                    extra_meta: dict | None = None) -> None:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    tensors = dict(model.state_dict())
    for name, t in (extra_tensors or {}).items():
        tensors[f"extra.{name}"] = t
    table, chunks, offset = [], [], 0
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        raw = t.numpy().astype(_NP_DTYPES[t.dtype]).tobytes()
        table.append({"name": name, "shape": list(t.shape), "dtype": _NP_DTYPES[t.dtype],
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    meta = {"format": "bytelab-checkpoint v1", "config": asdict(model.config), "step": step,
            "tensors": table, **(extra_meta or {})}
    _atomic_write(out / "tensors.bin", b"".join(chunks))
    _atomic_write(out / "manifest.json", json.dumps(meta, indent=2).encode())


def load_checkpoint(path: str | os.PathLike) -> tuple[Transformer, dict, dict[str, torch.Tensor]]:
    """Returns ``(model, manifest, extra_tensors)``."""
    src = Path(path)
    meta = json.loads((src / "manifest.json").read_text())
    if meta.get("format") != "bytelab-checkpoint v1":
        raise ValueError(f"{src} is not a bytelab checkpoint")
    blob = (src / "tensors.bin").read_bytes()
    model = Transformer(ModelConfig.from_dict(meta["config"]))
    state, extras = {}, {}
    for entry in meta["tensors"]:
        arr = np.frombuffer(blob, dtype=entry["dtype"], count=math.prod(entry["shape"]) if entry["shape"] else 1,
                            offset=entry["offset"]).reshape(entry["shape"])
        t = torch.from_numpy(arr.copy())
        if entry["name"].startswith("extra."):
            extras[entry["name"][len("extra."):]] = t
        else:
            state[entry["name"]] = t
    model.load_state_dict(state)
    return model, meta, extras
