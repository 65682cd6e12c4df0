"""Decoder-only transformer (student and teacher are the same architecture at
different sizes), LoRA adapters, sampling, parameter accounting, and the
checkpoint container.

Conventions: pre-norm blocks, GELU MLP, learned positional table, output head
tied to the token embedding, bias-free linear projections (the only biases
live in the layer norms). float32 parameters by default; pass
dtype=torch.float64 for gradient-check ("64-bit") mode.
"""

from __future__ import annotations

import copy
import json
import math
import os
import struct
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import (
    ConfigError,
    EmptyMaskError,
    FormatError,
    IntegrityError,
    LengthError,
    PromptError,
)

CHECKPOINT_MAGIC = b"SGPT"
CHECKPOINT_VERSION = 1

LORA_TARGETS = ("wq", "wk", "wv", "wo")

# Amplitude of the fixed sinusoidal codes used for ordinal token blocks
# (property bins). Larger than the 0.02 init std so the code geometry
# survives full-parameter distillation and stays readable by a frozen head.
ORDINAL_CODE_SCALE = 0.12


@dataclass(frozen=True)
class ModelConfig:
    n_embd: int
    n_layer: int
    n_heads: int
    hidden_dim: int
    vocab_size: int
    context_len: int
    dropout: float = 0.0

    def __post_init__(self):
        if self.n_embd % self.n_heads != 0:
            raise ConfigError(
                f"n_embd={self.n_embd} not divisible by n_heads={self.n_heads}"
            )
        if min(self.n_embd, self.n_layer, self.n_heads, self.hidden_dim,
               self.vocab_size, self.context_len) < 1:
            raise ConfigError("all model dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0,1), got {self.dropout}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# Architecture presets; vocab_size 125 is the package vocabulary.
PRESETS = {
    "paper-student": ModelConfig(512, 6, 8, 2048, 125, 512, 0.0),
    "paper-teacher": ModelConfig(1280, 36, 20, 5120, 125, 512, 0.0),
    "desk-tiny": ModelConfig(16, 2, 2, 64, 125, 64, 0.0),
}


def count_params(config: ModelConfig) -> int:
    """Analytic parameter count for the architecture above (tied head)."""
    d, L, h = config.n_embd, config.n_layer, config.hidden_dim
    per_layer = 4 * d * d + 2 * d * h + 4 * d
    return (config.vocab_size * d + config.context_len * d
            + L * per_layer + 2 * d)


class SelfAttention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.n_embd
        self.n_heads = config.n_heads
        self.head_dim = d // config.n_heads
        self.wq = nn.Linear(d, d, bias=False)
        self.wk = nn.Linear(d, d, bias=False)
        self.wv = nn.Linear(d, d, bias=False)
        self.wo = nn.Linear(d, d, bias=False)
        self.attn_drop = nn.Dropout(config.dropout)
        self.resid_drop = nn.Dropout(config.dropout)
        self.record_attn = False
        self.last_attn = None

    def _proj(self, name, x, adapter, layer_idx):
        y = getattr(self, name)(x)
        if adapter is not None:
            y = y + adapter.delta(layer_idx, name, x, self.training)
        return y

    def forward(self, x, adapter=None, layer_idx=0):
        B, T, d = x.shape
        q = self._proj("wq", x, adapter, layer_idx)
        k = self._proj("wk", x, adapter, layer_idx)
        v = self._proj("wv", x, adapter, layer_idx)
        q = q.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        att = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        causal = torch.triu(
            torch.full((T, T), float("-inf"), dtype=x.dtype, device=x.device), 1
        )
        att = torch.softmax(att + causal, dim=-1)
        if self.record_attn:
            self.last_attn = att.detach()
        att = self.attn_drop(att)
        y = (att @ v).transpose(1, 2).reshape(B, T, d)
        y = self._proj("wo", y, adapter, layer_idx)
        return self.resid_drop(y)


class Block(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.n_embd
        self.ln1 = nn.LayerNorm(d)
        self.attn = SelfAttention(config)
        self.ln2 = nn.LayerNorm(d)
        self.w1 = nn.Linear(d, config.hidden_dim, bias=False)
        self.w2 = nn.Linear(config.hidden_dim, d, bias=False)
        self.mlp_drop = nn.Dropout(config.dropout)

    def forward(self, x, adapter=None, layer_idx=0):
        x = x + self.attn(self.ln1(x), adapter, layer_idx)
        x = x + self.mlp_drop(self.w2(F.gelu(self.w1(self.ln2(x)))))
        return x


class GPT(nn.Module):
    """The decoder-only language model; also the `Parameters` container."""

    def __init__(self, config: ModelConfig, seed: int | None = None,
                 dtype: torch.dtype = torch.float32,
                 ordinal_token_range: tuple[int, int] | None = None):
        super().__init__()
        self.config = config
        self.wte = nn.Embedding(config.vocab_size, config.n_embd)
        self.wpe = nn.Embedding(config.context_len, config.n_embd)
        self.drop = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_layer))
        self.ln_f = nn.LayerNorm(config.n_embd)
        if seed is not None:
            self._init_weights(seed, ordinal_token_range)
        if dtype is not torch.float32:
            self.to(dtype)

    def _init_weights(self, seed: int, ordinal_token_range=None):
        g = torch.Generator().manual_seed(seed)
        std = 0.02
        resid_std = std / math.sqrt(2 * self.config.n_layer)
        self.wte.weight.data.normal_(0.0, std, generator=g)
        self.wpe.weight.data.normal_(0.0, std, generator=g)
        for block in self.blocks:
            for lin in (block.attn.wq, block.attn.wk, block.attn.wv, block.w1):
                lin.weight.data.normal_(0.0, std, generator=g)
            for lin in (block.attn.wo, block.w2):
                lin.weight.data.normal_(0.0, resid_std, generator=g)
        if ordinal_token_range is not None:
            lo, hi = ordinal_token_range
            self.wte.weight.data[lo:hi + 1] = _ordinal_codes(
                hi - lo + 1, self.config.n_embd, scale=ORDINAL_CODE_SCALE
            )

    def forward(self, ids, adapter=None):
        """Token ids [T] or [B, T] -> logits [T, V] or [B, T, V]."""
        squeeze = ids.dim() == 1
        if squeeze:
            ids = ids.unsqueeze(0)
        B, T = ids.shape
        if T > self.config.context_len:
            raise LengthError(
                f"input length {T} exceeds context_len {self.config.context_len}"
            )
        if T < 1:
            raise LengthError("input must contain at least one token")
        pos = torch.arange(T, device=ids.device)
        emb_w = self.wte.weight
        if adapter is not None:
            emb_w = adapter.effective_embedding(emb_w)
        x = self.drop(F.embedding(ids, emb_w) + self.wpe(pos))
        for li, block in enumerate(self.blocks):
            x = block(x, adapter, li)
        x = self.ln_f(x)
        logits = F.linear(x, emb_w)
        return logits.squeeze(0) if squeeze else logits

    def parameter_count_enumerated(self) -> int:
        return sum(p.numel() for p in self.parameters())


def _ordinal_codes(n: int, d: int, scale: float) -> torch.Tensor:
    """Fixed sinusoidal codes for an ordinal token block (e.g. property bins).

    Nearby indices get nearby codes, so a frozen tied embedding can both read
    and emit bins with ordinal smoothness. The codes occupy only the trailing
    quarter of the channels: the block spans a low-dimensional subspace that
    ordinary token traffic can stay orthogonal to.
    """
    n_freq = max(2, d // 8)
    k = torch.arange(n, dtype=torch.float32).unsqueeze(1)
    j = torch.arange(n_freq, dtype=torch.float32)
    w_low, w_high = math.pi / max(n, 2), math.pi / 2
    omega = w_low * (w_high / w_low) ** (j / max(n_freq - 1, 1))
    codes = torch.zeros(n, d)
    start = d - 2 * n_freq
    codes[:, start::2] = torch.sin(k * omega)
    codes[:, start + 1::2] = torch.cos(k * omega)
    return codes * scale


def init_model(config: ModelConfig, seed: int,
               dtype: torch.dtype = torch.float32,
               ordinal_token_range: tuple[int, int] | None = None) -> GPT:
    """Deterministically initialized model (same seed -> identical weights)."""
    return GPT(config, seed=seed, dtype=dtype,
               ordinal_token_range=ordinal_token_range)


def clm_loss(logits, targets, loss_mask):
    """Mean next-token cross-entropy over masked target positions.

    `loss_mask[t] == 1` marks token t as a prediction target; logits at t-1
    are scored against targets[t]. Accepts [T, V]/[T] or batched [B, T, V].
    Returns a float64 scalar (64-bit reduction).
    """
    if logits.dim() == 2:
        logits, targets, loss_mask = (x.unsqueeze(0) for x in (logits, targets, loss_mask))
    if logits.shape[:2] != targets.shape or targets.shape != loss_mask.shape:
        raise LengthError("logits/targets/mask shapes disagree")
    pred = logits[:, :-1]
    tgt = targets[:, 1:]
    mask = loss_mask[:, 1:].to(torch.bool)
    if int(mask.sum()) == 0:
        raise EmptyMaskError("loss mask has no active positions")
    logp = F.log_softmax(pred, dim=-1)
    nll = -logp.gather(-1, tgt.unsqueeze(-1)).squeeze(-1)
    return nll[mask].to(torch.float64).mean()


@dataclass(frozen=True)
class LoraConfig:
    """Adapter shape: low-rank deltas on the attention projections, plus an
    optional block of zero-init embedding-row deltas (`embed_rows`, an
    inclusive token-id range) for tokens introduced after pretraining, e.g.
    the task/separator/property-bin tokens adapted during Level 2."""

    r: int = 16
    alpha: float = 32.0
    dropout: float = 0.1
    targets: tuple[str, ...] = LORA_TARGETS
    embed_rows: tuple[int, int] | None = None

    def __post_init__(self):
        if self.r < 1:
            raise ConfigError(f"LoRA rank must be >= 1, got {self.r}")
        unknown = [t for t in self.targets if t not in LORA_TARGETS]
        if unknown:
            raise ConfigError(f"unknown LoRA targets {unknown}; valid: {LORA_TARGETS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("LoRA dropout must be in [0,1)")
        if self.embed_rows is not None and self.embed_rows[0] > self.embed_rows[1]:
            raise ConfigError(f"bad embed_rows range {self.embed_rows}")

    @property
    def scale(self) -> float:
        return self.alpha / self.r

    def to_dict(self) -> dict:
        d = asdict(self)
        d["targets"] = list(self.targets)
        if self.embed_rows is not None:
            d["embed_rows"] = list(self.embed_rows)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LoraConfig":
        d = dict(d)
        d["targets"] = tuple(d["targets"])
        if d.get("embed_rows") is not None:
            d["embed_rows"] = tuple(d["embed_rows"])
        return cls(**d)


class LoraAdapter(nn.Module):
    """Low-rank deltas for the attention projections of every layer.

    Effective update per target: (alpha/r) * (x @ A) @ B with B zero-init,
    so a fresh adapter leaves the model output unchanged. When the config
    names `embed_rows`, the adapter also carries zero-init additive deltas
    for those token embedding rows (tied head included).
    """

    def __init__(self, config: LoraConfig, model_config: ModelConfig,
                 seed: int | None = None, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        self.model_config = model_config
        d = model_config.n_embd
        self.params = nn.ParameterDict()
        g = torch.Generator().manual_seed(seed) if seed is not None else None
        for li in range(model_config.n_layer):
            for t in config.targets:
                a = torch.empty(d, config.r).normal_(0.0, 0.02, generator=g)
                b = torch.zeros(config.r, d)
                self.params[f"h{li}_{t}_A"] = nn.Parameter(a)
                self.params[f"h{li}_{t}_B"] = nn.Parameter(b)
        if config.embed_rows is not None:
            lo, hi = config.embed_rows
            if not 0 <= lo <= hi < model_config.vocab_size:
                raise ConfigError(f"embed_rows {config.embed_rows} outside vocab")
            self.params["embed_delta"] = nn.Parameter(torch.zeros(hi - lo + 1, d))
        if dtype is not torch.float32:
            self.to(dtype)

    def has_target(self, layer_idx: int, name: str) -> bool:
        return f"h{layer_idx}_{name}_A" in self.params

    def delta(self, layer_idx: int, name: str, x, training: bool):
        if not self.has_target(layer_idx, name):
            return torch.zeros_like(x)
        a = self.params[f"h{layer_idx}_{name}_A"]
        b = self.params[f"h{layer_idx}_{name}_B"]
        if self.config.dropout > 0:
            x = F.dropout(x, self.config.dropout, training=training)
        return self.config.scale * ((x @ a) @ b)

    def effective_embedding(self, wte_weight):
        """The token embedding with row deltas applied (tied head uses it too)."""
        if "embed_delta" not in self.params:
            return wte_weight
        lo, hi = self.config.embed_rows
        delta = self.params["embed_delta"].to(wte_weight.dtype)
        return torch.cat([
            wte_weight[:lo],
            wte_weight[lo:hi + 1] + delta,
            wte_weight[hi + 1:],
        ])

    def trainable_parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def attach_lora(model: GPT, config: LoraConfig, seed: int) -> LoraAdapter:
    """Create a zero-effect adapter for `model` and freeze the base weights."""
    adapter = LoraAdapter(config, model.config, seed=seed,
                          dtype=model.wte.weight.dtype)
    for p in model.parameters():
        p.requires_grad_(False)
    return adapter


def merge_lora(model: GPT, adapter: LoraAdapter) -> GPT:
    """Fold the adapter into a copy of the base weights (W += scale*(A@B)^T)."""
    if adapter.model_config != model.config:
        raise ConfigError("adapter was built for a different model config")
    merged = copy.deepcopy(model)
    for p in merged.parameters():
        p.requires_grad_(True)
    with torch.no_grad():
        for li, block in enumerate(merged.blocks):
            for t in adapter.config.targets:
                a = adapter.params[f"h{li}_{t}_A"]
                b = adapter.params[f"h{li}_{t}_B"]
                w = getattr(block.attn, t).weight
                w += adapter.config.scale * (a @ b).T.to(w.dtype)
        if adapter.config.embed_rows is not None:
            lo, hi = adapter.config.embed_rows
            merged.wte.weight[lo:hi + 1] += adapter.params["embed_delta"].to(
                merged.wte.weight.dtype)
    return merged


@dataclass(frozen=True)
class TokenRangeConstraint:
    """Force the first `count` sampled tokens into the id range [lo, hi]."""

    lo: int
    hi: int
    count: int


def sample(model: GPT, prompt_ids, *, temperature: float = 1.0,
           top_k: int | None = 50, constraint: TokenRangeConstraint | None = None,
           seed: int | None = None, max_new: int = 256,
           eos_id: int | None = None, adapter: LoraAdapter | None = None) -> list[int]:
    """Autoregressive sampling; returns prompt + generated ids.

    temperature 0 (or top_k=1) is greedy argmax and fully deterministic;
    otherwise sampling uses a generator seeded with `seed`. Stops at `eos_id`
    (included in the output), `max_new` tokens, or a full context window.
    """
    ids = [int(i) for i in prompt_ids]
    if not ids:
        raise PromptError("prompt must contain at least one token")
    if temperature < 0:
        raise ConfigError(f"temperature must be >= 0, got {temperature}")
    if top_k is not None and top_k < 1:
        raise ConfigError(f"top_k must be >= 1, got {top_k}")
    g = torch.Generator().manual_seed(seed if seed is not None else 0)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            for step in range(max_new):
                if len(ids) >= model.config.context_len:
                    break
                logits = model(torch.tensor(ids, dtype=torch.long), adapter)[-1]
                if constraint is not None and step < constraint.count:
                    keep = torch.full_like(logits, float("-inf"))
                    keep[constraint.lo:constraint.hi + 1] = logits[constraint.lo:constraint.hi + 1]
                    logits = keep
                if temperature == 0.0 or top_k == 1:
                    nxt = int(torch.argmax(logits))
                else:
                    logits = logits / temperature
                    if top_k is not None and top_k < logits.numel():
                        kth = torch.topk(logits, top_k).values[-1]
                        logits = logits.masked_fill(logits < kth, float("-inf"))
                    probs = torch.softmax(logits.to(torch.float64), dim=-1)
                    nxt = int(torch.multinomial(probs, 1, generator=g))
                ids.append(nxt)
                if eos_id is not None and nxt == eos_id and (
                        constraint is None or step >= constraint.count):
                    break
    finally:
        model.train(was_training)
    return ids


def _tensor_entries(state: dict) -> tuple[list[dict], bytes]:
    directory = []
    payload = bytearray()
    for name in sorted(state):
        t = state[name].detach().to(torch.float32).contiguous()
        directory.append({
            "name": name,
            "shape": list(t.shape),
            "offset": len(payload),
        })
        payload.extend(t.numpy().astype("<f4").tobytes())
    return directory, bytes(payload)


def save_checkpoint(path, model: GPT, adapter: LoraAdapter | None = None,
                    metadata: dict | None = None) -> None:
    """Write the binary checkpoint: magic, version, JSON header, f32 payload."""
    model_dir, model_payload = _tensor_entries(model.state_dict())
    header = {
        "config": model.config.to_dict(),
        "tensors": model_dir,
        "adapter": None,
        "metadata": metadata or {},
    }
    payload = model_payload
    if adapter is not None:
        a_dir, a_payload = _tensor_entries(adapter.state_dict())
        for e in a_dir:
            e["offset"] += len(payload)
        header["adapter"] = {"config": adapter.config.to_dict(), "tensors": a_dir}
        payload += a_payload
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)
    os.replace(tmp, path)


@dataclass
class CheckpointBundle:
    model: GPT
    adapter: LoraAdapter | None
    metadata: dict

    @property
    def config(self) -> ModelConfig:
        return self.model.config


def _load_tensors(directory, payload, expected_state, what):
    loaded = {}
    names = {e["name"] for e in directory}
    if names != set(expected_state):
        raise IntegrityError(
            f"{what} tensor table does not match architecture: "
            f"missing={sorted(set(expected_state) - names)}, "
            f"unexpected={sorted(names - set(expected_state))}"
        )
    for e in directory:
        shape = tuple(e["shape"])
        expected_shape = tuple(expected_state[e["name"]].shape)
        if shape != expected_shape:
            raise IntegrityError(
                f"{what} tensor {e['name']} has shape {shape}, config implies {expected_shape}"
            )
        n = 1
        for s in shape:
            n *= s
        start = e["offset"]
        end = start + 4 * n
        if end > len(payload):
            raise IntegrityError(f"checkpoint truncated while reading {e['name']}")
        arr = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape)
        loaded[e["name"]] = torch.from_numpy(arr.copy())
    return loaded


def load_checkpoint(path) -> CheckpointBundle:
    """Read a checkpoint; tensors round-trip bit-exactly."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", blob, 8)
    header_start = 16
    header_end = header_start + header_len
    if header_end > len(blob):
        raise IntegrityError("checkpoint truncated in header")
    try:
        header = json.loads(blob[header_start:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}") from exc
    payload = blob[header_end:]
    config = ModelConfig.from_dict(header["config"])
    model = GPT(config)
    model.load_state_dict(
        _load_tensors(header["tensors"], payload, model.state_dict(), "model")
    )
    adapter = None
    if header.get("adapter"):
        lcfg = LoraConfig.from_dict(header["adapter"]["config"])
        adapter = LoraAdapter(lcfg, config)
        adapter.load_state_dict(
            _load_tensors(header["adapter"]["tensors"], payload,
                          adapter.state_dict(), "adapter")
        )
        for p in model.parameters():
            p.requires_grad_(False)
    return CheckpointBundle(model, adapter, header.get("metadata", {}))
