"""Training machinery: AdamW with decoupled decay, warmup schedule, early
stopping, Stage-1 distillation, the two LoRA fine-tuning levels, the
cross-validation driver, and bidirectional inference helpers.

All loops are deterministic under their TrainConfig seed (single-threaded):
init, batch order, dropout, and sampling all derive from it.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import (
    ConfigError,
    EmptyInputError,
    FormatError,
    GenerationError,
    GraphError,
    IntegrityError,
    NumericError,
)
from .model import (
    GPT,
    LoraAdapter,
    LoraConfig,
    ModelConfig,
    TokenRangeConstraint,
    attach_lora,
    clm_loss,
    init_model,
    load_checkpoint,
    sample,
    save_checkpoint,
)
from .seqdata import (
    AminoAcidSequence,
    FoldPlan,
    MinMaxScaler,
    PropertyVector,
    write_fasta,
    write_properties_tsv,
)
from .tokenizer import (
    ESTIMATE,
    GENERATE,
    EncodedExample,
    N_PROPERTIES,
    Vocabulary,
    build_clm_example,
    build_example,
)

TLOG_MAGIC = b"TLOG"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    warmup_steps: int
    max_epochs: int
    weight_decay: float = 0.01
    patience: int = 2
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")


# Fine-tuning presets for the two levels (full-scale configuration).
LEVEL1_PRESET = TrainConfig(5e-4, 4, 50, 10, weight_decay=0.01)
LEVEL2_PRESET = TrainConfig(1e-5, 8, 50, 10, weight_decay=0.01)


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 10.0
    alpha: float = 0.1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"distillation temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0,1], got {self.alpha}")


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear warmup from 0 to the configured rate, constant afterwards."""
    if step < 0:
        raise ConfigError("step must be >= 0")
    if config.warmup_steps > 0 and step < config.warmup_steps:
        return config.learning_rate * step / config.warmup_steps
    return config.learning_rate


@dataclass
class EarlyStopState:
    """Stops when the validation loss has not improved for `patience` epochs."""

    patience: int
    best: float = math.inf
    epochs_since_improvement: int = 0

    def observe(self, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
        return self.epochs_since_improvement >= self.patience


def backward(loss: torch.Tensor) -> None:
    """Reverse-mode pass; gradients land on the trainable tensors only."""
    if not isinstance(loss, torch.Tensor) or not loss.requires_grad:
        raise GraphError("loss is detached from the autograd graph")
    loss.backward()


@dataclass
class OptimizerState:
    """Adam first/second moments for the trainable set, plus step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, named_params) -> "OptimizerState":
        m = {n: torch.zeros_like(p) for n, p in named_params.items()}
        v = {n: torch.zeros_like(p) for n, p in named_params.items()}
        return cls(m, v, 0)


def optimizer_step(state: OptimizerState, named_params, grads, lr_t: float,
                   weight_decay: float, betas=(0.9, 0.999), eps=1e-8) -> None:
    """One AdamW step with decoupled decay on matrix weights only.

    Aborts (no mutation at all) if any gradient is non-finite.
    """
    b1, b2 = betas
    for name in named_params:
        g = grads.get(name)
        if g is not None and not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}; step aborted")
    t = state.step + 1
    with torch.no_grad():
        for name, p in named_params.items():
            g = grads.get(name)
            if g is None:
                g = torch.zeros_like(p)
            m = state.m[name].mul_(b1).add_(g, alpha=1 - b1)
            v = state.v[name].mul_(b2).addcmul_(g, g, value=1 - b2)
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            p.add_(m_hat / (v_hat.sqrt() + eps), alpha=-lr_t)
            if weight_decay > 0 and p.dim() >= 2:
                p.add_(p, alpha=-lr_t * weight_decay)
    state.step = t


def distill_loss(student_logits, teacher_logits, targets, mask,
                 config: DistillConfig):
    """alpha * hard CE + (1-alpha) * T^2 * KL(teacher_soft || student_soft),
    averaged over masked target positions.

    At alpha == 1 this reduces exactly to the plain CLM loss (the teacher
    term is skipped entirely, so trajectories match bit for bit).
    """
    if config.temperature <= 0:
        raise ConfigError("distillation temperature must be > 0")
    hard = clm_loss(student_logits, targets, mask)
    if config.alpha == 1.0:
        return hard
    if teacher_logits is None:
        raise ConfigError("teacher logits required when alpha < 1")
    if teacher_logits.shape != student_logits.shape:
        raise ConfigError(
            f"teacher logits shape {tuple(teacher_logits.shape)} does not match "
            f"student {tuple(student_logits.shape)}"
        )
    s = student_logits if student_logits.dim() == 3 else student_logits.unsqueeze(0)
    tch = teacher_logits if teacher_logits.dim() == 3 else teacher_logits.unsqueeze(0)
    msk = (mask if mask.dim() == 2 else mask.unsqueeze(0))[:, 1:].to(torch.bool)
    T = config.temperature
    logp_t = torch.log_softmax(tch[:, :-1] / T, dim=-1)
    logp_s = torch.log_softmax(s[:, :-1] / T, dim=-1)
    kl_all = (logp_t.exp() * (logp_t - logp_s)).sum(dim=-1)
    soft = kl_all[msk].to(torch.float64).mean() * (T * T)
    return config.alpha * hard + (1.0 - config.alpha) * soft


class TeacherSource:
    """Soft-target provider: a loaded teacher model or a logits file.

    Logits are computed (or stored) per example, row by row, so both routes
    yield bit-identical values for the same examples.
    """

    def __init__(self, model: GPT | None = None, table: list | None = None,
                 vocab_size: int | None = None):
        if (model is None) == (table is None):
            raise ConfigError("provide exactly one of model or logits table")
        self._model = model
        self._table = table
        self.vocab_size = model.config.vocab_size if model is not None else vocab_size
        self._cache: dict[int, torch.Tensor] = {}
        if model is not None:
            model.eval()

    @classmethod
    def from_checkpoint(cls, path) -> "TeacherSource":
        bundle = load_checkpoint(path)
        if bundle.adapter is not None:
            from .model import merge_lora
            return cls(model=merge_lora(bundle.model, bundle.adapter))
        return cls(model=bundle.model)

    @classmethod
    def from_logits_file(cls, path) -> "TeacherSource":
        vocab_size, table = read_teacher_logits(path)
        return cls(table=table, vocab_size=vocab_size)

    def logits_for(self, index: int, example: EncodedExample) -> torch.Tensor:
        if self._table is not None:
            if index >= len(self._table):
                raise ConfigError(f"logits file has no record for example {index}")
            t = self._table[index]
            if t.shape[0] != len(example.ids):
                raise ConfigError(
                    f"logits record {index} has length {t.shape[0]}, example has {len(example.ids)}"
                )
            return t
        if index not in self._cache:
            with torch.no_grad():
                ids = torch.tensor(example.ids, dtype=torch.long)
                self._cache[index] = self._model(ids).detach()
        return self._cache[index]


def write_teacher_logits(path, teacher: GPT, examples) -> None:
    """Dump per-example teacher logits: magic, u32 vocab size, then for each
    example a u32 length followed by length x vocab float32 values."""
    teacher.eval()
    with open(path, "wb") as fh:
        fh.write(TLOG_MAGIC)
        fh.write(struct.pack("<I", teacher.config.vocab_size))
        with torch.no_grad():
            for ex in examples:
                ids = torch.tensor(ex.ids, dtype=torch.long)
                logits = teacher(ids).to(torch.float32).contiguous()
                fh.write(struct.pack("<I", logits.shape[0]))
                fh.write(logits.numpy().astype("<f4").tobytes())


def read_teacher_logits(path) -> tuple[int, list[torch.Tensor]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TLOG_MAGIC:
        raise FormatError("bad teacher-logits magic")
    (vocab_size,) = struct.unpack_from("<I", blob, 4)
    offset = 8
    table = []
    while offset < len(blob):
        if offset + 4 > len(blob):
            raise IntegrityError("teacher-logits file truncated in record header")
        (length,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        nbytes = 4 * length * vocab_size
        if offset + nbytes > len(blob):
            raise IntegrityError("teacher-logits file truncated in payload")
        arr = np.frombuffer(blob[offset:offset + nbytes], dtype="<f4")
        table.append(torch.from_numpy(arr.copy().reshape(length, vocab_size)))
        offset += nbytes
    return vocab_size, table


@dataclass
class TrainResult:
    best_checkpoint: str
    best_val_loss: float
    history: list[dict]
    retained: list[str]
    log_path: str


def _collate(examples, indices):
    ids = torch.tensor([examples[i].ids for i in indices], dtype=torch.long)
    mask = torch.tensor([examples[i].loss_mask for i in indices], dtype=torch.long)
    return ids, mask


def _split_train_val(n: int, seed: int, val_fraction: float) -> tuple[list[int], list[int]]:
    import random as _random
    order = list(range(n))
    _random.Random(seed ^ 0x5F0F).shuffle(order)
    n_val = max(1, int(round(n * val_fraction))) if n > 1 else 0
    return order[n_val:], order[:n_val]


def _fit(model, adapter, examples, train_idx, val_idx, batch_loss, cfg,
         out_dir, tag, save_extra=None, retain: int = 2,
         grad_hook=None) -> TrainResult:
    """Shared epoch loop: shuffled batches, warmup AdamW, JSONL logging,
    early stopping on validation loss, top-`retain` checkpoint retention."""
    import random as _random

    os.makedirs(out_dir, exist_ok=True)
    torch.manual_seed(cfg.seed)
    if adapter is not None:
        trainables = {f"adapter.{n}": p for n, p in adapter.named_parameters()}
    else:
        trainables = {n: p for n, p in model.named_parameters() if p.requires_grad}
    if not trainables:
        raise ConfigError("nothing to train: no trainable tensors")
    if not train_idx:
        raise ConfigError("training split is empty")
    state = OptimizerState.for_params(trainables)
    log_path = os.path.join(out_dir, f"{tag}-log.jsonl")
    log_fh = open(log_path, "w", encoding="utf-8")
    stopper = EarlyStopState(cfg.patience)
    kept: list[tuple[float, int, str]] = []
    history: list[dict] = []
    step = 0

    def validate() -> float:
        model.eval()
        total, count = 0.0, 0
        with torch.no_grad():
            for start in range(0, len(val_idx), cfg.batch_size):
                batch = val_idx[start:start + cfg.batch_size]
                loss = batch_loss(batch, training=False)
                total += float(loss) * len(batch)
                count += len(batch)
        model.train()
        return total / max(count, 1)

    model.train()
    try:
        for epoch in range(cfg.max_epochs):
            order = list(train_idx)
            _random.Random(cfg.seed + 7919 * (epoch + 1)).shuffle(order)
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                for p in trainables.values():
                    p.grad = None
                loss = batch_loss(batch, training=True)
                backward(loss)
                if grad_hook is not None:
                    grad_hook()
                grads = {n: p.grad for n, p in trainables.items()}
                rate = lr_at(step, cfg)
                optimizer_step(state, trainables, grads, rate, cfg.weight_decay)
                last_loss = float(loss.detach())
                log_fh.write(json.dumps(
                    {"step": step, "lr": rate, "loss": last_loss, "split": "train"}
                ) + "\n")
                step += 1
            val_loss = validate() if val_idx else last_loss
            log_fh.write(json.dumps(
                {"step": step, "lr": lr_at(step, cfg), "loss": val_loss, "split": "val"}
            ) + "\n")
            history.append({"epoch": epoch, "val_loss": val_loss})
            meta = {"seed": cfg.seed, "epoch": epoch, "val_loss": val_loss}
            if save_extra:
                meta.update(save_extra)
            path = os.path.join(out_dir, f"{tag}-epoch{epoch:03d}.ckpt")
            save_checkpoint(path, model, adapter, meta)
            kept.append((val_loss, epoch, path))
            kept.sort(key=lambda kv: (kv[0], kv[1]))
            while len(kept) > retain:
                _, _, drop = kept.pop()
                if os.path.exists(drop):
                    os.remove(drop)
            if stopper.observe(val_loss):
                break
    finally:
        log_fh.close()
    best_val, _, best_path = kept[0]
    return TrainResult(best_path, best_val, history, [p for _, _, p in kept], log_path)


def tokenize_clm_corpus(sequences, vocab: Vocabulary, pad_to: int):
    return [build_clm_example(s, vocab, pad_to) for s in sequences]


def train_distill(teacher: TeacherSource | None, student_config: ModelConfig,
                  corpus, train_cfg: TrainConfig, distill_cfg: DistillConfig,
                  out_dir, vocab: Vocabulary, pad_to: int | None = None,
                  tag: str = "distill") -> TrainResult:
    """Stage 1: train a student on soft teacher targets blended with hard CLM.

    `teacher=None` is only legal at alpha == 1, which is plain CLM training
    (how a local teacher gets trained in the first place).
    """
    if not corpus:
        raise EmptyInputError("distillation corpus is empty")
    if teacher is None and distill_cfg.alpha != 1.0:
        raise ConfigError("a teacher source is required when alpha < 1")
    if teacher is not None and teacher.vocab_size != student_config.vocab_size:
        raise ConfigError(
            f"teacher vocab {teacher.vocab_size} != student vocab {student_config.vocab_size}"
        )
    pad_to = pad_to or min(student_config.context_len, 512)
    examples = tokenize_clm_corpus(corpus, vocab, pad_to)
    train_idx, val_idx = _split_train_val(len(examples), train_cfg.seed,
                                          train_cfg.val_fraction)
    model = init_model(student_config, seed=train_cfg.seed,
                       ordinal_token_range=vocab.bin_range)

    # Tokens reserved for the fine-tuning stages (task/SEP/property bins)
    # never occur in CLM data; keep their embedding rows at initialization so
    # the ordinal bin geometry survives distillation. EOS stays trainable.
    reserved = [vocab.task_gen_id, vocab.task_est_id, vocab.sep_id]
    reserved += list(range(vocab.bin_range[0], vocab.bin_range[1] + 1))
    reserved_rows = torch.tensor(sorted(reserved), dtype=torch.long)

    def protect_reserved_rows():
        grad = model.wte.weight.grad
        if grad is not None:
            grad[reserved_rows] = 0.0

    def batch_loss(batch, training):
        ids, mask = _collate(examples, batch)
        logits = model(ids)
        if distill_cfg.alpha == 1.0:
            return clm_loss(logits, ids, mask)
        t_logits = torch.stack([teacher.logits_for(i, examples[i]) for i in batch])
        return distill_loss(logits, t_logits, ids, mask, distill_cfg)

    return _fit(model, None, examples, train_idx, val_idx, batch_loss,
                train_cfg, out_dir, tag, grad_hook=protect_reserved_rows)


def train_level1(student_checkpoint, corpus, train_cfg: TrainConfig,
                 lora_cfg: LoraConfig, out_dir, vocab: Vocabulary,
                 pad_to: int | None = None, tag: str = "level1") -> TrainResult:
    """Stage 2: LoRA-only CLM fine-tuning on repeat sequences."""
    if not corpus:
        raise EmptyInputError("level-1 corpus is empty")
    bundle = load_checkpoint(student_checkpoint)
    if bundle.adapter is not None:
        raise ConfigError("level-1 starts from a bare student checkpoint")
    model = bundle.model
    adapter = attach_lora(model, lora_cfg, seed=train_cfg.seed)
    pad_to = pad_to or min(model.config.context_len, 512)
    examples = tokenize_clm_corpus(corpus, vocab, pad_to)
    train_idx, val_idx = _split_train_val(len(examples), train_cfg.seed,
                                          train_cfg.val_fraction)

    def batch_loss(batch, training):
        ids, mask = _collate(examples, batch)
        return clm_loss(model(ids, adapter), ids, mask)

    return _fit(model, adapter, examples, train_idx, val_idx, batch_loss,
                train_cfg, out_dir, tag)


@dataclass
class FoldRun:
    fold: int
    result: TrainResult
    val_record_ids: list[str]
    val_fasta: str
    val_tsv: str


def _upgrade_adapter(adapter: LoraAdapter, lora_cfg: LoraConfig) -> LoraAdapter:
    """Carry a Level-1 adapter into Level 2, widening its embedding-row delta
    block to cover the rows the Level-2 config asks for (zero-init where the
    old adapter had no delta)."""
    import dataclasses
    want = lora_cfg.embed_rows
    have = adapter.config.embed_rows
    if want is None or (have is not None
                        and have[0] <= want[0] and want[1] <= have[1]):
        return adapter
    new_range = want if have is None else (min(have[0], want[0]),
                                           max(have[1], want[1]))
    new_cfg = dataclasses.replace(adapter.config, embed_rows=new_range)
    upgraded = LoraAdapter(new_cfg, adapter.model_config)
    with torch.no_grad():
        for name, p in adapter.params.items():
            if name == "embed_delta":
                offset = have[0] - new_range[0]
                upgraded.params[name][offset:offset + p.shape[0]].copy_(p)
            else:
                upgraded.params[name].copy_(p)
    return upgraded


def build_bidirectional_examples(records, scaler: MinMaxScaler,
                                 vocab: Vocabulary, pad_to: int):
    """Each labeled record yields one generate- and one estimate-direction
    example (normalized conditioning)."""
    out = []
    for rec in records:
        v = scaler.transform(rec.properties)
        out.append(build_example(GENERATE, rec.sequence, v, vocab, pad_to))
        out.append(build_example(ESTIMATE, rec.sequence, v, vocab, pad_to))
    return out


def train_level2(level1_checkpoint, records, train_cfg: TrainConfig,
                 lora_cfg: LoraConfig, fold_plan: FoldPlan, out_dir,
                 vocab: Vocabulary, pad_to: int | None = None,
                 scaler: MinMaxScaler | None = None,
                 reinit_adapter: bool = False,
                 tag: str = "level2") -> list[FoldRun]:
    """Stage 3: for each selected fold, bidirectional LoRA fine-tuning on the
    remaining records; saves the per-fold model and exports the held-out set.

    Continues the Level-1 adapter by default; `reinit_adapter=True` starts a
    fresh one (also the path taken when the checkpoint has no adapter).
    """
    records = list(records)
    if fold_plan.n_records != len(records):
        raise ConfigError(
            f"fold plan covers {fold_plan.n_records} records, got {len(records)}"
        )
    if scaler is None:
        scaler = MinMaxScaler.fit(records)
    os.makedirs(out_dir, exist_ok=True)
    runs: list[FoldRun] = []
    for fold in fold_plan.selected:
        bundle = load_checkpoint(level1_checkpoint)
        model = bundle.model
        if bundle.adapter is not None and not reinit_adapter:
            adapter = _upgrade_adapter(bundle.adapter, lora_cfg)
            for p in model.parameters():
                p.requires_grad_(False)
        else:
            adapter = attach_lora(model, lora_cfg, seed=train_cfg.seed + fold)
        fold_pad = pad_to or min(model.config.context_len, 512)
        train_records = [records[i] for i in fold_plan.train_indices(fold)]
        val_records = [records[i] for i in fold_plan.folds[fold]]
        examples = build_bidirectional_examples(train_records + val_records,
                                                scaler, vocab, fold_pad)
        train_idx = list(range(2 * len(train_records)))
        val_idx = list(range(2 * len(train_records), len(examples)))

        def batch_loss(batch, training, _examples=examples, _model=model, _adapter=adapter):
            ids, mask = _collate(_examples, batch)
            return clm_loss(_model(ids, _adapter), ids, mask)

        fold_tag = f"{tag}-fold{fold:02d}"
        result = _fit(model, adapter, examples, train_idx, val_idx, batch_loss,
                      train_cfg, out_dir, fold_tag,
                      save_extra={"fold": fold, "scaler": scaler.to_dict(),
                                  "val_ids": [r.record_id for r in val_records]})
        val_fasta = os.path.join(out_dir, f"{fold_tag}-val.fasta")
        val_tsv = os.path.join(out_dir, f"{fold_tag}-val.tsv")
        write_fasta([(r.record_id, r.sequence) for r in val_records], val_fasta)
        write_properties_tsv([(r.record_id, r.properties) for r in val_records], val_tsv)
        runs.append(FoldRun(fold, result, [r.record_id for r in val_records],
                            val_fasta, val_tsv))
    return runs


def predict_properties(model: GPT, seq, vocab: Vocabulary,
                       adapter: LoraAdapter | None = None) -> PropertyVector:
    """Estimate direction: bin-constrained greedy decode of exactly 8 tokens."""
    budget = model.config.context_len - (2 + N_PROPERTIES + 1)
    seq_ids = vocab.encode_sequence(seq)[:budget]
    prompt = [vocab.task_est_id] + seq_ids + [vocab.sep_id]
    lo, hi = vocab.bin_range
    out = sample(model, prompt, temperature=0.0,
                 constraint=TokenRangeConstraint(lo, hi, N_PROPERTIES),
                 max_new=N_PROPERTIES, adapter=adapter)
    return vocab.decode_property_tokens(out[len(prompt):])


def generate_sequence(model: GPT, properties, vocab: Vocabulary,
                      adapter: LoraAdapter | None = None,
                      temperature: float = 1.0, top_k: int | None = 50,
                      seed: int | None = None,
                      max_new: int | None = None) -> AminoAcidSequence:
    """Generate direction: sample residues conditioned on a normalized vector."""
    bins = vocab.encode_property_vector(properties)
    prompt = [vocab.task_gen_id] + bins + [vocab.sep_id]
    cap = max_new or (model.config.context_len - len(prompt))
    out = sample(model, prompt, temperature=temperature, top_k=top_k,
                 seed=seed, max_new=cap, eos_id=vocab.eos_id, adapter=adapter)
    residues = vocab.decode_tokens(out[len(prompt):])
    if not residues:
        raise GenerationError("generation produced no residues before EOS")
    return AminoAcidSequence(residues)


def generate_unconditional(model: GPT, vocab: Vocabulary,
                           adapter: LoraAdapter | None = None,
                           temperature: float = 1.0, top_k: int | None = 50,
                           seed: int | None = None,
                           max_new: int | None = None) -> AminoAcidSequence:
    """Unconditional sampling from the EOS start anchor (CLM layout)."""
    cap = max_new or (model.config.context_len - 1)
    out = sample(model, [vocab.eos_id], temperature=temperature, top_k=top_k,
                 seed=seed, max_new=cap, eos_id=vocab.eos_id, adapter=adapter)
    residues = vocab.decode_tokens(out[1:])
    if not residues:
        raise GenerationError("generation produced no residues before EOS")
    return AminoAcidSequence(residues)
