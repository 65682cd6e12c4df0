"""Command-line pipeline driver.

Exit codes: 0 success, 1 usage, 2 data/validation, 3 numeric failure.
Errors go to stderr as a single JSON line. Every stochastic command either
takes an explicit --seed or records the generated seed in its output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import evalsuite, seqdata
from .errors import ConfigError, DataError, NumericFailure, SilkforgeError, ValidationError
from .seqdata import (
    AminoAcidSequence,
    MinMaxScaler,
    PropertyVector,
    make_folds,
    parse_fasta,
    read_properties_tsv,
    write_fasta,
    write_properties_tsv,
)
from .tokenizer import Vocabulary

CONFIG_SCHEMA = {
    "data": {"fasta", "properties_tsv", "properties_fasta", "teacher_checkpoint",
             "teacher_logits", "student_checkpoint", "out_dir"},
    "tokenizer": {"pad_to"},
    "model": {"preset", "n_embd", "n_layer", "n_heads", "hidden_dim",
              "vocab_size", "context_len", "dropout"},
    "distill": {"temperature", "alpha", "train"},
    "level1": {"train", "lora"},
    "level2": {"train", "lora", "folds", "select", "reinit_adapter"},
    "eval": {"window", "threshold", "background"},
    "sampling": {"temperature", "top_k", "max_new", "n"},
}
TRAIN_KEYS = {"learning_rate", "batch_size", "warmup_steps", "max_epochs",
              "weight_decay", "patience", "seed", "val_fraction"}
LORA_KEYS = {"r", "alpha", "dropout", "targets", "embed_rows"}


class RunConfig:
    """Validated pipeline configuration (unknown keys rejected)."""

    def __init__(self, raw: dict):
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        for section, value in raw.items():
            if section not in CONFIG_SCHEMA:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(value, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            for key in value:
                if key not in CONFIG_SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in section {section!r}")
            if "train" in value:
                for key in value["train"]:
                    if key not in TRAIN_KEYS:
                        raise ConfigError(f"unknown key {key!r} in {section}.train")
            if "lora" in value:
                for key in value["lora"]:
                    if key not in LORA_KEYS:
                        raise ConfigError(f"unknown key {key!r} in {section}.lora")
        self.raw = raw

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None

    def to_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, indent=2)

    def section(self, name: str) -> dict:
        return self.raw.get(name, {})

    def data_path(self, key: str, required: bool = True):
        value = self.section("data").get(key)
        if value is None and required:
            raise ConfigError(f"config data.{key} is required for this command")
        return value

    def model_config(self, vocab_size: int):
        from .model import PRESETS, ModelConfig
        section = dict(self.section("model"))
        preset = section.pop("preset", "paper-student")
        if preset not in PRESETS:
            raise ConfigError(f"unknown model preset {preset!r}; "
                              f"known: {sorted(PRESETS)}")
        base = PRESETS[preset].to_dict()
        base["vocab_size"] = vocab_size
        base.update(section)
        return ModelConfig.from_dict(base)

    def train_config(self, section_name: str, defaults):
        from .train import TrainConfig
        base = {
            "learning_rate": defaults.learning_rate,
            "batch_size": defaults.batch_size,
            "warmup_steps": defaults.warmup_steps,
            "max_epochs": defaults.max_epochs,
            "weight_decay": defaults.weight_decay,
            "patience": defaults.patience,
            "seed": defaults.seed,
            "val_fraction": defaults.val_fraction,
        }
        base.update(self.section(section_name).get("train", {}))
        return TrainConfig(**base)

    def lora_config(self, section_name: str, default_embed_rows=None):
        from .model import LoraConfig
        raw = dict(self.section(section_name).get("lora", {}))
        if "targets" in raw:
            raw["targets"] = tuple(raw["targets"])
        if "embed_rows" in raw and raw["embed_rows"] is not None:
            raw["embed_rows"] = tuple(raw["embed_rows"])
        elif default_embed_rows is not None:
            raw["embed_rows"] = default_embed_rows
        return LoraConfig(**raw)

    def distill_config(self):
        from .train import DistillConfig
        section = self.section("distill")
        return DistillConfig(
            temperature=section.get("temperature", 10.0),
            alpha=section.get("alpha", 0.1),
        )

    def pad_to(self, model_config) -> int:
        return self.section("tokenizer").get(
            "pad_to", min(model_config.context_len, 512)
        )

    def out_dir(self, override=None) -> str:
        path = override or self.section("data").get("out_dir")
        if not path:
            raise ConfigError("an output directory is required "
                              "(--out or config data.out_dir)")
        return path


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _emit_error(exc) -> int:
    code = 3 if isinstance(exc, NumericFailure) else 2
    name = type(exc).__name__ if isinstance(exc, SilkforgeError) else "UsageError"
    sys.stderr.write(json.dumps({"error": name, "message": str(exc)}) + "\n")
    return 1 if isinstance(exc, _UsageError) else code


def _write_out(text: str, out_path) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_fasta(path):
    try:
        with open(path, "rb") as fh:
            return parse_fasta(fh.read())
    except FileNotFoundError:
        raise DataError(f"FASTA file not found: {path}") from None


# ---------------------------------------------------------------- commands


def cmd_fetch_data(args) -> int:
    scores = [int(s) for s in args.scores.split(",") if s.strip()]
    count = seqdata.fetch_uniprot(args.taxonomy, scores, args.out,
                                  fixture_path=args.fixture)
    print(json.dumps({"records": count, "out": args.out,
                      "url": seqdata.build_uniprot_url(args.taxonomy, scores)}))
    return 0


def _setup_torch():
    import torch
    torch.set_num_threads(1)


def cmd_distill(args) -> int:
    _setup_torch()
    from .train import TeacherSource, TrainConfig, train_distill

    config = RunConfig.from_file(args.config)
    vocab = Vocabulary()
    model_cfg = config.model_config(vocab.size)
    dcfg = config.distill_config()
    tcfg = config.train_config("distill", TrainConfig(5e-4, 16, 50, 10))
    corpus = [seq for _, seq in _load_fasta(config.data_path("fasta"))]
    teacher = None
    if config.data_path("teacher_checkpoint", required=False):
        teacher = TeacherSource.from_checkpoint(config.data_path("teacher_checkpoint"))
    elif config.data_path("teacher_logits", required=False):
        teacher = TeacherSource.from_logits_file(config.data_path("teacher_logits"))
    result = train_distill(teacher, model_cfg, corpus, tcfg, dcfg,
                           config.out_dir(args.out), vocab,
                           pad_to=config.pad_to(model_cfg))
    print(json.dumps({"best_checkpoint": result.best_checkpoint,
                      "best_val_loss": result.best_val_loss,
                      "epochs": len(result.history)}))
    return 0


def cmd_finetune_repeats(args) -> int:
    _setup_torch()
    from .train import LEVEL1_PRESET, train_level1

    config = RunConfig.from_file(args.config)
    vocab = Vocabulary()
    tcfg = config.train_config("level1", LEVEL1_PRESET)
    lcfg = config.lora_config("level1")
    corpus = [seq for _, seq in _load_fasta(args.data)]
    student = config.data_path("student_checkpoint")
    result = train_level1(student, corpus, tcfg, lcfg,
                          config.out_dir(args.out), vocab,
                          pad_to=config.section("tokenizer").get("pad_to"))
    print(json.dumps({"best_checkpoint": result.best_checkpoint,
                      "best_val_loss": result.best_val_loss,
                      "epochs": len(result.history)}))
    return 0


def _labeled_records(config: RunConfig, tsv_path):
    fasta = config.data_path("properties_fasta", required=False)
    if fasta is None:
        stem, _ = os.path.splitext(tsv_path)
        fasta = stem + ".fasta"
    if not os.path.exists(fasta):
        raise DataError(
            f"no sequence FASTA for {tsv_path}: give config data.properties_fasta "
            f"or provide a sibling file {fasta}"
        )
    return seqdata.load_labeled_records(tsv_path, fasta)


def cmd_finetune_properties(args) -> int:
    _setup_torch()
    from .train import LEVEL2_PRESET, train_level2

    config = RunConfig.from_file(args.config)
    vocab = Vocabulary()
    tcfg = config.train_config("level2", LEVEL2_PRESET)
    # Level-2 adapts the conditioning tokens' embedding rows by default
    lcfg = config.lora_config(
        "level2", default_embed_rows=(vocab.task_gen_id, vocab.bin_range[1]))
    records = _labeled_records(config, args.data)
    plan = make_folds(len(records), args.folds, args.select, tcfg.seed)
    runs = train_level2(
        config.data_path("student_checkpoint"), records, tcfg, lcfg, plan,
        config.out_dir(args.out), vocab,
        pad_to=config.section("tokenizer").get("pad_to"),
        reinit_adapter=bool(config.section("level2").get("reinit_adapter", False)),
    )
    print(json.dumps({
        "folds": [
            {"fold": r.fold, "checkpoint": r.result.best_checkpoint,
             "val_loss": r.result.best_val_loss, "val_tsv": r.val_tsv,
             "val_fasta": r.val_fasta}
            for r in runs
        ]
    }))
    return 0


def _load_bundle(path):
    from .model import load_checkpoint
    try:
        bundle = load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    scaler = None
    if "scaler" in bundle.metadata:
        scaler = MinMaxScaler.from_dict(bundle.metadata["scaler"])
    return bundle, scaler


def cmd_generate(args) -> int:
    _setup_torch()
    from .train import generate_sequence, generate_unconditional

    bundle, scaler = _load_bundle(args.model)
    vocab = Vocabulary()
    seed = args.seed
    if seed is None:
        seed = int.from_bytes(os.urandom(4), "little")
    target = None
    if args.properties:
        raw = [float(x) for x in args.properties.split(",")]
        vec = PropertyVector.from_values(raw)
        if scaler is None:
            raise ConfigError(
                "checkpoint carries no scaler; conditional generation needs a "
                "Level-2 checkpoint")
        target = scaler.transform(vec, clip=True)
    records = []
    for i in range(args.n):
        if target is not None:
            seq = generate_sequence(bundle.model, target, vocab,
                                    adapter=bundle.adapter,
                                    temperature=args.temperature,
                                    top_k=args.top_k, seed=seed + i,
                                    max_new=args.max_new)
        else:
            seq = generate_unconditional(bundle.model, vocab,
                                         adapter=bundle.adapter,
                                         temperature=args.temperature,
                                         top_k=args.top_k, seed=seed + i,
                                         max_new=args.max_new)
        header = f"gen_{i:04d} seed={seed + i} temperature={args.temperature}"
        records.append((header, seq))
    _write_out(write_fasta(records), args.out)
    return 0


def cmd_predict(args) -> int:
    _setup_torch()
    from .train import predict_properties

    bundle, scaler = _load_bundle(args.model)
    if scaler is None:
        raise ConfigError("checkpoint carries no scaler; prediction needs a "
                          "Level-2 checkpoint")
    vocab = Vocabulary()
    rows = []
    for header, seq in _load_fasta(args.fasta):
        normalized = predict_properties(bundle.model, seq, vocab, bundle.adapter)
        rows.append((header.split()[0], scaler.inverse_transform(normalized)))
    if args.format == "json":
        payload = [
            {"id": rid, **dict(zip(seqdata.PROPERTY_FIELDS, vec.values()))}
            for rid, vec in rows
        ]
        _write_out(json.dumps(payload, indent=2) + "\n", args.out)
    else:
        _write_out(write_properties_tsv(rows), args.out)
    return 0


_EVAL_METRICS = ("length", "molecular_weight", "isoelectric_point",
                 "instability_index", "ss_helix", "ss_sheet", "ss_other",
                 "kl_bits")


def _evaluate_rows(records, background, window, threshold):
    rows = []
    for header, seq in records:
        rep = evalsuite.physchem_report(seq)
        motifs = evalsuite.count_motifs(seq)
        if len(seq) >= window:
            validity = evalsuite.repeat_validity(seq, window, threshold).value
        else:
            validity = None
        row = {
            "id": header.split()[0],
            "length": rep.length,
            "molecular_weight": rep.molecular_weight,
            "isoelectric_point": rep.isoelectric_point,
            "instability_index": rep.instability_index,
            "ss_helix": rep.ss_helix,
            "ss_sheet": rep.ss_sheet,
            "ss_other": rep.ss_other,
            "kl_bits": evalsuite.kl_divergence(rep.aa_composition, background),
            "repeat_validity": validity,
            "grouped_composition": rep.grouped_composition,
            "aa_composition": rep.aa_composition,
        }
        for name in evalsuite.MOTIF_NAMES:
            row[f"{name}_count"] = motifs.counts[name]
            row[f"{name}_coverage"] = motifs.coverages[name]
        rows.append(row)
    return rows


def _rows_to_tsv(rows) -> str:
    cols = ["id"] + list(_EVAL_METRICS) + ["repeat_validity"]
    for name in evalsuite.MOTIF_NAMES:
        cols += [f"{name}_count", f"{name}_coverage"]
    cols += [f"group_{g}" for g in ("nonpolar", "polar", "acidic", "basic")]
    lines = ["\t".join(cols)]
    for row in rows:
        cells = []
        for c in cols:
            if c.startswith("group_"):
                value = row["grouped_composition"][c[len("group_"):]]
            else:
                value = row.get(c)
            cells.append("NA" if value is None else str(value))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    window = args.window
    threshold = args.threshold
    if args.background == "builtin":
        background = seqdata.MASP_BACKGROUND
    else:
        background = seqdata.background_frequencies(
            [seq for _, seq in _load_fasta(args.background)]
        )
    records = _load_fasta(args.fasta)
    rows = _evaluate_rows(records, background, window, threshold)
    report = {"sequences": rows}
    if args.reference:
        ref_records = _load_fasta(args.reference)
        ref_rows = _evaluate_rows(ref_records, background, window, threshold)
        report["reference_sequences"] = ref_rows
        comparison = {}
        for metric in _EVAL_METRICS + tuple(
                f"{m}_coverage" for m in evalsuite.MOTIF_NAMES):
            a = [r[metric] for r in rows if r[metric] is not None]
            b = [r[metric] for r in ref_rows if r[metric] is not None]
            if a and b:
                d, p = evalsuite.ks_two_sample(a, b)
                comparison[metric] = {"ks_d": d, "ks_p": p}
        hams = []
        ref_by_len: dict[int, list] = {}
        for _, seq in ref_records:
            ref_by_len.setdefault(len(seq), []).append(seq)
        for _, seq in records:
            for other in ref_by_len.get(len(seq), []):
                hams.append(evalsuite.hamming_distance(seq, other))
        comparison["hamming"] = {
            "pairs": len(hams),
            "mean": (sum(hams) / len(hams)) if hams else None,
        }
        report["comparison"] = comparison
    if args.format == "json":
        _write_out(json.dumps(report, indent=2, allow_nan=False) + "\n", args.out)
    else:
        text = _rows_to_tsv(rows)
        if args.reference:
            text += "\n" + _comparison_tsv(report["comparison"])
        _write_out(text, args.out)
    return 0


def _comparison_tsv(comparison: dict) -> str:
    lines = ["metric\tks_d\tks_p"]
    for metric, stats in comparison.items():
        if metric == "hamming":
            continue
        lines.append(f"{metric}\t{stats['ks_d']}\t{stats['ks_p']}")
    ham = comparison["hamming"]
    lines.append(f"hamming_pairs\t{ham['pairs']}\t"
                 f"{'NA' if ham['mean'] is None else ham['mean']}")
    return "\n".join(lines) + "\n"


def _read_matrix(path):
    try:
        rows = read_properties_tsv(path)
    except FileNotFoundError:
        raise DataError(f"TSV file not found: {path}") from None
    return [rid for rid, _ in rows], [vec.values() for _, vec in rows]


def cmd_trend(args) -> int:
    pred_ids, pred = _read_matrix(args.pred)
    ref_ids, ref = _read_matrix(args.ref)
    if set(pred_ids) != set(ref_ids):
        raise ValidationError("prediction and reference TSVs cover different ids")
    ref_by_id = dict(zip(ref_ids, ref))
    ref_aligned = [ref_by_id[rid] for rid in pred_ids]
    report = evalsuite.trend_metrics(pred, ref_aligned,
                                     property_names=seqdata.PROPERTY_FIELDS)
    if args.format == "tsv":
        d = report.to_dict()
        d.pop("per_property", None)
        lines = ["metric\tvalue"]
        for k, v in d.items():
            lines.append(f"{k}\t{'NA' if v is None else v}")
        _write_out("\n".join(lines) + "\n", args.out)
    else:
        _write_out(json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n",
                   args.out)
    return 0


def _validity_rate(seqs, window, threshold):
    valid = 0
    for s in seqs:
        if len(s) >= window and evalsuite.repeat_validity(
                s, window, threshold) is evalsuite.RepeatValidity.VALID:
            valid += 1
    return valid / len(seqs) if seqs else None


def cmd_ablate(args) -> int:
    _setup_torch()
    from .train import (
        DistillConfig,
        LEVEL1_PRESET,
        LEVEL2_PRESET,
        TeacherSource,
        TrainConfig,
        train_distill,
        train_level1,
        train_level2,
        generate_unconditional,
        predict_properties,
    )
    from .model import load_checkpoint

    config = RunConfig.from_file(args.config)
    vocab = Vocabulary()
    out_dir = config.out_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    eval_sec = config.section("eval")
    window = eval_sec.get("window", 30)
    threshold = eval_sec.get("threshold", 0.25)
    n_samples = config.section("sampling").get("n", 50)
    samp_t = config.section("sampling").get("temperature", 1.0)
    samp_k = config.section("sampling").get("top_k", 50)

    def sample_validity(ckpt_path, seed0):
        bundle = load_checkpoint(ckpt_path)
        seqs = []
        for i in range(n_samples):
            try:
                seqs.append(generate_unconditional(
                    bundle.model, vocab, adapter=bundle.adapter,
                    temperature=samp_t, top_k=samp_k, seed=seed0 + i))
            except NumericFailure:
                seqs.append("")
        return _validity_rate(seqs, window, threshold)

    report = {"mode": args.mode}
    if args.mode == "no-distill":
        corpus = [seq for _, seq in _load_fasta(config.data_path("fasta"))]
        model_cfg = config.model_config(vocab.size)
        dcfg = config.distill_config()
        tcfg = config.train_config("distill", TrainConfig(5e-4, 16, 50, 10))
        teacher_path = config.data_path("teacher_checkpoint", required=False)
        logits_path = config.data_path("teacher_logits", required=False)
        if teacher_path:
            teacher = TeacherSource.from_checkpoint(teacher_path)
        elif logits_path:
            teacher = TeacherSource.from_logits_file(logits_path)
        else:
            raise ConfigError("no-distill ablation needs a teacher source")
        distilled = train_distill(teacher, model_cfg, corpus, tcfg, dcfg,
                                  os.path.join(out_dir, "with-distill"), vocab,
                                  pad_to=config.pad_to(model_cfg))
        plain = train_distill(None, model_cfg, corpus, tcfg,
                              DistillConfig(dcfg.temperature, alpha=1.0),
                              os.path.join(out_dir, "no-distill"), vocab,
                              pad_to=config.pad_to(model_cfg))
        report["with_distill"] = {
            "val_loss": distilled.best_val_loss,
            "checkpoint": distilled.best_checkpoint,
            "repeat_validity_rate": sample_validity(distilled.best_checkpoint, 1000),
        }
        report["without_distill"] = {
            "val_loss": plain.best_val_loss,
            "checkpoint": plain.best_checkpoint,
            "repeat_validity_rate": sample_validity(plain.best_checkpoint, 1000),
        }
    elif args.mode == "no-level1":
        student = config.data_path("student_checkpoint")
        d1 = [seq for _, seq in _load_fasta(config.data_path("fasta"))]
        records = _labeled_records(config, config.data_path("properties_tsv"))
        l2_sec = config.section("level2")
        folds = l2_sec.get("folds", 16)
        select = l2_sec.get("select", 5)
        tcfg1 = config.train_config("level1", LEVEL1_PRESET)
        lcfg1 = config.lora_config("level1")
        tcfg2 = config.train_config("level2", LEVEL2_PRESET)
        lcfg2 = config.lora_config(
            "level2", default_embed_rows=(vocab.task_gen_id, vocab.bin_range[1]))
        plan = make_folds(len(records), folds, select, tcfg2.seed)
        level1 = train_level1(student, d1, tcfg1, lcfg1,
                              os.path.join(out_dir, "level1"), vocab,
                              pad_to=config.section("tokenizer").get("pad_to"))

        def arm(start_ckpt, arm_dir, reinit):
            runs = train_level2(start_ckpt, records, tcfg2, lcfg2, plan,
                                os.path.join(out_dir, arm_dir), vocab,
                                pad_to=config.section("tokenizer").get("pad_to"),
                                reinit_adapter=reinit)
            scaler = MinMaxScaler.fit(records)
            preds, refs = [], []
            for run in runs:
                bundle = load_checkpoint(run.result.best_checkpoint)
                by_id = {r.record_id: r for r in records}
                for rid in run.val_record_ids:
                    rec = by_id[rid]
                    p = predict_properties(bundle.model, rec.sequence, vocab,
                                           bundle.adapter)
                    preds.append(p.values())
                    refs.append(scaler.transform(rec.properties).values())
            trend = evalsuite.trend_metrics(preds, refs,
                                            property_names=seqdata.PROPERTY_FIELDS)
            validity = sample_validity(runs[0].result.best_checkpoint, 2000)
            return {"trend": trend.to_dict(), "repeat_validity_rate": validity,
                    "checkpoints": [r.result.best_checkpoint for r in runs]}

        report["with_level1"] = arm(level1.best_checkpoint, "with-level1", False)
        report["without_level1"] = arm(student, "without-level1", True)
    else:
        raise ConfigError(f"unknown ablation mode {args.mode!r}")

    text = json.dumps(report, indent=2, allow_nan=False) + "\n"
    report_path = os.path.join(out_dir, f"ablate-{args.mode}.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="silkforge",
                     description="Spidroin repeat language-model pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch-data", help="download and canonicalize UniProt FASTA")
    p.add_argument("--taxonomy", type=int, required=True)
    p.add_argument("--scores", default="2,3,4,5",
                   help="comma-separated annotation scores")
    p.add_argument("--out", required=True)
    p.add_argument("--fixture", help="local gzip FASTA instead of the network")
    p.set_defaults(func=cmd_fetch_data)

    p = sub.add_parser("distill", help="Stage 1: teacher-student distillation "
                                       "(alpha=1 with no teacher = plain CLM)")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default config data.out_dir)")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("finetune-repeats", help="Stage 2: LoRA CLM on repeats")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="repeats FASTA")
    p.add_argument("--out")
    p.set_defaults(func=cmd_finetune_repeats)

    p = sub.add_parser("finetune-properties",
                       help="Stage 3: bidirectional cross-validated fine-tuning")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="properties TSV")
    p.add_argument("--folds", type=int, default=16)
    p.add_argument("--select", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_finetune_properties)

    p = sub.add_parser("generate", help="sample sequences (conditional with "
                                        "--properties, unconditional without)")
    p.add_argument("--model", required=True)
    p.add_argument("--properties",
                   help="raw values 'toughness,sd,strength,sd,youngs,sd,strain,sd'; "
                        "normalized by the checkpoint scaler (clipped to its range)")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--seed", type=int, default=None,
                   help="base seed; generated and recorded in headers if omitted")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--top-k", dest="top_k", type=int, default=50)
    p.add_argument("--max-new", dest="max_new", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("predict", help="estimate properties for FASTA sequences")
    p.add_argument("--model", required=True)
    p.add_argument("--fasta", required=True)
    p.add_argument("--format", choices=("tsv", "json"), default="tsv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="sequence/motif/physicochemical reports")
    p.add_argument("--fasta", required=True)
    p.add_argument("--reference", help="reference FASTA for distribution comparison")
    p.add_argument("--background", default="builtin",
                   help="'builtin' or a FASTA to pool background frequencies from")
    p.add_argument("--window", type=int, default=30)
    p.add_argument("--threshold", type=float, default=0.25)
    p.add_argument("--format", choices=("tsv", "json"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("trend", help="trend metrics between two property TSVs")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--format", choices=("tsv", "json"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_trend)

    p = sub.add_parser("ablate", help="ablation comparisons (side-by-side reports)")
    p.add_argument("--mode", required=True, choices=("no-distill", "no-level1"))
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        return _emit_error(exc)
    except SilkforgeError as exc:
        return _emit_error(exc)


if __name__ == "__main__":
    sys.exit(main())
