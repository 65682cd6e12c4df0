"""Sequence and dataset handling: validated sequences, property vectors,
Min-Max scaling, fold planning, FASTA/TSV I/O and UniProt acquisition.

Everything here is immutable after construction and safe to share across
threads; only fetch_uniprot touches the filesystem (single writer, atomic).
"""

from __future__ import annotations

import gzip
import hashlib
import os
import random
import urllib.error
import urllib.request
from dataclasses import dataclass, field

from ._tables import MASP_BACKGROUND_FREQ, SIGMA, SIGMA_SET
from .errors import (
    ConfigError,
    EmptyInputError,
    FormatError,
    NetworkError,
    StateError,
    TooShortError,
    ValidationError,
)

FASTA_WRAP = 60
UNIPROT_STREAM_BASE = "https://rest.uniprot.org/uniprotkb/stream"
CACHE_ENV_VAR = "SILKFORGE_CACHE"

# N-/C-terminal trim lengths that expose the repeat region of a full spidroin.
N_TERMINAL_TRIM = 150
C_TERMINAL_TRIM = 115

PROPERTY_FIELDS = (
    "toughness",
    "sd_toughness",
    "strength",
    "sd_strength",
    "youngs_modulus",
    "sd_youngs_modulus",
    "strain_at_break",
    "sd_strain_at_break",
)

TSV_HEADER = ("id",) + PROPERTY_FIELDS


class AminoAcidSequence(str):
    """A non-empty string over the 20-letter amino-acid alphabet.

    Behaves as a str (slicing, len, regex) but validates on construction.
    """

    def __new__(cls, residues: str) -> "AminoAcidSequence":
        if len(residues) == 0:
            raise ValidationError("amino-acid sequence must have length >= 1")
        for i, ch in enumerate(residues):
            if ch not in SIGMA_SET:
                raise ValidationError(
                    f"invalid residue {ch!r} at position {i + 1}"
                )
        return super().__new__(cls, residues)


@dataclass(frozen=True)
class PropertyVector:
    """The 8-component mechanical-property vector, raw or normalized.

    Component order is fixed: toughness, sd_toughness, strength, sd_strength,
    youngs_modulus, sd_youngs_modulus, strain_at_break, sd_strain_at_break.
    """

    toughness: float
    sd_toughness: float
    strength: float
    sd_strength: float
    youngs_modulus: float
    sd_youngs_modulus: float
    strain_at_break: float
    sd_strain_at_break: float
    normalized: bool = False

    def __post_init__(self):
        for name in PROPERTY_FIELDS:
            x = float(getattr(self, name))
            if x != x or x in (float("inf"), float("-inf")):
                raise ValidationError(f"{name} must be finite, got {x!r}")
            if x < 0:
                raise ValidationError(f"{name} must be non-negative, got {x}")
            if self.normalized and x > 1.0:
                raise ValidationError(
                    f"normalized {name} must lie in [0,1], got {x}"
                )

    def values(self) -> tuple[float, ...]:
        return tuple(float(getattr(self, name)) for name in PROPERTY_FIELDS)

    @classmethod
    def from_values(cls, values, normalized: bool = False) -> "PropertyVector":
        vals = [float(v) for v in values]
        if len(vals) != len(PROPERTY_FIELDS):
            raise ValidationError(
                f"expected {len(PROPERTY_FIELDS)} components, got {len(vals)}"
            )
        return cls(*vals, normalized=normalized)


@dataclass(frozen=True)
class LabeledRecord:
    """One dataset entry: a repeat sequence with complete properties."""

    record_id: str
    sequence: AminoAcidSequence
    properties: PropertyVector
    species: str = ""
    subtype: str = ""


def parse_fasta(data) -> list[tuple[str, AminoAcidSequence]]:
    """Parse FASTA text (bytes or str) into (header, sequence) pairs.

    Line breaks inside a record are joined; sequences are validated against
    the amino-acid alphabet. A record with no residues is a FormatError; a
    bad residue is a ValidationError naming record and 1-based position.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    records: list[tuple[str, AminoAcidSequence]] = []
    header = None
    chunks: list[str] = []

    def flush():
        if header is None:
            return
        seq = "".join(chunks)
        if not seq:
            raise FormatError(f"record {header!r} has no sequence")
        try:
            records.append((header, AminoAcidSequence(seq)))
        except ValidationError as exc:
            raise ValidationError(f"record {header!r}: {exc}") from None

    for line in data.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush()
            header = line[1:].strip()
            chunks = []
        else:
            if header is None:
                raise FormatError("sequence data before first '>' header")
            chunks.append(line)
    flush()
    return records


def write_fasta(records, path=None) -> str:
    """Render (header, sequence) pairs as FASTA, wrapped at 60 columns.

    Returns the text; writes it to `path` when given.
    """
    lines: list[str] = []
    for header, seq in records:
        lines.append(f">{header}")
        for i in range(0, len(seq), FASTA_WRAP):
            lines.append(str(seq[i:i + FASTA_WRAP]))
    text = "\n".join(lines) + ("\n" if lines else "")
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def extract_repeat_region(seq: AminoAcidSequence) -> AminoAcidSequence:
    """Trim the N-terminal 150 and C-terminal 115 residues of a spidroin.

    Sequences of 265 residues or fewer have no repeat region left and are
    rejected rather than clamped.
    """
    min_len = N_TERMINAL_TRIM + C_TERMINAL_TRIM
    if len(seq) <= min_len:
        raise TooShortError(
            f"sequence length {len(seq)} <= {min_len}; no repeat region"
        )
    return AminoAcidSequence(str(seq[N_TERMINAL_TRIM:len(seq) - C_TERMINAL_TRIM]))


@dataclass(frozen=True)
class MinMaxScaler:
    """Per-component Min-Max normalization of property vectors to [0,1].

    Constant components (max == min) are flagged degenerate and map to 0.0;
    their inverse maps back to the constant value.
    """

    mins: tuple[float, ...]
    maxs: tuple[float, ...]

    def __post_init__(self):
        if len(self.mins) != len(PROPERTY_FIELDS) or len(self.maxs) != len(PROPERTY_FIELDS):
            raise ConfigError("scaler needs one (min, max) pair per component")
        for lo, hi in zip(self.mins, self.maxs):
            if hi < lo:
                raise ConfigError(f"scaler max {hi} < min {lo}")

    @property
    def degenerate(self) -> tuple[bool, ...]:
        return tuple(hi == lo for lo, hi in zip(self.mins, self.maxs))

    @classmethod
    def fit(cls, vectors) -> "MinMaxScaler":
        vals = [v.properties.values() if isinstance(v, LabeledRecord) else v.values()
                for v in vectors]
        if len(vals) < 2:
            raise ConfigError("scaler fit needs at least 2 records")
        mins = tuple(min(col) for col in zip(*vals))
        maxs = tuple(max(col) for col in zip(*vals))
        return cls(mins, maxs)

    def transform(self, v: PropertyVector, clip: bool = False) -> PropertyVector:
        if v.normalized:
            raise StateError("vector is already normalized")
        out = []
        for x, lo, hi in zip(v.values(), self.mins, self.maxs):
            if hi == lo:
                out.append(0.0)
            else:
                y = (x - lo) / (hi - lo)
                out.append(min(1.0, max(0.0, y)) if clip else y)
        return PropertyVector.from_values(out, normalized=True)

    def inverse_transform(self, v: PropertyVector) -> PropertyVector:
        if not v.normalized:
            raise StateError("inverse_transform requires a normalized vector")
        out = [lo if hi == lo else lo + y * (hi - lo)
               for y, lo, hi in zip(v.values(), self.mins, self.maxs)]
        return PropertyVector.from_values(out, normalized=False)

    def to_dict(self) -> dict:
        return {"mins": list(self.mins), "maxs": list(self.maxs)}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(tuple(float(x) for x in d["mins"]),
                   tuple(float(x) for x in d["maxs"]))


@dataclass(frozen=True)
class FoldPlan:
    """Disjoint, exhaustive partition of record indices plus selected folds."""

    folds: tuple[tuple[int, ...], ...]
    selected: tuple[int, ...]

    def __post_init__(self):
        seen: set[int] = set()
        for fold in self.folds:
            for i in fold:
                if i in seen:
                    raise ConfigError(f"index {i} appears in two folds")
                seen.add(i)
        if seen != set(range(len(seen))):
            raise ConfigError("folds must cover indices 0..n-1 exactly")
        for s in self.selected:
            if not 0 <= s < len(self.folds):
                raise ConfigError(f"selected fold {s} out of range")

    @property
    def n_records(self) -> int:
        return sum(len(f) for f in self.folds)

    def train_indices(self, fold: int) -> tuple[int, ...]:
        held = set(self.folds[fold])
        return tuple(i for i in range(self.n_records) if i not in held)


def make_folds(n: int, k: int, selected: int, rng_seed: int) -> FoldPlan:
    """Split n record indices into k equal folds and pick `selected` of them.

    Deterministic under rng_seed. k must divide n so the folds are equal.
    """
    if k <= 0 or n <= 0:
        raise ConfigError("n and k must be positive")
    if n % k != 0:
        raise ConfigError(f"k={k} does not divide n={n}; folds would be unequal")
    if selected > k:
        raise ConfigError(f"cannot select {selected} of {k} folds")
    rng = random.Random(rng_seed)
    order = list(range(n))
    rng.shuffle(order)
    size = n // k
    folds = tuple(tuple(sorted(order[i * size:(i + 1) * size])) for i in range(k))
    chosen = tuple(sorted(rng.sample(range(k), selected)))
    return FoldPlan(folds, chosen)


@dataclass(frozen=True)
class BackgroundDistribution:
    """Probability per residue; must be non-negative and sum to 1 +/- 1e-3."""

    probs: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.probs) != SIGMA_SET:
            missing = SIGMA_SET - set(self.probs)
            extra = set(self.probs) - SIGMA_SET
            raise ValidationError(
                f"distribution must cover the 20 residues exactly "
                f"(missing={sorted(missing)}, extra={sorted(extra)})"
            )
        total = sum(self.probs.values())
        if any(p < 0 for p in self.probs.values()):
            raise ValidationError("probabilities must be non-negative")
        if not (1 - 1e-3 <= total <= 1 + 1e-3):
            raise ValidationError(f"probabilities sum to {total}, not ~1")

    def __getitem__(self, aa: str) -> float:
        return self.probs[aa]


MASP_BACKGROUND = BackgroundDistribution(dict(MASP_BACKGROUND_FREQ))


def background_frequencies(corpus) -> BackgroundDistribution:
    """Pool residue counts over a corpus of sequences into a distribution."""
    counts = {aa: 0 for aa in SIGMA}
    total = 0
    for seq in corpus:
        for ch in str(seq):
            if ch not in SIGMA_SET:
                raise ValidationError(f"invalid residue {ch!r} in corpus")
            counts[ch] += 1
            total += 1
    if total == 0:
        raise EmptyInputError("corpus has no residues")
    return BackgroundDistribution({aa: counts[aa] / total for aa in SIGMA})


def build_uniprot_url(taxonomy_id: int, annotation_scores) -> str:
    """The UniProtKB stream URL for compressed FASTA of one taxon, filtered
    by annotation score (one OR clause per score)."""
    clauses = " OR ".join(f"annotation_score:{s}" for s in annotation_scores)
    query = f"(taxonomy_id:{taxonomy_id}) AND ({clauses})"
    return f"{UNIPROT_STREAM_BASE}?compressed=true&format=fasta&query={query}"


def _read_uniprot_payload(url: str, fixture_path=None, timeout: float = 60.0) -> bytes:
    if fixture_path is not None:
        with open(fixture_path, "rb") as fh:
            return fh.read()
    cache_dir = os.environ.get(CACHE_ENV_VAR)
    cache_file = None
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        digest = hashlib.sha256(url.encode("utf-8")).hexdigest()[:24]
        cache_file = os.path.join(cache_dir, f"uniprot-{digest}.fasta.gz")
        if os.path.exists(cache_file):
            with open(cache_file, "rb") as fh:
                return fh.read()
    request_url = url.replace(" ", "%20")
    try:
        with urllib.request.urlopen(request_url, timeout=timeout) as resp:
            payload = resp.read()
    except urllib.error.HTTPError as exc:
        raise NetworkError(f"UniProt fetch failed: HTTP {exc.code}", status=exc.code) from exc
    except (urllib.error.URLError, OSError, TimeoutError) as exc:
        raise NetworkError(f"UniProt fetch failed: {exc}") from exc
    if cache_file:
        tmp = cache_file + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, cache_file)
    return payload


def fetch_uniprot(taxonomy_id: int, annotation_scores, dest_path,
                  fixture_path=None, timeout: float = 60.0) -> int:
    """Download (or read from fixture/cache), validate and canonicalize a
    UniProt FASTA stream; returns the record count.

    The destination is written atomically (temp file + rename) so a failed
    fetch leaves no partial file. Duplicate records are preserved.
    """
    url = build_uniprot_url(taxonomy_id, annotation_scores)
    payload = _read_uniprot_payload(url, fixture_path=fixture_path, timeout=timeout)
    try:
        text = gzip.decompress(payload)
    except (OSError, EOFError) as exc:
        raise FormatError(f"payload is not valid gzip: {exc}") from exc
    records = parse_fasta(text)
    tmp = str(dest_path) + ".tmp"
    write_fasta(records, tmp)
    os.replace(tmp, dest_path)
    return len(records)


def write_properties_tsv(rows, path=None) -> str:
    """Render (id, PropertyVector) rows as the canonical properties TSV."""
    lines = ["\t".join(TSV_HEADER)]
    for rid, vec in rows:
        lines.append("\t".join([str(rid)] + [repr(x) for x in vec.values()]))
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def read_properties_tsv(path_or_text) -> list[tuple[str, PropertyVector]]:
    """Parse a properties TSV (header row enforced, decimal-point floats)."""
    if isinstance(path_or_text, str) and "\t" in path_or_text:
        text = path_or_text
    else:
        with open(path_or_text, "r", encoding="utf-8") as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("properties TSV is empty")
    header = tuple(lines[0].rstrip("\n").split("\t"))
    if header != TSV_HEADER:
        raise FormatError(
            f"bad TSV header: expected {list(TSV_HEADER)}, got {list(header)}"
        )
    rows: list[tuple[str, PropertyVector]] = []
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) != len(TSV_HEADER):
            raise FormatError(f"row has {len(parts)} columns: {ln!r}")
        try:
            vec = PropertyVector.from_values([float(x) for x in parts[1:]])
        except ValueError as exc:
            raise FormatError(f"non-numeric value in row {parts[0]!r}: {exc}") from None
        rows.append((parts[0], vec))
    return rows


def load_labeled_records(tsv_path, fasta_path) -> list[LabeledRecord]:
    """Join a properties TSV with a FASTA on record id."""
    props = dict(read_properties_tsv(tsv_path))
    with open(fasta_path, "rb") as fh:
        seqs = parse_fasta(fh.read())
    seq_by_id = {}
    for header, seq in seqs:
        seq_by_id[header.split()[0]] = seq
    records = []
    for rid, vec in props.items():
        if rid not in seq_by_id:
            raise ValidationError(f"id {rid!r} in TSV has no FASTA record")
        records.append(LabeledRecord(rid, seq_by_id[rid], vec))
    return records
