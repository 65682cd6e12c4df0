"""Character-level vocabulary with task/separator/property-bin tokens and
construction of direction-tagged training examples.

Layout of the id space (dense, contiguous from 0):
    0..19   residue tokens in canonical alphabet order
    20      <EOS> (and <PAD>, which aliases the same id)
    21      <GenerateSequence>   22  <EstimateProperty>   23  <SEP>
    24..124 property-bin tokens B000..B100
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from ._tables import SIGMA
from .errors import DecodeError, StateError, ValidationError
from .seqdata import PropertyVector

EOS_TOKEN = "<EOS>"
PAD_TOKEN = "<PAD>"
TASK_GEN = "<GenerateSequence>"
TASK_EST = "<EstimateProperty>"
SEP_TOKEN = "<SEP>"
N_BINS = 101
N_PROPERTIES = 8
MAX_LEN = 512

GENERATE = "generate"
ESTIMATE = "estimate"

# tokens besides the sequence itself in either layout:
# generate: TASK + 8 bins + SEP + ... + EOS;  estimate: TASK + ... + SEP + 8 bins + EOS
LAYOUT_OVERHEAD = 1 + N_PROPERTIES + 1 + 1


class Vocabulary:
    """Fixed, deterministic token-to-id map; PAD aliases EOS."""

    def __init__(self):
        ids: dict[str, int] = {}
        for i, aa in enumerate(SIGMA):
            ids[aa] = i
        ids[EOS_TOKEN] = len(SIGMA)
        ids[PAD_TOKEN] = ids[EOS_TOKEN]
        ids[TASK_GEN] = len(SIGMA) + 1
        ids[TASK_EST] = len(SIGMA) + 2
        ids[SEP_TOKEN] = len(SIGMA) + 3
        first_bin = len(SIGMA) + 4
        for b in range(N_BINS):
            ids[f"B{b:03d}"] = first_bin + b
        self._ids = ids
        self._tokens = {}
        for tok, i in ids.items():
            if tok != PAD_TOKEN:
                self._tokens[i] = tok
        self.eos_id = ids[EOS_TOKEN]
        self.pad_id = ids[PAD_TOKEN]
        self.task_gen_id = ids[TASK_GEN]
        self.task_est_id = ids[TASK_EST]
        self.sep_id = ids[SEP_TOKEN]
        self.bin_range = (first_bin, first_bin + N_BINS - 1)

    @property
    def size(self) -> int:
        return len(self._tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise DecodeError(f"unknown token {token!r}") from None

    def token_of(self, idx: int) -> str:
        try:
            return self._tokens[idx]
        except KeyError:
            raise DecodeError(f"unknown token id {idx}") from None

    def is_bin(self, idx: int) -> bool:
        return self.bin_range[0] <= idx <= self.bin_range[1]

    def encode_sequence(self, seq) -> list[int]:
        """Residue string -> token ids (bijective on residues)."""
        return [self.id_of(ch) for ch in str(seq)]

    def decode_tokens(self, ids) -> str:
        """Token ids -> residue string; stops at EOS, skips other specials."""
        out = []
        for raw in ids:
            i = int(raw)
            tok = self.token_of(i)
            if i == self.eos_id:
                break
            if len(tok) == 1:
                out.append(tok)
        return "".join(out)

    def encode_property_vector(self, v: PropertyVector) -> list[int]:
        """Quantize a normalized vector to 8 bin tokens (bin = round(100 x))."""
        if not v.normalized:
            raise StateError("property vector must be normalized before binning")
        return [self.bin_range[0] + int(round(100.0 * x)) for x in v.values()]

    def decode_property_tokens(self, ids) -> PropertyVector:
        """8 bin tokens -> normalized vector with components bin/100."""
        ids = [int(i) for i in ids]
        if len(ids) != N_PROPERTIES:
            raise DecodeError(f"expected {N_PROPERTIES} bin tokens, got {len(ids)}")
        vals = []
        for i in ids:
            if not self.is_bin(i):
                raise DecodeError(f"token id {i} is not a property bin")
            vals.append((i - self.bin_range[0]) / 100.0)
        return PropertyVector.from_values(vals, normalized=True)

    def to_json(self) -> str:
        return json.dumps(self._ids, indent=0, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        vocab = cls()
        if json.loads(text) != vocab._ids:
            raise ValidationError("serialized vocabulary does not match this build")
        return vocab


@dataclass
class TruncationCounter:
    """Counts silently truncated sequences during example construction."""

    count: int = 0


@dataclass(frozen=True)
class EncodedExample:
    """A padded token stream with its CLM loss mask and direction tag.

    Mask semantics: mask[t] == 1 means token t is a prediction target
    (the loss reads logits at t-1). Padding always carries mask 0.
    """

    ids: tuple[int, ...]
    loss_mask: tuple[int, ...]
    direction: str
    truncated: bool = False

    def __post_init__(self):
        if len(self.ids) != len(self.loss_mask):
            raise ValidationError("mask length must equal token length")
        if len(self.ids) > MAX_LEN:
            raise ValidationError(f"example longer than {MAX_LEN} tokens")


def build_example(direction: str, seq, v: PropertyVector, vocab: Vocabulary,
                  pad_to: int = MAX_LEN,
                  stats: TruncationCounter | None = None) -> EncodedExample:
    """Build one direction-tagged Level-2 example, padded to `pad_to`.

    generate: [TASK_GEN, bins x8, SEP, seq..., EOS, PAD...], loss on seq+EOS
    estimate: [TASK_EST, seq..., SEP, bins x8, EOS, PAD...], loss on bins+EOS

    The sequence segment is right-truncated if needed; task/bin/SEP tokens
    always survive intact.
    """
    if direction not in (GENERATE, ESTIMATE):
        raise ValidationError(f"unknown direction {direction!r}")
    if not 2 + LAYOUT_OVERHEAD <= pad_to <= MAX_LEN:
        raise ValidationError(f"pad_to must be in [{2 + LAYOUT_OVERHEAD}, {MAX_LEN}]")
    seq_ids = vocab.encode_sequence(seq)
    budget = pad_to - LAYOUT_OVERHEAD
    truncated = len(seq_ids) > budget
    if truncated:
        seq_ids = seq_ids[:budget]
        if stats is not None:
            stats.count += 1
    bins = vocab.encode_property_vector(v)

    if direction == GENERATE:
        ids = [vocab.task_gen_id] + bins + [vocab.sep_id] + seq_ids + [vocab.eos_id]
        masked_from = 1 + N_PROPERTIES + 1
        mask = [0] * masked_from + [1] * (len(seq_ids) + 1)
    else:
        ids = [vocab.task_est_id] + seq_ids + [vocab.sep_id] + bins + [vocab.eos_id]
        masked_from = 1 + len(seq_ids) + 1
        mask = [0] * masked_from + [1] * (N_PROPERTIES + 1)

    pad = pad_to - len(ids)
    ids += [vocab.pad_id] * pad
    mask += [0] * pad
    return EncodedExample(tuple(ids), tuple(mask), direction, truncated)


def build_clm_example(seq, vocab: Vocabulary, pad_to: int = MAX_LEN,
                      stats: TruncationCounter | None = None) -> EncodedExample:
    """Unconditional CLM example: [EOS, seq..., EOS, PAD...], loss on seq+EOS.

    The leading EOS doubles as the start anchor, so unconditional sampling
    can prompt with a single EOS token.
    """
    if pad_to < 3 or pad_to > MAX_LEN:
        raise ValidationError(f"pad_to must be in [3, {MAX_LEN}]")
    seq_ids = vocab.encode_sequence(seq)
    budget = pad_to - 2
    truncated = len(seq_ids) > budget
    if truncated:
        seq_ids = seq_ids[:budget]
        if stats is not None:
            stats.count += 1
    ids = [vocab.eos_id] + seq_ids + [vocab.eos_id]
    mask = [0] + [1] * (len(seq_ids) + 1)
    pad = pad_to - len(ids)
    return EncodedExample(tuple(ids + [vocab.pad_id] * pad),
                          tuple(mask + [0] * pad), GENERATE, truncated)
