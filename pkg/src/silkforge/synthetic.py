"""Synthetic desk-scale corpora: repeat sequences built from poly-Ala blocks
and glycine-rich linkers, non-repeat decoys, and a labeled dataset whose
mechanical properties are exact functions of motif coverage.

These generators exist so the full pipeline can be exercised and validated
end to end without the real silkome data. Repeat lengths stay <= 52 residues
so every Level-2 example fits a 64-token context without truncation.
"""

from __future__ import annotations

import random

from .evalsuite import count_motifs
from .seqdata import AminoAcidSequence, LabeledRecord, PropertyVector

MAX_REPEAT_LEN = 52

_FILLERS = ("GGA", "GGQ", "GGY", "GGS", "QQ", "SV", "AGQG")
_FILLER_WEIGHTS = (6, 4, 3, 2, 1, 1, 2)
# The labeled family additionally uses YQG and PQ fillers: they put Y outside
# YGQGG and P outside GPGXX (neither can complete those motifs), so motif
# coverage there cannot be read off residue composition alone.
_FILLERS_LABELED = _FILLERS + ("PQ", "YQG")
_FILLER_WEIGHTS_LABELED = _FILLER_WEIGHTS + (2, 2)
_GPGXX_TAILS = "GQAYS"

# Non-repeat decoys are built from units too (so they are learnable rather
# than i.i.d. noise). They cover the whole residue alphabet (every embedding
# row sees training) but keep A+G density far below the repeat-validity
# threshold and avoid GG/GPG/poly-A contexts entirely.
_DECOY_UNITS = ("LSE", "QNV", "KDI", "TRF", "EEL", "VNS", "DKQ",
                "AYD", "GPK", "WME", "HCT", "RGL")
_DECOY_WEIGHTS = (6, 5, 4, 2, 3, 2, 2, 2, 2, 1, 1, 2)

# Property maps: toughness is a clipped affine function of YGQGG coverage,
# strain at break an affine function of GPGXX coverage (chosen so the clip
# never binds for strain at realizable coverages). Every other component is
# an affine function of a DIFFERENT motif coverage (or of length), so all
# eight slots demand sequence reading and none can be produced by copying a
# neighboring slot.
TOUGHNESS_SLOPE, TOUGHNESS_OFFSET = 1.6, 0.05
STRAIN_SLOPE, STRAIN_OFFSET = 2.0, 0.1
_AUX_MAPS = (
    ("sd_toughness", "polyA", 1.4, 0.05),
    ("strength", "GGX", 1.2, 0.05),
    ("sd_strength", "QQ", 6.0, 0.05),
    ("youngs_modulus", "AGQG", 4.0, 0.05),
    ("sd_youngs_modulus", "SV", 6.0, 0.05),
)
LENGTH_SPAN = (30.0, 54.0)  # sd_strain encodes normalized sequence length


def _polya(rng: random.Random) -> str:
    return "A" * rng.randint(3, 5)


def _gpgxx(rng: random.Random) -> str:
    return "GPG" + "".join(rng.choice(_GPGXX_TAILS) for _ in range(2))


def make_repeat(rng: random.Random, y_units: int, p_units: int) -> AminoAcidSequence:
    """One synthetic repeat with roughly y_units YGQGG and p_units GPGXX
    occurrences (realized coverage is recomputed by the caller)."""
    target = rng.randint(34, MAX_REPEAT_LEN)
    queue = ["YGQGG"] * y_units + [_gpgxx(rng) for _ in range(p_units)]
    rng.shuffle(queue)
    seq = _polya(rng)
    while queue or len(seq) < target:
        unit = queue.pop() if queue else rng.choices(_FILLERS, _FILLER_WEIGHTS)[0]
        seq += unit
        if rng.random() < 0.25:
            seq += _polya(rng)
        if len(seq) >= MAX_REPEAT_LEN:
            break
    return AminoAcidSequence(seq[:MAX_REPEAT_LEN])


LABELED_LEN = 48


def make_labeled_repeat(rng: random.Random, y_units: int, p_units: int) -> AminoAcidSequence:
    """Fixed-length repeat for the labeled dataset: coverage then has the
    same discrete support as the motif count, which keeps the bin targets
    well-populated at desk-scale dataset sizes."""
    queue = ["YGQGG"] * y_units + [_gpgxx(rng) for _ in range(p_units)]
    rng.shuffle(queue)
    seq = _polya(rng)
    while queue or len(seq) < LABELED_LEN:
        unit = (queue.pop() if queue
                else rng.choices(_FILLERS_LABELED, _FILLER_WEIGHTS_LABELED)[0])
        seq += unit
        if rng.random() < 0.2:
            seq += _polya(rng)
        if not queue and len(seq) >= LABELED_LEN:
            break
    if len(seq) < LABELED_LEN:
        seq += "G" * (LABELED_LEN - len(seq))
    return AminoAcidSequence(seq[:LABELED_LEN])


def make_repeat_iid(rng: random.Random) -> AminoAcidSequence:
    """A repeat whose units are drawn independently per slot (no per-sequence
    latent intensity), so a causal LM can match its motif statistics."""
    target = rng.randint(32, 48)
    seq = _polya(rng)
    while len(seq) < target:
        r = rng.random()
        if r < 0.20:
            seq += _polya(rng)
        elif r < 0.32:
            seq += "YGQGG"
        elif r < 0.42:
            seq += _gpgxx(rng)
        else:
            seq += rng.choices(_FILLERS, _FILLER_WEIGHTS)[0]
    return AminoAcidSequence(seq[:MAX_REPEAT_LEN])


def make_nonrepeat(rng: random.Random) -> AminoAcidSequence:
    """A decoy with globular-protein-like composition (no A or G)."""
    target = rng.randint(30, 60)
    seq = ""
    while len(seq) < target:
        seq += rng.choices(_DECOY_UNITS, _DECOY_WEIGHTS)[0]
    return AminoAcidSequence(seq[:60])


def build_repeat_corpus(n: int, seed: int) -> list[AminoAcidSequence]:
    """Unlabeled repeats from the labeled family (Level-1 ahead of the
    sequence-property stage)."""
    rng = random.Random(seed)
    return [make_labeled_repeat(rng, rng.randint(0, 4), rng.randint(0, 3))
            for _ in range(n)]


def build_broad_repeat_corpus(n: int, seed: int) -> list[AminoAcidSequence]:
    """Variable-length i.i.d.-unit repeats (generation-fidelity experiments
    and the repeat share of the Stage-1 corpus)."""
    rng = random.Random(seed)
    return [make_repeat_iid(rng) for _ in range(n)]


def build_distill_corpus(n: int, seed: int,
                         repeat_fraction: float = 0.5) -> list[AminoAcidSequence]:
    """Mixed broad corpus (repeats + decoys) for Stage-1 training."""
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        if rng.random() < repeat_fraction:
            out.append(make_repeat_iid(rng))
        else:
            out.append(make_nonrepeat(rng))
    rng.shuffle(out)
    return out


def properties_for(seq) -> PropertyVector:
    """Deterministic property labels from realized motif coverages.

    toughness <- YGQGG coverage (clipped affine) and strain <- GPGXX coverage
    (affine, clip never binds) are the learnability yardsticks; the other six
    slots map other motif coverages and the sequence length.
    """
    cov = count_motifs(seq).coverages
    clip = lambda x: min(1.0, max(0.0, x))
    fields = {
        "toughness": clip(TOUGHNESS_SLOPE * cov["YGQGG"] + TOUGHNESS_OFFSET),
        "strain_at_break": clip(STRAIN_SLOPE * cov["GPGXX"] + STRAIN_OFFSET),
    }
    for field, motif, slope, offset in _AUX_MAPS:
        fields[field] = clip(slope * cov[motif] + offset)
    lo, hi = LENGTH_SPAN
    fields["sd_strain_at_break"] = clip((len(seq) - lo) / (hi - lo))
    return PropertyVector(**fields)


def build_labeled_records(n: int, seed: int) -> list[LabeledRecord]:
    """The labeled synthetic dataset: all components learnable, with
    toughness and strain tied to YGQGG/GPGXX coverage per the construction
    above (the two used as the learnability yardstick)."""
    rng = random.Random(seed)
    records = []
    for i in range(n):
        y = rng.randint(0, 4)
        p = rng.randint(0, 3)
        seq = make_labeled_repeat(rng, y, p)
        records.append(LabeledRecord(f"syn{i:04d}", seq, properties_for(seq)))
    return records
