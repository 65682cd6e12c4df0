"""Sequence, structure and prediction analyses: motif scanning, divergence
and distance metrics, physicochemical calculators, secondary-structure
fractions, repeat validity, trend metrics, the two-sample KS test, and the
feature-property correlation matrix.

All functions are pure and embarrassingly parallel over sequences.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources

import numpy as np

from ._tables import (
    ACIDIC_SET,
    BASIC_SET,
    DIWV,
    HELIX_SET,
    NONPOLAR_SET,
    POLAR_SET,
    RESIDUE_MASS,
    SHEET_SET,
    SIGMA,
    SIGMA_SET,
    WATER_MASS,
)
from .errors import ConfigError, EmptyInputError, LengthError, TooShortError, ValidationError

# Motif patterns; matching is a non-overlapping left-to-right scan per motif.
# poly-Ala counts maximal runs of >= 3 alanines (greedy regex == maximal run)
# and its coverage uses the total run characters; fixed-size motifs use
# size * count / length.
MOTIF_PATTERNS = {
    "YGQGG": re.compile("YGQGG"),
    "polyA": re.compile("A{3,}"),
    "GGX": re.compile("GG[A-Z]"),
    "QQ": re.compile("QQ"),
    "GPGXX": re.compile("GPG[A-Z]{2}"),
    "AGQG": re.compile("AGQG"),
    "SV": re.compile("SV"),
}
MOTIF_NAMES = tuple(MOTIF_PATTERNS)

UNDEFINED = None  # marker for metrics with no defined value
KL_PSEUDOCOUNT = 1e-9


@dataclass(frozen=True)
class MotifReport:
    counts: dict[str, int]
    coverages: dict[str, float]

    def feature_vector(self) -> list[float]:
        out = []
        for name in MOTIF_NAMES:
            out.append(float(self.counts[name]))
            out.append(self.coverages[name])
        return out


def count_motifs(seq) -> MotifReport:
    s = str(seq)
    counts: dict[str, int] = {}
    coverages: dict[str, float] = {}
    for name, pattern in MOTIF_PATTERNS.items():
        matched = [m.end() - m.start() for m in pattern.finditer(s)]
        counts[name] = len(matched)
        coverages[name] = (sum(matched) / len(s)) if s else 0.0
    return MotifReport(counts, coverages)


def aa_distribution(seq) -> dict[str, float]:
    """Per-residue frequency of one sequence (all 20 keys present)."""
    s = str(seq)
    if not s:
        raise EmptyInputError("empty sequence")
    counts = {aa: 0 for aa in SIGMA}
    for ch in s:
        if ch not in SIGMA_SET:
            raise ValidationError(f"invalid residue {ch!r}")
        counts[ch] += 1
    return {aa: counts[aa] / len(s) for aa in SIGMA}


def kl_divergence(p, q) -> float:
    """KL(P || Q) in bits over the residue alphabet.

    Both distributions get a 1e-9 pseudo-count on every symbol and are
    renormalized, so near-zero background entries (C, W, H) cannot blow up.
    """
    pd = {aa: float(_dist_get(p, aa)) for aa in SIGMA}
    qd = {aa: float(_dist_get(q, aa)) for aa in SIGMA}
    pt = sum(pd.values()) + 20 * KL_PSEUDOCOUNT
    qt = sum(qd.values()) + 20 * KL_PSEUDOCOUNT
    total = 0.0
    for aa in SIGMA:
        pi = (pd[aa] + KL_PSEUDOCOUNT) / pt
        qi = (qd[aa] + KL_PSEUDOCOUNT) / qt
        total += pi * math.log2(pi / qi)
    return total


def _dist_get(dist, aa):
    if hasattr(dist, "probs"):
        return dist.probs.get(aa, 0.0)
    return dist.get(aa, 0.0)


def hamming_distance(a, b) -> int:
    """Number of differing positions; sequences must have equal length."""
    a, b = str(a), str(b)
    if len(a) != len(b):
        raise LengthError(f"lengths differ: {len(a)} vs {len(b)}")
    return sum(1 for x, y in zip(a, b) if x != y)


def molecular_weight(seq) -> float:
    """Average-mass molecular weight in Da (sum of residue masses + 1 water)."""
    s = str(seq)
    if not s:
        raise EmptyInputError("empty sequence")
    return sum(RESIDUE_MASS[ch] for ch in s) + WATER_MASS


def _load_pka() -> dict:
    with resources.files("silkforge.data").joinpath("pka_bjellqvist.json").open() as fh:
        return json.load(fh)


_PKA = _load_pka()


def net_charge(seq, ph: float) -> float:
    """Henderson-Hasselbalch net charge at a given pH (Bjellqvist pK set)."""
    s = str(seq)
    if not s:
        raise EmptyInputError("empty sequence")
    pos = [("Nterm", _PKA["n_terminus"])]
    neg = [("Cterm", _PKA["c_terminus"])]
    for ch in s:
        if ch in _PKA["positive_side_chains"]:
            pos.append((ch, _PKA["positive_side_chains"][ch]))
        elif ch in _PKA["negative_side_chains"]:
            neg.append((ch, _PKA["negative_side_chains"][ch]))
    charge = sum(1.0 / (1.0 + 10.0 ** (ph - pka)) for _, pka in pos)
    charge -= sum(1.0 / (1.0 + 10.0 ** (pka - ph)) for _, pka in neg)
    return charge


def isoelectric_point(seq, tolerance: float = 1e-4) -> float:
    """pH at which the net charge vanishes (bisection on [0, 14]).

    The charge is strictly decreasing in pH, so the root is unique. Bisection
    runs to interval convergence (not just |charge| < tolerance), so the pH
    itself is accurate even on flat charge curves.
    """
    lo, hi = 0.0, 14.0
    mid = 7.0
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if net_charge(seq, mid) > 0:
            lo = mid
        else:
            hi = mid
    if abs(net_charge(seq, mid)) >= tolerance:
        raise ValueError(f"no pI with |charge| < {tolerance} in [0, 14]")
    return mid


def instability_index(seq) -> float:
    """Guruprasad dipeptide-weight statistic: (10/L) * sum of DIWV terms."""
    s = str(seq)
    if len(s) < 2:
        raise TooShortError("instability index needs at least 2 residues")
    total = sum(DIWV[s[i]][s[i + 1]] for i in range(len(s) - 1))
    return 10.0 / len(s) * total


def ss_fractions(seq) -> tuple[float, float, float]:
    """(helix, sheet, other) residue fractions.

    Helix counts V,I,Y,F,W,L; sheet counts E,M,A,L; other is the fraction in
    neither set. L sits in both sets, so the three need not sum to 1.
    """
    s = str(seq)
    if not s:
        raise EmptyInputError("empty sequence")
    helix = sum(1 for ch in s if ch in HELIX_SET) / len(s)
    sheet = sum(1 for ch in s if ch in SHEET_SET) / len(s)
    other = sum(1 for ch in s if ch not in HELIX_SET and ch not in SHEET_SET) / len(s)
    return helix, sheet, other


@dataclass(frozen=True)
class PhysChemReport:
    length: int
    molecular_weight: float
    isoelectric_point: float
    instability_index: float | None  # None for single-residue sequences
    aa_composition: dict[str, float]
    grouped_composition: dict[str, float]
    ss_helix: float
    ss_sheet: float
    ss_other: float

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "molecular_weight": self.molecular_weight,
            "isoelectric_point": self.isoelectric_point,
            "instability_index": self.instability_index,
            "aa_composition": self.aa_composition,
            "grouped_composition": self.grouped_composition,
            "ss_helix": self.ss_helix,
            "ss_sheet": self.ss_sheet,
            "ss_other": self.ss_other,
        }


def physchem_report(seq) -> PhysChemReport:
    comp = aa_distribution(seq)
    grouped = {
        "nonpolar": sum(comp[aa] for aa in NONPOLAR_SET),
        "polar": sum(comp[aa] for aa in POLAR_SET),
        "acidic": sum(comp[aa] for aa in ACIDIC_SET),
        "basic": sum(comp[aa] for aa in BASIC_SET),
    }
    helix, sheet, other = ss_fractions(seq)
    s = str(seq)
    return PhysChemReport(
        length=len(s),
        molecular_weight=molecular_weight(s),
        isoelectric_point=isoelectric_point(s),
        instability_index=instability_index(s) if len(s) >= 2 else None,
        aa_composition=comp,
        grouped_composition=grouped,
        ss_helix=helix,
        ss_sheet=sheet,
        ss_other=other,
    )


class RepeatValidity(Enum):
    VALID = "valid"
    PREFIX_FLAGGED = "prefix-flagged"
    SUFFIX_FLAGGED = "suffix-flagged"
    BOTH_FLAGGED = "both-flagged"


def repeat_validity(seq, window: int = 30, threshold: float = 0.25) -> RepeatValidity:
    """Sliding-window A+G density check for non-repeat prefixes/suffixes.

    Windows whose combined alanine+glycine density falls below the threshold
    are suspect; maximal suspect blocks touching the start or end flag a
    non-repeat prefix or suffix. Defaults (30, 0.25) are desk calibration
    constants, not published values.
    """
    s = str(seq)
    if window > len(s):
        raise ConfigError(f"window {window} exceeds sequence length {len(s)}")
    if window < 1:
        raise ConfigError("window must be >= 1")
    ag = [1 if ch in "AG" else 0 for ch in s]
    run = sum(ag[:window])
    below = [run / window < threshold]
    for i in range(1, len(s) - window + 1):
        run += ag[i + window - 1] - ag[i - 1]
        below.append(run / window < threshold)
    prefix = 0
    while prefix < len(below) and below[prefix]:
        prefix += 1
    suffix = 0
    while suffix < len(below) and below[len(below) - 1 - suffix]:
        suffix += 1
    if prefix == len(below):
        return RepeatValidity.BOTH_FLAGGED
    if prefix and suffix:
        return RepeatValidity.BOTH_FLAGGED
    if prefix:
        return RepeatValidity.PREFIX_FLAGGED
    if suffix:
        return RepeatValidity.SUFFIX_FLAGGED
    return RepeatValidity.VALID


def _rank_average(x: np.ndarray) -> np.ndarray:
    """Average ranks (1-based) with ties sharing their mean rank."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def pearson(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.std() == 0.0 or b.std() == 0.0:
        return UNDEFINED
    am, bm = a - a.mean(), b - b.mean()
    return float((am * bm).sum() / math.sqrt((am * am).sum() * (bm * bm).sum()))


def spearman(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return pearson(_rank_average(a), _rank_average(b))


@dataclass(frozen=True)
class TrendReport:
    """The six trend statistics over flattened predicted vs reference values;
    undefined entries (zero variance, zero norm) are None."""

    pearson_r: float | None
    spearman_rho: float | None
    mae: float
    rmse: float
    r_squared: float | None
    cosine: float | None
    per_property: dict[str, dict] | None = None

    def to_dict(self) -> dict:
        d = {
            "pearson_r": self.pearson_r,
            "spearman_rho": self.spearman_rho,
            "mae": self.mae,
            "rmse": self.rmse,
            "r_squared": self.r_squared,
            "cosine": self.cosine,
        }
        if self.per_property is not None:
            d["per_property"] = self.per_property
        return d


def _trend_flat(pred: np.ndarray, ref: np.ndarray) -> dict:
    err = pred - ref
    mae = float(np.abs(err).mean())
    rmse = float(math.sqrt((err * err).mean()))
    r = pearson(pred, ref)
    rho = spearman(pred, ref)
    ss_tot = float(((ref - ref.mean()) ** 2).sum())
    r2 = UNDEFINED if ss_tot == 0.0 else float(1.0 - (err * err).sum() / ss_tot)
    na, nb = float(np.linalg.norm(pred)), float(np.linalg.norm(ref))
    cos = UNDEFINED if na == 0.0 or nb == 0.0 else float(pred.ravel() @ ref.ravel() / (na * nb))
    return {"pearson_r": r, "spearman_rho": rho, "mae": mae, "rmse": rmse,
            "r_squared": r2, "cosine": cos}


def trend_metrics(pred, ref, property_names=None) -> TrendReport:
    """Compare predicted vs reference property matrices (rows = records)."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise LengthError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    if pred.ndim == 1:
        pred, ref = pred[:, None], ref[:, None]
    if pred.shape[0] < 2:
        raise ValidationError("trend metrics need at least 2 rows")
    flat = _trend_flat(pred.ravel(), ref.ravel())
    per_property = None
    if property_names is not None:
        if len(property_names) != pred.shape[1]:
            raise LengthError("one property name per column required")
        per_property = {
            name: _trend_flat(pred[:, j], ref[:, j])
            for j, name in enumerate(property_names)
        }
    return TrendReport(per_property=per_property, **flat)


def _kolmogorov_q(lam: float) -> float:
    """Asymptotic Kolmogorov survival function Q(lambda)."""
    if lam < 1e-8:
        return 1.0
    total = 0.0
    for k in range(1, 101):
        term = 2.0 * (-1.0) ** (k - 1) * math.exp(-2.0 * k * k * lam * lam)
        total += term
        if abs(term) < 1e-12:
            break
    return min(1.0, max(0.0, total))


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample KS statistic D = sup |ECDF_a - ECDF_b| and asymptotic p.

    p = Q(sqrt(n_e) * D) with effective n_e = n_a*n_b/(n_a+n_b).
    """
    a = np.asarray(list(a), dtype=np.float64)
    b = np.asarray(list(b), dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise EmptyInputError("both samples must be non-empty")
    a_sorted = np.sort(a)
    b_sorted = np.sort(b)
    grid = np.concatenate([a_sorted, b_sorted])
    cdf_a = np.searchsorted(a_sorted, grid, side="right") / a.size
    cdf_b = np.searchsorted(b_sorted, grid, side="right") / b.size
    d = float(np.abs(cdf_a - cdf_b).max())
    n_e = a.size * b.size / (a.size + b.size)
    p = _kolmogorov_q(math.sqrt(n_e) * d)
    return d, p


PROPERTY_COLUMNS = ("toughness", "youngs_modulus", "strength", "strain_at_break")


def feature_property_correlation(sequences, properties) -> tuple[list[str], np.ndarray]:
    """Pearson correlation of {count, coverage} x 7 motifs against the four
    mechanical properties.

    `properties` is an array-like [n, 4] in PROPERTY_COLUMNS order. Returns
    (row labels, 14 x 4 matrix with NaN for undefined cells).
    """
    sequences = list(sequences)
    props = np.asarray(properties, dtype=np.float64)
    if len(sequences) < 3:
        raise ValidationError("correlation needs at least 3 records")
    if props.shape != (len(sequences), len(PROPERTY_COLUMNS)):
        raise LengthError(
            f"properties must be [{len(sequences)} x {len(PROPERTY_COLUMNS)}], got {props.shape}"
        )
    features = np.asarray(
        [count_motifs(s).feature_vector() for s in sequences], dtype=np.float64
    )
    labels = []
    for name in MOTIF_NAMES:
        labels.append(f"{name}_count")
        labels.append(f"{name}_coverage")
    matrix = np.full((features.shape[1], props.shape[1]), np.nan)
    for i in range(features.shape[1]):
        for j in range(props.shape[1]):
            r = pearson(features[:, i], props[:, j])
            if r is not None:
                matrix[i, j] = r
    return labels, matrix


def correlation_tsv(labels, matrix) -> str:
    """Labeled TSV rendering of the feature-property matrix (NA = undefined)."""
    lines = ["\t".join(("feature",) + PROPERTY_COLUMNS)]
    for label, row in zip(labels, matrix):
        cells = ["NA" if math.isnan(x) else repr(float(x)) for x in row]
        lines.append("\t".join([label] + cells))
    return "\n".join(lines) + "\n"
