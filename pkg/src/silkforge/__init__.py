"""silkforge: a desk-scale spidroin repeat language-model pipeline.

Stages: teacher-student distillation, LoRA fine-tuning on repeat regions,
and bidirectional sequence/property fine-tuning with cross-validation,
plus the sequence/structure/property evaluation suite and a CLI.
"""

__version__ = "0.1.0"

from .seqdata import (  # noqa: F401
    AminoAcidSequence,
    BackgroundDistribution,
    FoldPlan,
    LabeledRecord,
    MASP_BACKGROUND,
    MinMaxScaler,
    PropertyVector,
    background_frequencies,
    extract_repeat_region,
    fetch_uniprot,
    make_folds,
    parse_fasta,
    write_fasta,
)
from .tokenizer import (  # noqa: F401
    EncodedExample,
    Vocabulary,
    build_clm_example,
    build_example,
)
