"""Sequence labeling for legal documents.

Two systems over the same corpus plumbing: a document-context rhetorical
role classifier (word/sentence/document hierarchy with a CRF output) and
an entity-aware span classifier for legal NER, with their respective
baseline families, a deterministic training harness, and CSV-first
evaluation reports.
"""

__version__ = "0.1.0"

from .corpus import (  # noqa: F401
    CorpusStats,
    Document,
    EntitySpan,
    LabelSet,
    NerExample,
    SentenceSpan,
    TagSequence,
    Token,
    compute_stats,
    from_bio,
    load_ner_corpus,
    load_rr_corpus,
    to_bio,
    tokenize_with_offsets,
)
from .errors import (  # noqa: F401
    AlignmentError,
    ConfigError,
    ContractError,
    CorpusFormatError,
    CorpusIntegrityError,
    LabelError,
    LegalSeqError,
    TrainingAborted,
    UserError,
)
