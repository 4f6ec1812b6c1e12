"""Exception hierarchy shared across the toolkit.

``UserError`` subclasses map to CLI exit code 2 (bad input or config),
everything else that escapes maps to exit code 3 (runtime failure).
"""


class LegalSeqError(Exception):
    """Base class for all toolkit errors."""


class UserError(LegalSeqError):
    """Caller-side problem: bad file, bad config, bad arguments."""


class CorpusFormatError(UserError):
    """Corpus file does not parse (malformed JSON, wrong record shape)."""


class CorpusIntegrityError(UserError):
    """Offsets or surfaces inconsistent with the raw document text."""


class LabelError(UserError):
    """Annotation uses a label string missing from the label set."""


class AlignmentError(UserError):
    """Span boundary does not align with token boundaries (strict policy)."""


class ConfigError(UserError):
    """Invalid configuration value, unknown preset, or unknown backend."""


class ContractError(LegalSeqError):
    """Programming-contract violation: shape or length mismatch."""


class TrainingAborted(LegalSeqError):
    """Training stopped on a non-finite loss or an unwritable checkpoint."""
