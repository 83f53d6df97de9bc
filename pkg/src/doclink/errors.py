"""Exception types shared across the package."""


class DoclinkError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(DoclinkError):
    """Operands have incompatible shapes; the message names both."""


class InvalidMaskError(DoclinkError):
    """A softmax mask leaves some row with no admissible entry."""


class ConfigError(DoclinkError):
    """A configuration value is out of its legal range."""


class VocabularyError(DoclinkError):
    """A token id falls outside the vocabulary."""


class SequenceLengthError(DoclinkError):
    """A sentence exceeds the position-embedding capacity."""


class CorpusFormatError(DoclinkError):
    """A corpus file failed to parse; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class CorpusValidationError(DoclinkError):
    """A parsed document violates a structural invariant."""


class DegenerateEmbeddingError(DoclinkError):
    """A representation has zero norm; cosine similarity is undefined."""


class BatchError(DoclinkError):
    """A mini-batch is too small for hard-negative mining."""


class NonFiniteError(DoclinkError):
    """A loss or gradient became NaN or infinite; names the culprit."""


class MissingGoldEdgesError(DoclinkError):
    """Evaluation requires gold edges that a document does not carry."""
