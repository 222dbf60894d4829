"""Named error types.

Every validation failure in the package maps to one of these; callers never see a
half-constructed object or a bare ValueError from the public API.
"""


class LongtopicError(Exception):
    """Base class for all package errors."""


class DuplicateDocument(LongtopicError):
    """The same (subject, stage) cell appears more than once."""


class MissingDocument(LongtopicError):
    """A (subject, stage) cell has no document and missing cells are not allowed."""


class VocabMismatch(LongtopicError):
    """A word index falls outside the vocabulary, or vocabularies differ."""


class MissingLabel(LongtopicError):
    """A subject appearing in the documents has no group label."""


class FormatError(LongtopicError):
    """A file or record is structurally malformed."""


class IoError(LongtopicError):
    """A filesystem read or write failed or was refused."""


class ShapeError(LongtopicError):
    """Array dimensions do not match the declared layout."""


class NumericError(LongtopicError):
    """Non-finite input or a nonpositive scale where positivity is required."""


class UnknownDistance(LongtopicError):
    """Unrecognized group-distance kind."""


class DivergedError(LongtopicError):
    """Training loss became non-finite."""


class TooManyTopics(LongtopicError):
    """Exhaustive topic alignment is limited to K <= 8."""


class DegenerateDesign(LongtopicError):
    """Too few samples to fit the group probe."""


class ConfigError(LongtopicError):
    """Invalid or incomplete experiment configuration."""
