"""Exception and warning classes shared by every fairaug module.

The CLI maps exception families onto exit codes:

* :class:`ValidationError` -> 1
* ``OSError`` (including :class:`MaskUnreadable`) -> 2
* :class:`InvariantViolation` -> 3
"""


class FairAugError(Exception):
    """Base class for all fairaug errors."""


class ValidationError(FairAugError, ValueError):
    """Input data or arguments violate a documented precondition."""


class InvariantViolation(FairAugError):
    """An internal post-condition failed. Always a bug."""


# -- manifest ---------------------------------------------------------------

class ManifestError(ValidationError):
    """A manifest file could not be turned into valid records.

    ``row`` is the 1-based data row (header excluded) or ``None`` for
    file-level problems. ``issues`` holds every problem found in the file,
    this one included, so callers can report all of them at once.
    """

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row
        self.issues = [self]


class MissingColumn(ManifestError):
    pass


class UnparsableValue(ManifestError):
    def __init__(self, row, field, value):
        super().__init__(f"cannot parse {field}={value!r}", row)
        self.field = field
        self.value = value


class InvalidValue(ManifestError):
    pass


class DuplicateSubjectId(ManifestError):
    pass


class FrameIndexOutOfRange(ManifestError):
    pass


class EmptyManifest(ValidationError):
    pass


# -- stratify ---------------------------------------------------------------

class EmptyCell(ValidationError):
    pass


class SampleLargerThanPopulation(ValidationError):
    pass


class NoDonorInGroup(ValidationError):
    pass


# -- preprocess -------------------------------------------------------------

class InsufficientSlices(ValidationError):
    pass


class TemporalBoundary(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class InvalidSide(ValidationError):
    pass


# -- radiomics --------------------------------------------------------------

class MaskTooSmall(ValidationError):
    pass


class NoValidPairs(ValidationError):
    pass


class EmptyStructure(ValidationError):
    pass


# -- frd --------------------------------------------------------------------

class ReferenceTooSmall(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


class NotSymmetric(ValidationError):
    pass


class IndefiniteBeyondTolerance(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


# -- fairmetrics ------------------------------------------------------------

class SingleClass(ValidationError):
    pass


class TooFewGroups(ValidationError):
    pass


class JoinFailure(ValidationError):
    def __init__(self, subject_id):
        super().__init__(f"prediction subject {subject_id!r} not found in manifest")
        self.subject_id = subject_id


class BootstrapFailure(ValidationError):
    pass


# -- genbridge --------------------------------------------------------------

class NotEnoughSynthetic(ValidationError):
    def __init__(self, needed, available, shortfall):
        super().__init__(
            f"need {needed} synthetic records, only {available} available; "
            f"shortfall per group: {shortfall}"
        )
        self.shortfall = shortfall


class AllOutputsMissing(ValidationError):
    pass


class MaskUnreadable(FairAugError, OSError):
    pass


# -- warnings ---------------------------------------------------------------

class DiagnosticWarning(UserWarning):
    """Non-fatal condition worth surfacing (degenerate data, tiny groups)."""


class DegenerateRange(DiagnosticWarning):
    pass


class SmallSampleWarning(DiagnosticWarning):
    pass


class UndefinedRateWarning(DiagnosticWarning):
    pass
