"""Exception and warning types.

Errors split into three families so the CLI can map them onto exit codes:
``ConfigError`` (2), ``DataError`` (3) and everything else deriving from
``AnonError`` (4).
"""


class AnonError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 4


class ConfigError(AnonError):
    exit_code = 2


class DataError(AnonError):
    exit_code = 3


# -- configuration ----------------------------------------------------------

class InvalidConfig(ConfigError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class OutOfRange(ConfigError):
    pass


class GridTooLarge(ConfigError):
    pass


class SetTooLarge(ConfigError):
    pass


class KOutOfRange(ConfigError):
    pass


# -- data -------------------------------------------------------------------

class MissingColumn(DataError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"missing column {column!r}")


class NonNumericFeature(DataError):
    def __init__(self, row, col, value=None):
        self.row = row
        self.col = col
        super().__init__(f"non-numeric feature value {value!r} at row {row}, column {col!r}")


class DuplicateId(DataError):
    def __init__(self, record_id):
        self.record_id = record_id
        super().__init__(f"duplicate record id {record_id!r}")


class EmptyDataset(DataError):
    pass


class DatasetIOError(DataError, OSError):
    pass


class UnknownAttribute(DataError):
    def __init__(self, attribute):
        self.attribute = attribute
        super().__init__(f"unknown attribute {attribute!r}")


class SingleClass(DataError):
    pass


class MisalignedDatasets(DataError):
    pass


class LengthMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class ZeroNormVector(DataError):
    pass


class NotADistribution(DataError):
    pass


class EmptyMembers(DataError):
    pass


# -- runtime ----------------------------------------------------------------

class ModelLacksImportances(AnonError):
    pass


class UntrainedModel(AnonError):
    pass


# -- warnings ---------------------------------------------------------------

class AnonWarning(UserWarning):
    pass


class DegenerateSplit(AnonWarning):
    """A class too small to stratify; the split fell back to unstratified."""


class PurityClamped(AnonWarning):
    """The requested purity could not be met with the available pools."""


class EmptySelection(AnonWarning):
    """Sensitive rejection removed every selected feature."""


class MissingWeight(AnonWarning):
    """An additional attribute had no utility weight; alpha=0 was used."""
