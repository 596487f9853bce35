"""Exception hierarchy.

Data problems (bad files, inconsistent dimensions, impossible alignments)
derive from :class:`DataError`; numerical breakdowns derive from
:class:`NumericalError`. The command line maps them to distinct exit codes.
"""


class HSHMMError(Exception):
    pass


class DataError(HSHMMError, ValueError):
    pass


class FeatureError(DataError):
    pass


class ArchiveError(DataError):
    pass


class BadMagicError(ArchiveError):
    pass


class TruncatedRecordError(ArchiveError):
    pass


class DimensionMismatchError(DataError):
    pass


class AlignmentError(DataError):
    pass


class InfeasibleAlignmentError(DataError):
    pass


class NumericalError(HSHMMError, ArithmeticError):
    pass
