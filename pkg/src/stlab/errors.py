"""Exception taxonomy shared across the lab.

The CLI maps these onto exit codes: config/data problems exit 2,
numeric failures exit 3.
"""


class StlabError(Exception):
    pass


class ShapeError(StlabError):
    """Operand shapes or widths do not satisfy an operation's contract."""


class VocabError(StlabError):
    """Unknown symbol or id for a vocabulary."""


class ConfigError(StlabError):
    """Bad key, value, or combination in a configuration."""


class DataFormatError(StlabError):
    """Corrupt, truncated, or version-mismatched data file."""


class NumericError(StlabError):
    """Non-finite value where a finite one is required."""


class InfeasibleAlignmentError(StlabError):
    """CTC label sequence cannot be aligned within the given frame count."""
