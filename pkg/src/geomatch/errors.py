"""Exception hierarchy.

Every exception carries a short ``category`` string; the CLI prints it to
stderr as ``error[<category>]: <message>`` so failures can be grepped.
"""


class GeomatchError(Exception):
    category = "error"


class DegenerateDenominatorError(GeomatchError, ArithmeticError):
    category = "degenerate-denominator"


class InsufficientMatchesError(GeomatchError, ValueError):
    category = "insufficient-matches"


class DegenerateConfigurationError(GeomatchError, ValueError):
    category = "degenerate-configuration"


class ZeroBaselineError(GeomatchError, ValueError):
    category = "zero-baseline"


class NoConsensusError(GeomatchError):
    category = "no-consensus"


class CheiralityTieError(GeomatchError):
    category = "cheirality-tie"


class DimensionMismatchError(GeomatchError, ValueError):
    category = "dimension-mismatch"


class ShapeMismatchError(GeomatchError, ValueError):
    category = "shape-mismatch"


class InitializationError(GeomatchError):
    category = "initialization-failure"


class CoverageMismatchError(GeomatchError, ValueError):
    category = "coverage-mismatch"


class ConfigError(GeomatchError, ValueError):
    category = "config"


class GridFormatError(GeomatchError, ValueError):
    category = "grid-format"


class MissingInputError(GeomatchError, FileNotFoundError):
    category = "missing-input"


class MalformedCSVError(GeomatchError, ValueError):
    category = "malformed-csv"

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")
