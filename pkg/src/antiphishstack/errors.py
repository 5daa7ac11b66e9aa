"""Exception types shared across the package.

The CLI maps each family onto a stable exit code, so new errors should
subclass one of the four family bases below rather than ``Exception``.
"""
from __future__ import annotations


class AntiPhishError(Exception):
    """Root of every error raised by this package."""


# --- families (drive CLI exit codes) -------------------------------------

class ConfigError(AntiPhishError, ValueError):
    """Invalid experiment or command configuration (exit 2)."""


class DataError(AntiPhishError, ValueError):
    """Unusable input data (exit 3)."""


class NumericError(AntiPhishError, ArithmeticError):
    """Numerical failure during training or inference (exit 4)."""


class SchemaError(AntiPhishError, ValueError):
    """Persisted artifacts disagree with each other or with the input (exit 5)."""


# --- corpus ---------------------------------------------------------------

class EmptyAfterNormalization(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LabelDomainError(ParseError):
    pass


class DegenerateSplit(DataError):
    pass


# --- features -------------------------------------------------------------

class EmptyCorpus(DataError):
    pass


class UnknownToken(KeyError):
    """Token absent from a fitted token table.

    Deliberately not a DataError: callers treat it as weight 0.
    """


# --- learners -------------------------------------------------------------

class SingleClassError(DataError):
    pass


class TooFewSamples(DataError):
    pass


class NonFiniteFeature(DataError):
    pass


class ArityMismatch(SchemaError):
    pass


class LengthMismatch(DataError):
    pass


class SchemaMismatch(SchemaError):
    pass


class ShapeMismatch(NumericError, ValueError):
    pass


class NonFiniteActivation(NumericError):
    pass


class NonFiniteUpdate(NumericError):
    pass


class EmptyEvaluation(DataError):
    pass


class StageError(AntiPhishError):
    """Wraps an error raised inside a pipeline stage with the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
