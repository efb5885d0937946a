"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration/shape/domain problems are
validation failures (exit 1), non-finite numerics are numeric failures
(exit 2).
"""


class MeshflowError(Exception):
    """Base class for all package errors."""


class ShapeError(MeshflowError):
    """Operand dimensions do not agree; the message names both shapes."""


class ConfigurationError(MeshflowError):
    """Invalid configuration value, file format, or incompatible sizes."""


class DomainError(MeshflowError):
    """A value lies outside the mathematical domain of an operation."""


class AlignmentError(MeshflowError):
    """Point sets too degenerate for similarity alignment."""


class EvaluationError(MeshflowError):
    """An evaluation produced non-finite values or otherwise failed numerically."""
