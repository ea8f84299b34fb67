"""
errors.py

This module defines the exception hierarchy used across the package.

Every error carries an `error` dictionary with a machine readable `code` and a
human readable `description`, plus the process exit code the command line
interface reports when the error escapes a command.

Classes:
- PseudohealError: Base class for all package errors.
- ConfigError: Invalid configuration or schema violation (exit code 2).
- DataError: Unusable or corrupt data (exit code 3).
- ValidationError: Data that violates a domain rule, e.g. a non-binary mask.
- ShapeError: Tensor or array with unexpected dimensions.
- MetricError: A metric that is undefined for the given inputs.
- NumericalError: Numerical failure during training, e.g. a NaN loss (exit code 4).
"""


class PseudohealError(Exception):
    """Base exception for the package."""
    exit_code = 1

    def __init__(self, code, description):
        super().__init__(description)
        self.error = {"code": code, "description": description}

    @property
    def code(self):
        return self.error["code"]

    @property
    def description(self):
        return self.error["description"]


class ConfigError(PseudohealError):
    """Raised when a configuration document or parameter is invalid."""
    exit_code = 2


class DataError(PseudohealError):
    """Raised when input data cannot be used."""
    exit_code = 3


class ValidationError(DataError):
    """Raised when data violates a domain rule."""


class ShapeError(DataError):
    """Raised when a batch does not have the dimensions a network expects."""


class MetricError(DataError):
    """Raised when a metric is undefined for its inputs."""


class NumericalError(PseudohealError):
    """Raised when training or a loss produces non-finite values."""
    exit_code = 4
