"""
Custom exceptions for TokenGate.
"""

from typing import Optional


class TokenGateError(Exception):
    """Base exception for TokenGate."""
    pass


class ConfigError(TokenGateError):
    """Raised when shapes, dimensions or parameters are inconsistent."""
    pass


class InputError(TokenGateError):
    """Raised when inputs (masks, datasets, paths) cannot be used together."""
    pass


class FormatError(TokenGateError):
    """Raised when a GDS1/GCK1 container is malformed."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)


class NumericalError(TokenGateError):
    """Raised on divergence or non-finite gradients."""

    def __init__(self, message: str, epoch: Optional[int] = None,
                 batch: Optional[int] = None, group: Optional[str] = None):
        self.epoch = epoch
        self.batch = batch
        self.group = group
        where = [f"{k} {v}" for k, v in (("epoch", epoch), ("batch", batch)) if v is not None]
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class EvaluationError(TokenGateError):
    """Raised when a function under gradient check returns a non-finite value."""

    def __init__(self, message: str, param_index: int):
        self.param_index = param_index
        super().__init__(f"{message} (parameter {param_index})")


class ContractViolation(TokenGateError):
    """Raised when a value breaks an invariant that upstream code guarantees."""
    pass
