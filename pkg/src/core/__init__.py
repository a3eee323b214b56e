"""
Core module for TokenGate
=========================
"""

from .exceptions import (
    TokenGateError, ConfigError, InputError, FormatError, NumericalError, EvaluationError, ContractViolation
)
from .tensor import Tensor, Module, Precision
from .pipeline import GuidedSegmenter, Mode
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint

__all__ = [
    'TokenGateError', 'ConfigError', 'InputError', 'FormatError', 'NumericalError', 'EvaluationError',
    'ContractViolation',
    'Tensor', 'Module', 'Precision',
    'GuidedSegmenter', 'Mode',
    'Checkpoint', 'load_checkpoint', 'save_checkpoint',
]
