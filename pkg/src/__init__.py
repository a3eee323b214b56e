"""
Src module for TokenGate
========================

Import subpackages directly, e.g. ``from src.core.pipeline import GuidedSegmenter``.
"""

from . import core
from . import utils

__all__ = ['core', 'utils']
