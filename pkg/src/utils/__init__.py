"""
Utils module for TokenGate
==========================
"""

from .config import (
    ConfigManager, EncoderConfig, LoraConfig, TokenBookConfig, UNetConfig, LossConfig, SynthConfig, TrainConfig
)

__all__ = [
    'ConfigManager', 'EncoderConfig', 'LoraConfig', 'TokenBookConfig', 'UNetConfig', 'LossConfig',
    'SynthConfig', 'TrainConfig'
]
