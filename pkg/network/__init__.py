"""Dual-stream writer identification network."""

from network.config import ConfigError, FreezeMask, ModelConfig
from network.dual_stream import DualStreamNetwork, ForwardResult, FreezeError, StateDictError

__all__ = ['ConfigError', 'DualStreamNetwork', 'ForwardResult', 'FreezeError', 'FreezeMask', 'ModelConfig',
           'StateDictError']
