"""Dense tensors, layer ops and reverse-mode differentiation."""

from engine.rng import Rng
from engine.tensor import (DimensionError, EngineError, Parameter, Tape, Tensor, backward,
                           precision)

__all__ = ['Rng', 'DimensionError', 'EngineError', 'Parameter', 'Tape', 'Tensor', 'backward',
           'precision']
