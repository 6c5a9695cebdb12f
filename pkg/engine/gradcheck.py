"""
Finite-difference verification of analytic gradients.
"""

import logging
from typing import Callable, Optional, Sequence, Union

import numpy as np

from engine.rng import Rng
from engine.tensor import Parameter, Tape, Tensor, precision

logger = logging.getLogger(__name__)


def grad_check(fn: Callable[[], Tensor], inputs: Sequence[Union[Tensor, Parameter]],
               eps: float = 1e-3, max_coords: Optional[int] = None,
               rng: Optional[Rng] = None, fd_dtype=np.float64) -> float:
    """Compare tape gradients of ``fn`` against central differences.

    ``fn`` must rebuild the scalar loss from the current values of ``inputs``
    on every call (re-seeding any dropout it uses). Frozen parameters are
    excluded from the check set. Differences are evaluated in ``fd_dtype``.

    Args:
        fn: zero-argument closure returning a single-element Tensor
        inputs: tensors or parameters to differentiate
        eps (float): half-width of the central difference
        max_coords (int, optional): sample at most this many coordinates per tensor
        rng (Rng, optional): coordinate sampler, required with max_coords

    Returns:
        float: max over coordinates of |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|)
    """
    tensors = []
    for item in inputs:
        if isinstance(item, Parameter):
            if item.frozen:
                continue
            item = item.tensor
        tensors.append(item)

    for tensor in tensors:
        tensor.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    analytic = [t.grad.astype(np.float64) if t.grad is not None else np.zeros(t.shape) for t in tensors]

    worst = 0.0
    with precision(fd_dtype):
        for index, (tensor, grad) in enumerate(zip(tensors, analytic)):
            original = tensor.data
            work = original.astype(fd_dtype)
            coords = np.arange(work.size)
            if max_coords is not None and work.size > max_coords:
                sampler = rng.derive(index) if rng is not None else Rng(0, (index,))
                coords = np.sort(sampler.choice(work.size, size=max_coords, replace=False))
            try:
                tensor.data = work
                for coord in coords:
                    saved = work.flat[coord]
                    work.flat[coord] = saved + eps
                    plus = fn().item()
                    work.flat[coord] = saved - eps
                    minus = fn().item()
                    work.flat[coord] = saved
                    numeric = (plus - minus) / (2.0 * eps)
                    exact = grad.flat[coord]
                    error = abs(exact - numeric) / max(1e-8, abs(exact) + abs(numeric))
                    if error > worst:
                        worst = error
                        logger.debug(f"grad_check: new worst {error:.3e} at {tensor.name or index}[{coord}]")
            finally:
                tensor.data = original
    return worst
