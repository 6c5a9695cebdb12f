"""
Differentiable Layer Operations

Every op takes and returns ``Tensor`` values, computes its forward result with
numpy and, when a tape is active and an input requires a gradient, records a
closure that maps the output gradient back to its inputs. Feature maps are
NHWC; convolutions use the cross-correlation convention (no kernel flip).
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from engine.rng import Rng
from engine.tensor import DimensionError, EngineError, Tensor, check_finite, record

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
PADDING_MODES = ('same', 'valid')


class BatchNormError(EngineError):
    """Raised when batch normalisation cannot run in the requested mode."""


class NormalizationError(EngineError):
    """Raised when a vector with zero length is L2-normalised."""


def _require_rank(op: str, tensor: Tensor, rank: int) -> None:
    if tensor.ndim != rank:
        raise DimensionError(op, 'rank', rank, tensor.ndim)


def _out_size(op: str, size: int, kernel: int, stride: int, padding: str) -> Tuple[int, int, int]:
    """Output extent plus (before, after) zero padding for one spatial axis."""
    if padding not in PADDING_MODES:
        raise ValueError(f"{op}: padding must be one of {PADDING_MODES}, got {padding!r}")
    if padding == 'valid':
        out = (size - kernel) // stride + 1
        if out < 1:
            raise DimensionError(op, 'spatial', f">= {kernel}", size)
        return out, 0, 0
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def _spatial_setup(op: str, x: np.ndarray, kh: int, kw: int, stride: int, padding: str):
    if stride < 1:
        raise ValueError(f"{op}: stride must be positive, got {stride}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(op, 'kernel', 'odd extents', (kh, kw))
    _, height, width, _ = x.shape
    out_h, top, bottom = _out_size(op, height, kh, stride, padding)
    out_w, left, right = _out_size(op, width, kw, stride, padding)
    if top or bottom or left or right:
        x = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    return x, out_h, out_w, top, left


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: str = 'same') -> Tensor:
    """2-D convolution over an NHWC map with a [kh, kw, Cin, Cout] kernel.

    Args:
        x (Tensor): input of shape [N, H, W, Cin]
        weight (Tensor): kernel of shape [kh, kw, Cin, Cout], kh and kw odd
        bias (Tensor, optional): [Cout]
        stride (int): step between output positions
        padding (str): 'same' (zero padded, H' = ceil(H/stride)) or 'valid'

    Returns:
        Tensor: [N, H', W', Cout]
    """
    _require_rank('conv2d', x, 4)
    _require_rank('conv2d', weight, 4)
    kh, kw, cin, cout = weight.shape
    if x.shape[3] != cin:
        raise DimensionError('conv2d', 'channels', cin, x.shape[3])
    if bias is not None and bias.shape != (cout,):
        raise DimensionError('conv2d', 'bias', (cout,), bias.shape)

    batch, height, width, _ = x.shape
    xp, out_h, out_w, top, left = _spatial_setup('conv2d', x.data, kh, kw, stride, padding)

    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :out_h, :out_w]
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, kh * kw * cin)
    w_mat = weight.data.reshape(kh * kw * cin, cout)
    out = cols @ w_mat
    if bias is not None:
        out = out + bias.data
    result = Tensor(out.reshape(batch, out_h, out_w, cout))

    def backward(grad: np.ndarray):
        g2 = grad.reshape(-1, cout)
        grad_w = (cols.T @ g2).reshape(weight.shape) if weight.requires_grad else None
        grad_b = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        grad_x = None
        if x.requires_grad:
            dcols = (g2 @ w_mat.T).reshape(batch, out_h, out_w, kh, kw, cin)
            dxp = np.zeros(xp.shape, dtype=dcols.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * (out_h - 1) + 1:stride,
                        j:j + stride * (out_w - 1) + 1:stride, :] += dcols[:, :, :, i, j, :]
            grad_x = dxp[:, top:top + height, left:left + width, :]
        return grad_x, grad_w, grad_b

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record('conv2d', inputs, result, backward)


def depthwise_conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: str = 'same') -> Tensor:
    """One kh x kw filter per channel; kernel shape [kh, kw, C]."""
    _require_rank('depthwise_conv2d', x, 4)
    _require_rank('depthwise_conv2d', kernel, 3)
    kh, kw, channels = kernel.shape
    if x.shape[3] != channels:
        raise DimensionError('depthwise_conv2d', 'channels', channels, x.shape[3])

    _, height, width, _ = x.shape
    xp, out_h, out_w, top, left = _spatial_setup('depthwise_conv2d', x.data, kh, kw, stride, padding)

    def window(arr, i, j):
        return arr[:, i:i + stride * (out_h - 1) + 1:stride, j:j + stride * (out_w - 1) + 1:stride, :]

    out = np.zeros((x.shape[0], out_h, out_w, channels), dtype=np.result_type(xp, kernel.data))
    for i in range(kh):
        for j in range(kw):
            out += window(xp, i, j) * kernel.data[i, j]
    result = Tensor(out)

    def backward(grad: np.ndarray):
        grad_k = None
        if kernel.requires_grad:
            grad_k = np.empty(kernel.shape, dtype=grad.dtype)
            for i in range(kh):
                for j in range(kw):
                    grad_k[i, j] = (window(xp, i, j) * grad).sum(axis=(0, 1, 2))
        grad_x = None
        if x.requires_grad:
            dxp = np.zeros(xp.shape, dtype=grad.dtype)
            for i in range(kh):
                for j in range(kw):
                    window(dxp, i, j)[...] += grad * kernel.data[i, j]
            grad_x = dxp[:, top:top + height, left:left + width, :]
        return grad_x, grad_k

    return record('depthwise_conv2d', (x, kernel), result, backward)


def separable_conv2d(x: Tensor, depthwise: Tensor, pointwise: Tensor, bias: Optional[Tensor] = None,
                     stride: int = 1, padding: str = 'same') -> Tensor:
    """Depthwise pass followed by a 1x1 pointwise conv2d mixing channels."""
    _require_rank('separable_conv2d', pointwise, 4)
    if pointwise.shape[:2] != (1, 1):
        raise DimensionError('separable_conv2d', 'pointwise kernel', (1, 1), pointwise.shape[:2])
    spatial = depthwise_conv2d(x, depthwise, stride=stride, padding=padding)
    return conv2d(spatial, pointwise, bias, stride=1, padding='same')


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    """Running per-channel statistics; ``None`` until first recorded."""

    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None
    momentum: float = BN_MOMENTUM

    @classmethod
    def initialized(cls, channels: int) -> 'BatchNormState':
        return cls(np.zeros(channels, dtype=np.float32), np.ones(channels, dtype=np.float32))

    @property
    def is_initialized(self) -> bool:
        return self.running_mean is not None and self.running_var is not None

    def update(self, mean: np.ndarray, var: np.ndarray) -> None:
        mean = mean.astype(np.float32)
        var = var.astype(np.float32)
        if not self.is_initialized:
            self.running_mean, self.running_var = mean.copy(), var.copy()
            return
        m = np.float32(self.momentum)
        self.running_mean = m * self.running_mean + (np.float32(1.0) - m) * mean
        self.running_var = m * self.running_var + (np.float32(1.0) - m) * var


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
              mode: str = 'train', eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalisation over every axis but the last.

    Train mode normalises with batch statistics and folds them into ``state``;
    infer mode uses the stored running statistics.
    """
    channels = x.shape[-1]
    if gamma.shape != (channels,):
        raise DimensionError('batchnorm', 'gamma', (channels,), gamma.shape)
    if beta.shape != (channels,):
        raise DimensionError('batchnorm', 'beta', (channels,), beta.shape)
    axes = tuple(range(x.ndim - 1))
    count = x.size // channels

    if mode == 'train':
        if count < 2:
            raise BatchNormError(f"batchnorm: train mode needs at least 2 values per channel, got {count}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.update(mean, var)
    elif mode == 'infer':
        if not state.is_initialized:
            raise BatchNormError("batchnorm: uninitialized statistics (infer mode before any were recorded)")
        mean = state.running_mean
        var = state.running_var
    else:
        raise ValueError(f"batchnorm: mode must be 'train' or 'infer', got {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean) * inv_std
    result = check_finite(Tensor(gamma.data * x_hat + beta.data), 'batchnorm')

    def backward(grad: np.ndarray):
        grad_gamma = (grad * x_hat).sum(axis=axes) if gamma.requires_grad else None
        grad_beta = grad.sum(axis=axes) if beta.requires_grad else None
        grad_x = None
        if x.requires_grad:
            d_hat = grad * gamma.data
            if mode == 'train':
                grad_x = inv_std / count * (count * d_hat - d_hat.sum(axis=axes)
                                            - x_hat * (d_hat * x_hat).sum(axis=axes))
            else:
                grad_x = d_hat * inv_std
        return grad_x, grad_gamma, grad_beta

    return record('batchnorm', (x, gamma, beta), result, backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = BN_EPS) -> Tensor:
    """Normalise each row over its last axis, then scale and shift."""
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise DimensionError('layer_norm', 'features', (width,), (gamma.shape, beta.shape))
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean) * inv_std
    result = Tensor(gamma.data * x_hat + beta.data)
    lead = tuple(range(x.ndim - 1))

    def backward(grad: np.ndarray):
        grad_gamma = (grad * x_hat).sum(axis=lead) if gamma.requires_grad else None
        grad_beta = grad.sum(axis=lead) if beta.requires_grad else None
        grad_x = None
        if x.requires_grad:
            d_hat = grad * gamma.data
            grad_x = inv_std / width * (width * d_hat - d_hat.sum(axis=-1, keepdims=True)
                                        - x_hat * (d_hat * x_hat).sum(axis=-1, keepdims=True))
        return grad_x, grad_gamma, grad_beta

    return record('layer_norm', (x, gamma, beta), result, backward)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row to unit Euclidean length."""
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if np.any(norm <= eps):
        raise NormalizationError("l2_normalize: cannot normalise a zero-length embedding")
    y = x.data / norm
    result = Tensor(y)

    def backward(grad: np.ndarray):
        return ((grad - y * (grad * y).sum(axis=-1, keepdims=True)) / norm,)

    return record('l2_normalize', (x,), result, backward)


# ---------------------------------------------------------------------------
# dense algebra
# ---------------------------------------------------------------------------

def affine(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x``."""
    _require_rank('affine', weight, 2)
    d_in, d_out = weight.shape
    if x.shape[-1] != d_in:
        raise DimensionError('affine', 'features', d_in, x.shape[-1])
    if bias is not None and bias.shape != (d_out,):
        raise DimensionError('affine', 'bias', (d_out,), bias.shape)
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data
    result = Tensor(out)

    def backward(grad: np.ndarray):
        grad_x = grad @ weight.data.T if x.requires_grad else None
        grad_w = x.data.reshape(-1, d_in).T @ grad.reshape(-1, d_out) if weight.requires_grad else None
        grad_b = grad.reshape(-1, d_out).sum(axis=0) if bias is not None and bias.requires_grad else None
        return grad_x, grad_w, grad_b

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record('affine', inputs, result, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product: a [..., n, k] @ b [..., k, m] (b may be a plain 2-D matrix)."""
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError('matmul', 'inner', a.shape[-1], b.shape[-2])
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError('matmul', 'batch', a.shape[:-2], b.shape[:-2])
    result = Tensor(a.data @ b.data)

    def backward(grad: np.ndarray):
        grad_a = grad @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        grad_b = None
        if b.requires_grad:
            if b.ndim == 2:
                grad_b = a.data.reshape(-1, a.shape[-1]).T @ grad.reshape(-1, grad.shape[-1])
            else:
                grad_b = np.swapaxes(a.data, -1, -2) @ grad
        return grad_a, grad_b

    return record('matmul', (a, b), result, backward)


def transpose_last(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    result = Tensor(np.swapaxes(x.data, -1, -2))
    return record('transpose_last', (x,), result, lambda grad: (np.swapaxes(grad, -1, -2),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    result = Tensor(x.data.reshape(shape))
    return record('reshape', (x,), result, lambda grad: (grad.reshape(original),))


def concat_last(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis; leading axes must agree."""
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise DimensionError('concat', 'leading', lead, t.shape[:-1])
    widths = [t.shape[-1] for t in tensors]
    result = Tensor(np.concatenate([t.data for t in tensors], axis=-1))
    bounds = np.cumsum([0] + widths)

    def backward(grad: np.ndarray):
        return tuple(grad[..., bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return record('concat', tuple(tensors), result, backward)


def channel_concat(a: Tensor, b: Tensor) -> Tensor:
    """Stack two NHWC maps along channels; N, H and W must agree."""
    _require_rank('channel_concat', a, 4)
    _require_rank('channel_concat', b, 4)
    for axis, name in enumerate(('batch', 'height', 'width')):
        if a.shape[axis] != b.shape[axis]:
            raise DimensionError('channel_concat', name, a.shape[axis], b.shape[axis])
    return concat_last([a, b])


# ---------------------------------------------------------------------------
# elementwise and reductions
# ---------------------------------------------------------------------------

def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        axis = next((str(i) for i, (p, q) in enumerate(zip(a.shape, b.shape)) if p != q), 'rank')
        raise DimensionError(op, axis, a.shape, b.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape('add', a, b)
    result = Tensor(a.data + b.data)
    return record('add', (a, b), result, lambda grad: (grad, grad))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape('sub', a, b)
    result = Tensor(a.data - b.data)
    return record('sub', (a, b), result, lambda grad: (grad, -grad))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape('mul', a, b)
    result = Tensor(a.data * b.data)
    return record('mul', (a, b), result, lambda grad: (grad * b.data, grad * a.data))


def scale(x: Tensor, factor: float) -> Tensor:
    result = Tensor(x.data * factor)
    return record('scale', (x,), result, lambda grad: (grad * factor,))


def add_constant(x: Tensor, value: float) -> Tensor:
    result = Tensor(x.data + value)
    return record('add_constant', (x,), result, lambda grad: (grad,))


def square(x: Tensor) -> Tensor:
    result = Tensor(x.data * x.data)
    return record('square', (x,), result, lambda grad: (2.0 * grad * x.data,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    result = Tensor(np.where(mask, x.data, 0.0))
    return record('relu', (x,), result, lambda grad: (grad * mask,))


def channel_max(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise maximum; ties route the gradient to ``a``."""
    _same_shape('channel_max', a, b)
    take_a = a.data >= b.data
    result = Tensor(np.where(take_a, a.data, b.data))
    return record('channel_max', (a, b), result,
                  lambda grad: (grad * take_a, grad * ~take_a))


def gap(x: Tensor) -> Tensor:
    """Global average pooling: [N, H, W, C] -> [N, C]."""
    _require_rank('gap', x, 4)
    _, height, width, _ = x.shape
    result = Tensor(x.data.mean(axis=(1, 2)))
    area = height * width

    def backward(grad: np.ndarray):
        return (np.broadcast_to(grad[:, None, None, :] / area, x.shape).copy(),)

    return record('gap', (x,), result, backward)


def sum_all(x: Tensor) -> Tensor:
    result = Tensor(x.data.sum())
    return record('sum', (x,), result, lambda grad: (np.full(x.shape, grad, dtype=x.data.dtype),))


def mean_all(x: Tensor) -> Tensor:
    count = x.size
    result = Tensor(x.data.mean())
    return record('mean', (x,), result, lambda grad: (np.full(x.shape, grad / count, dtype=x.data.dtype),))


def sum_last(x: Tensor) -> Tensor:
    """Row sums over the last axis."""
    result = Tensor(x.data.sum(axis=-1))
    return record('sum_last', (x,), result,
                  lambda grad: (np.broadcast_to(grad[..., None], x.shape).copy(),))


def dropout(x: Tensor, rate: float, rng: Optional[Rng], mode: str = 'train') -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time; identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must lie in [0, 1), got {rate}")
    if mode == 'infer' or rate == 0.0:
        return x
    if rng is None:
        raise EngineError("dropout: train mode needs an Rng")
    keep = 1.0 - rate
    mask = rng.bernoulli_mask(keep, x.shape).astype(x.data.dtype) / np.asarray(keep, dtype=x.data.dtype)
    result = Tensor(x.data * mask)
    return record('dropout', (x,), result, lambda grad: (grad * mask,))


# ---------------------------------------------------------------------------
# probabilities
# ---------------------------------------------------------------------------

def _stable_softmax(values: np.ndarray) -> np.ndarray:
    shifted = values - values.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax(logits: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction."""
    y = _stable_softmax(logits.data)
    result = check_finite(Tensor(y), 'softmax')

    def backward(grad: np.ndarray):
        return (y * (grad - (grad * y).sum(axis=-1, keepdims=True)),)

    return record('softmax', (logits,), result, backward)


def smoothed_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row cross-entropy of softmax(logits) against soft target rows.

    Fused with the softmax so the gradient is ``p * sum(t) - t``.
    """
    if targets.shape != logits.shape:
        raise DimensionError('smoothed_cross_entropy', 'targets', logits.shape, targets.shape)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_p = shifted - log_z
    targets = targets.astype(logits.data.dtype)
    result = check_finite(Tensor(-(targets * log_p).sum(axis=-1)), 'smoothed_cross_entropy')
    probs = np.exp(log_p)
    mass = targets.sum(axis=-1, keepdims=True)

    def backward(grad: np.ndarray):
        return (grad[..., None] * (probs * mass - targets),)

    return record('smoothed_cross_entropy', (logits,), result, backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` of the leading axis."""
    if not 0 <= start < stop <= x.shape[0]:
        raise DimensionError('slice_rows', '0', f"0 <= {start} < {stop} <= {x.shape[0]}", x.shape[0])
    result = Tensor(x.data[start:stop])

    def backward(grad: np.ndarray):
        full = np.zeros(x.shape, dtype=grad.dtype)
        full[start:stop] = grad
        return (full,)

    return record('slice_rows', (x,), result, backward)
