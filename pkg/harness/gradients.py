"""
Gradient Suite

Finite-difference checks of every differentiable op and of the end-to-end
micro model, all in float64. Each check reduces its op output to a scalar
with a fixed random projection so every output coordinate contributes.
"""

import logging
from typing import Callable, Dict, List, Tuple

import numpy as np

from attention.mobile_attention import AttentionConfig, AttentionWeights, attention_block
from engine import ops
from engine.gradcheck import grad_check
from engine.rng import Rng
from engine.tensor import Tensor, precision
from network.config import ModelConfig
from network.dual_stream import DualStreamNetwork
from training.losses import classification_loss, triplet_loss

logger = logging.getLogger(__name__)

TOLERANCE = 1e-2
FD_EPS = 1e-5
MODEL_EPS = 1e-6
MICRO_SIDE = 24
MODEL_COORDS = 3


def _leaf(rng: Rng, shape, low: float = -1.0, high: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, shape), requires_grad=True)


def _projected(rng: Rng, fn: Callable[[], Tensor]) -> Callable[[], Tensor]:
    """sum(fn() * R) for a fixed random R drawn once from ``rng``."""
    shape = fn().shape
    weights = Tensor(rng.uniform(-1.0, 1.0, shape))
    return lambda: ops.sum_all(ops.mul(fn(), weights))


def _op_cases(rng: Rng) -> List[Tuple[str, Callable[[], Tensor], List[Tensor]]]:
    cases = []

    x = _leaf(rng.derive(0), (2, 5, 5, 3))
    w = _leaf(rng.derive(1), (3, 3, 3, 4))
    b = _leaf(rng.derive(2), (4,))
    cases.append(('conv2d', lambda: ops.conv2d(x, w, b, stride=2), [x, w, b]))

    dw = _leaf(rng.derive(3), (3, 3, 3))
    cases.append(('depthwise_conv2d', lambda: ops.depthwise_conv2d(x, dw), [x, dw]))

    pw = _leaf(rng.derive(4), (1, 1, 3, 4))
    cases.append(('separable_conv2d', lambda: ops.separable_conv2d(x, dw, pw, b, stride=2), [x, dw, pw, b]))

    gamma = _leaf(rng.derive(5), (3,), 0.5, 1.5)
    beta = _leaf(rng.derive(6), (3,))
    cases.append(('batchnorm', lambda: ops.batchnorm(x, gamma, beta, ops.BatchNormState(), 'train'),
                  [x, gamma, beta]))

    rows = _leaf(rng.derive(7), (4, 6))
    g6 = _leaf(rng.derive(8), (6,), 0.5, 1.5)
    b6 = _leaf(rng.derive(9), (6,))
    cases.append(('layer_norm', lambda: ops.layer_norm(rows, g6, b6), [rows, g6, b6]))
    cases.append(('l2_normalize', lambda: ops.l2_normalize(rows), [rows]))
    cases.append(('softmax', lambda: ops.softmax(rows), [rows]))

    dense = _leaf(rng.derive(10), (6, 3))
    bias3 = _leaf(rng.derive(11), (3,))
    cases.append(('affine', lambda: ops.affine(rows, dense, bias3), [rows, dense, bias3]))
    cases.append(('matmul', lambda: ops.matmul(rows, dense), [rows, dense]))

    other = _leaf(rng.derive(12), (2, 5, 5, 3))
    cases.append(('channel_max', lambda: ops.channel_max(x, other), [x, other]))
    cases.append(('channel_concat', lambda: ops.channel_concat(x, other), [x, other]))
    cases.append(('relu', lambda: ops.relu(x), [x]))
    cases.append(('gap', lambda: ops.gap(x), [x]))

    targets = np.zeros((4, 6))
    targets[np.arange(4), [0, 2, 4, 5]] = 0.9
    targets[targets == 0] = 0.1 / 6
    cases.append(('smoothed_cross_entropy', lambda: ops.smoothed_cross_entropy(rows, targets), [rows]))

    config = AttentionConfig(heads=2, head_dim=4)
    weights = AttentionWeights.initialize('check', 3, config, rng.derive(13))
    weights.decoder_weight.tensor.data = rng.derive(14).uniform(-0.5, 0.5, weights.decoder_weight.shape)
    fmap = _leaf(rng.derive(15), (2, 3, 3, 3))
    attention_inputs = [fmap] + [p.tensor for p in weights.parameters().values()]
    cases.append(('attention_block', lambda: attention_block(fmap, weights, config), attention_inputs))

    anchor, positive, negative = (_leaf(rng.derive(16, i), (3, 5)) for i in range(3))
    cases.append(('triplet_loss', lambda: triplet_loss(anchor, positive, negative, margin=1.0),
                  [anchor, positive, negative]))
    return cases


def check_ops(seed: int = 0) -> Dict[str, float]:
    """Worst relative error of every op under one seed."""
    rng = Rng(seed)
    errors = {}
    with precision(np.float64):
        for index, (name, fn, inputs) in enumerate(_op_cases(rng)):
            loss = _projected(rng.derive(100, index), fn)
            errors[name] = grad_check(loss, inputs, eps=FD_EPS)
    return errors


def micro_model_config(scale: int = 8) -> ModelConfig:
    return ModelConfig(num_writers=2, channel_scale=scale, fusion='concat', attention_placement='post_fusion',
                       attention=AttentionConfig(heads=2, head_dim=4), fragment_side=MICRO_SIDE,
                       embedding_dim=8, mode='dual')


def check_model(scale: int = 8, seed: int = 0, max_coords: int = MODEL_COORDS) -> float:
    """Worst relative error of the end-to-end dual model loss against a sample of every parameter."""
    rng = Rng(seed)
    with precision(np.float64):
        model = DualStreamNetwork(micro_model_config(scale), seed=seed)
        decoder = model.attention['fused'].decoder_weight.tensor
        decoder.data = rng.derive(1).uniform(-0.1, 0.1, decoder.shape)
        x = Tensor(rng.derive(2).uniform(0.0, 1.0, (2, MICRO_SIDE, MICRO_SIDE, 1)))
        labels = [0, 1]

        def loss() -> Tensor:
            result = model.model_forward(x, mode='train', rng=Rng(seed, (3,)))
            return classification_loss(result.logits, labels, 0.1)

        params = list(model.classifier_parameters().values())
        return grad_check(loss, params, eps=MODEL_EPS, max_coords=max_coords, rng=rng.derive(4))


def run_suite(scale: int = 8, seed: int = 0, seeds: int = 1) -> Dict[str, object]:
    """Op checks over ``seeds`` consecutive seeds plus one model check.

    Returns:
        dict: ``errors`` (worst error per check), ``worst`` and ``passed``
    """
    errors: Dict[str, float] = {}
    for offset in range(seeds):
        for name, error in check_ops(seed + offset).items():
            errors[name] = max(error, errors.get(name, 0.0))
    errors['model'] = check_model(scale, seed)
    for name, error in errors.items():
        logger.info(f"gradcheck {name}: {error:.3e}")
    worst = max(errors.values())
    return {'errors': errors, 'worst': worst, 'passed': worst < TOLERANCE}
