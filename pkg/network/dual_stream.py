"""
Dual-Stream Writer Identification Network

A writer-dependent (WD) stream and a writer-independent (WI) stream of the
same shape read one fragment each; their final maps are fused, optionally
passed through the attention block, pooled and classified over K writers.
The WI stream additionally carries an embedding head used for triplet
pretraining, after which its early layers are frozen.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from attention.mobile_attention import AttentionWeights, attention_block
from engine import ops
from engine.rng import Rng
from engine.tensor import DimensionError, Parameter, Tensor
from network.config import FreezeMask, ModelConfig
from network.layers import ConvBN, DenseHead, Layer, StreamWeights

logger = logging.getLogger(__name__)

EMBEDDING_PREFIX = 'wi.embedding'


class FreezeError(ValueError):
    """A freeze prefix that resolves to nothing, or to parameters that may not be frozen."""

    def __init__(self, prefix: str, known: Sequence[str], reason: str = 'matches no parameter'):
        self.prefix = prefix
        self.known = list(known)
        super().__init__(f"freeze prefix {prefix!r} {reason}; known prefixes: {', '.join(self.known)}")


class StateDictError(ValueError):
    """Named tensors that do not match the architecture they are loaded into."""


@dataclass
class ForwardResult:
    """Logits, probabilities and the map that was pooled by the head."""

    logits: Tensor
    probs: Tensor
    feature_map: Tensor


def fuse(f_wd: Tensor, f_wi: Tensor, strategy: str, mixer: Optional[ConvBN] = None,
         mode: str = 'infer') -> Tensor:
    """Combine the two stream maps: elementwise max, elementwise sum, or channel concat + 1x1 conv/BN/ReLU.

    Args:
        f_wd (Tensor): writer-dependent map [N, h, w, C3]
        f_wi (Tensor): writer-independent map of the same shape
        strategy (str): 'max', 'add' or 'concat'
        mixer (ConvBN): 2*C3 -> C3 mixing layer, required for 'concat'
        mode (str): 'train' or 'infer'

    Returns:
        Tensor: fused map [N, h, w, C3]
    """
    if f_wd.shape != f_wi.shape:
        axis = next((str(i) for i, (a, b) in enumerate(zip(f_wd.shape, f_wi.shape)) if a != b), 'rank')
        raise DimensionError('fuse', axis, f_wd.shape, f_wi.shape)
    if strategy == 'max':
        return ops.channel_max(f_wd, f_wi)
    if strategy == 'add':
        return ops.add(f_wd, f_wi)
    if strategy == 'concat':
        if mixer is None:
            raise ValueError("concat fusion needs a mixing convolution")
        return mixer(ops.channel_concat(f_wd, f_wi), mode)
    raise ValueError(f"unknown fusion strategy {strategy!r}")


def classification_head(f_hat: Tensor, head: DenseHead, mode: str = 'infer',
                        rng: Optional[Rng] = None) -> Tuple[Tensor, Tensor]:
    """GAP -> dropout -> affine(K) -> softmax; returns (logits, probabilities)."""
    logits = head(f_hat, mode, rng)
    return logits, ops.softmax(logits)


class DualStreamNetwork(Layer):
    """Full model built from a ModelConfig.

    Only the parts the configuration uses are created: the WD stream when
    mode is wd_only or dual, the WI stream and its embedding head when mode is
    wi_only or dual, the mixing conv for concat fusion, and attention weights
    for the chosen placement.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = seed
        self.wi_pretrained = False
        self.freeze_mask = FreezeMask()
        rng = Rng(seed)
        self._dropout_rng = rng.derive(99)
        channels = config.channels
        c3 = config.feature_channels

        self.wd = StreamWeights('wd', channels, rng.derive(1)) if config.uses_wd else None
        self.wi = StreamWeights('wi', channels, rng.derive(2)) if config.uses_wi else None
        self.wi_embedding = None
        if config.uses_wi:
            self.wi_embedding = DenseHead(EMBEDDING_PREFIX, c3, config.embedding_dim, config.dropout_rate,
                                          rng.derive(3))
        self.mixer = None
        if config.mode == 'dual' and config.fusion == 'concat':
            self.mixer = ConvBN('fusion.mix', 2 * c3, c3, 1, rng.derive(4))

        self.attention: Dict[str, AttentionWeights] = {}
        if config.attention_placement == 'per_stream':
            for i, stream in enumerate(('wd', 'wi')):
                self.attention[stream] = AttentionWeights.initialize(
                    f"attention.{stream}", c3, config.attention, rng.derive(5, i))
        elif config.attention_placement == 'post_fusion':
            self.attention['fused'] = AttentionWeights.initialize(
                'attention.fused', c3, config.attention, rng.derive(5, 2))

        self.head = DenseHead('head', c3, config.num_writers, config.dropout_rate, rng.derive(6))
        logger.debug(f"Built {config.mode} network with {self.parameter_count()} parameters")

    # -- structure ---------------------------------------------------------

    def children(self) -> List[Layer]:
        layers = [self.wd, self.wi, self.wi_embedding, self.mixer]
        return [layer for layer in layers if layer is not None]

    def parameters(self) -> Dict[str, Parameter]:
        found = {}
        for child in self.children():
            found.update(child.parameters())
        for weights in self.attention.values():
            found.update(weights.parameters())
        found.update(self.head.parameters())
        return found

    def classifier_parameters(self) -> Dict[str, Parameter]:
        """Everything on the path to the writer scores (the pretraining embedding head excluded)."""
        return {name: p for name, p in self.parameters().items()
                if not FreezeMask.matches(EMBEDDING_PREFIX, name)}

    def pretraining_parameters(self) -> Dict[str, Parameter]:
        """WI stream and embedding head."""
        return {name: p for name, p in self.parameters().items() if name.startswith('wi.')}

    def parameter_count(self) -> int:
        return sum(p.tensor.size for p in self.parameters().values())

    def known_prefixes(self) -> List[str]:
        return sorted({'.'.join(name.split('.')[:2]) for name in self.parameters()})

    # -- forward passes ----------------------------------------------------

    def _batch(self, x: Tensor) -> Tensor:
        if x.ndim == 3:
            x = ops.reshape(x, (1,) + x.shape)
        if x.ndim != 4 or x.shape[-1] != 1:
            raise DimensionError('model_forward', 'input', '[N, H, W, 1]', x.shape)
        return x

    def _dropout(self, rng: Optional[Rng]) -> Optional[Rng]:
        return rng if rng is not None else self._dropout_rng

    def wd_forward(self, x: Tensor, mode: str = 'infer') -> Tensor:
        """Writer-dependent feature map [N, h, w, C3]."""
        if self.wd is None:
            raise ValueError(f"mode {self.config.mode!r} has no writer-dependent stream")
        return self.wd(self._batch(x), mode)

    def wi_forward(self, x: Tensor, mode: str = 'infer', head: str = 'features',
                   rng: Optional[Rng] = None) -> Tensor:
        """Writer-independent feature map, or with ``head='embedding'`` the pooled embedding [N, E]."""
        if self.wi is None:
            raise ValueError(f"mode {self.config.mode!r} has no writer-independent stream")
        features = self.wi(self._batch(x), mode)
        if head == 'features':
            return features
        if head == 'embedding':
            return self.wi_embedding(features, mode, self._dropout(rng))
        raise ValueError(f"head must be 'features' or 'embedding', got {head!r}")

    def fuse(self, f_wd: Tensor, f_wi: Tensor, mode: str = 'infer') -> Tensor:
        return fuse(f_wd, f_wi, self.config.fusion, self.mixer, mode)

    def features(self, x: Tensor, mode: str = 'infer') -> Tensor:
        """Final map fed to the head: post-attention, pre-pooling."""
        config = self.config
        x = self._batch(x)
        if config.mode == 'wd_only':
            fused = self.wd_forward(x, mode)
        elif config.mode == 'wi_only':
            fused = self.wi_forward(x, mode)
        else:
            f_wd = self.wd_forward(x, mode)
            f_wi = self.wi_forward(x, mode)
            if config.attention_placement == 'per_stream':
                f_wd = attention_block(f_wd, self.attention['wd'], config.attention)
                f_wi = attention_block(f_wi, self.attention['wi'], config.attention)
            fused = self.fuse(f_wd, f_wi, mode)
        if config.attention_placement == 'post_fusion':
            fused = attention_block(fused, self.attention['fused'], config.attention)
        return fused

    def model_forward(self, x: Tensor, mode: str = 'infer', rng: Optional[Rng] = None) -> ForwardResult:
        """Fragment batch [N, H, W, 1] to writer probabilities [N, K]."""
        feature_map = self.features(x, mode)
        logits, probs = classification_head(feature_map, self.head, mode, self._dropout(rng))
        return ForwardResult(logits, probs, feature_map)

    def predict(self, fragments: np.ndarray) -> np.ndarray:
        """Inference-mode probabilities for a fragment array [N, H, W, 1]."""
        return self.model_forward(Tensor(fragments), mode='infer').probs.data.copy()

    # -- freezing ----------------------------------------------------------

    def apply_freeze(self, mask: FreezeMask) -> 'DualStreamNetwork':
        """Freeze every parameter under the mask's prefixes and unfreeze the rest."""
        params = self.parameters()
        for param in params.values():
            param.unfreeze()
        for prefix in mask.prefixes:
            hits = [p for name, p in params.items() if FreezeMask.matches(prefix, name)]
            if not hits:
                raise FreezeError(prefix, self.known_prefixes())
            if self.config.mode == 'dual' and any(not p.name.startswith('wi.') for p in hits):
                raise FreezeError(prefix, self.known_prefixes(),
                                  'reaches outside the writer-independent stream')
            for param in hits:
                param.freeze()
        self.freeze_mask = mask
        if mask.prefixes:
            logger.info(f"Frozen prefixes: {', '.join(mask.prefixes)} ({len(self.frozen_names())} tensors)")
        return self

    def frozen_names(self) -> List[str]:
        return [name for name, p in self.parameters().items() if p.frozen]

    # -- named tensors -----------------------------------------------------

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Parameters in construction order followed by batch-norm running statistics."""
        state = {name: p.tensor.data for name, p in self.parameters().items()}
        for bn in self.batchnorms():
            state.update(bn.buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], prefix: Optional[str] = None) -> None:
        """Copy named tensors into the model.

        Without ``prefix`` the names must match the architecture exactly. With
        ``prefix`` (e.g. 'wi.') only the model's tensors under it are loaded,
        from a source that must contain all of them.
        """
        params = self.parameters()
        norms = {}
        for bn in self.batchnorms():
            norms[f"{bn.prefix}.running_mean"] = (bn, 'running_mean')
            norms[f"{bn.prefix}.running_var"] = (bn, 'running_var')

        expected = list(params) + list(norms)
        if prefix is not None:
            expected = [name for name in expected if name.startswith(prefix)]
            if not expected:
                raise StateDictError(f"model has no tensors under prefix {prefix!r}")
        else:
            unexpected = sorted(set(state) - set(expected))
            if unexpected:
                raise StateDictError(f"unexpected tensors for this architecture: {', '.join(unexpected[:5])}")
        missing = [name for name in expected if name not in state]
        if missing:
            raise StateDictError(f"missing tensors: {', '.join(missing[:5])}"
                                 + (f" (+{len(missing) - 5} more)" if len(missing) > 5 else ''))

        for name in expected:
            values = np.asarray(state[name], dtype=np.float32)
            if name in params:
                target = params[name].tensor
                if values.shape != target.shape:
                    raise DimensionError('load_state_dict', name, target.shape, values.shape)
                target.data = values.copy()
                target.grad = None
            else:
                bn, field_name = norms[name]
                current = getattr(bn.state, field_name)
                if values.shape != current.shape:
                    raise DimensionError('load_state_dict', name, current.shape, values.shape)
                setattr(bn.state, field_name, values.copy())

        if self.wi is not None and any(name.startswith('wi.') for name in expected):
            self.wi_pretrained = True
        logger.debug(f"Loaded {len(expected)} tensors" + (f" under {prefix!r}" if prefix else ''))
