"""Multi-head self-attention over convolutional feature maps."""

from attention.mobile_attention import (AttentionConfig, AttentionWeights, attention_block, decode_residual,
                                        encode, fold, multi_head_attention, unfold)

__all__ = ['AttentionConfig', 'AttentionWeights', 'attention_block', 'decode_residual', 'encode', 'fold',
           'multi_head_attention', 'unfold']
