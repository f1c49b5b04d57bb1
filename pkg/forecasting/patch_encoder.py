"""Stage-1 patch encoder: dense CNN blocks, attention pooling, token projection, token self-attention.

One set of parameters encodes every patch; the patch axis is just another
leading axis, so a whole batch of K patches goes through each op at once.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .exceptions import ConfigurationError, DimensionError
from .patching import PatchSequence


@dataclass(frozen=True)
class EncoderConfig:
    patch_len: int = 8
    in_features: int = 6
    conv_channels: tuple = field(default=(32, 32))
    kernel_width: int = 3
    num_dense_blocks: int = 2
    token_dim: int = 64
    refine_heads: int = 4
    dropout_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, 'conv_channels', tuple(int(c) for c in self.conv_channels))
        if len(self.conv_channels) != self.num_dense_blocks:
            raise ConfigurationError(
                f'{len(self.conv_channels)} conv channel widths given for {self.num_dense_blocks} dense blocks'
            )
        if self.patch_len < 1 or self.in_features < 1 or self.token_dim < 1:
            raise ConfigurationError('patch_len, in_features and token_dim must all be >= 1')
        if not 1 <= self.kernel_width <= self.patch_len:
            raise ConfigurationError(f'kernel_width {self.kernel_width} must be in [1, patch_len={self.patch_len}]')
        if self.refine_heads < 1 or self.token_dim % self.refine_heads:
            raise ConfigurationError(f'token_dim {self.token_dim} is not divisible by {self.refine_heads} heads')
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f'dropout_rate must be in [0, 1), got {self.dropout_rate}')

    @property
    def feature_channels(self):
        return self.in_features + sum(self.conv_channels)

    @property
    def same_padding(self):
        return ((self.kernel_width - 1) // 2, self.kernel_width // 2)

    def to_dict(self):
        data = asdict(self)
        data['conv_channels'] = list(self.conv_channels)
        return data


@dataclass(frozen=True)
class TokenSequence:
    """``tokens`` is (..., K, D)."""
    tokens: np.ndarray


def init_attention(params, prefix, width, rng):
    for proj in ('q', 'k', 'v', 'o'):
        params.add(f'{prefix}.w_{proj}', nx.glorot(rng, width, width))
        params.add(f'{prefix}.b_{proj}', np.zeros(width))


def init_encoder_params(cfg, rng):
    params = nx.ParameterSet()
    c_in = cfg.in_features
    for b, c_out in enumerate(cfg.conv_channels):
        fan_in, fan_out = c_in * cfg.kernel_width, c_out * cfg.kernel_width
        params.add(f'blocks.{b}.kernel', nx.glorot(rng, fan_in, fan_out, shape=(c_out, c_in, cfg.kernel_width)))
        params.add(f'blocks.{b}.bias', np.zeros(c_out))
        c_in += c_out
    params.add('pool.query', rng.normal(0.0, 0.1, size=cfg.feature_channels))
    params.add('proj.w', nx.glorot(rng, cfg.feature_channels, cfg.token_dim))
    params.add('proj.b', np.zeros(cfg.token_dim))
    init_attention(params, 'refine', cfg.token_dim, rng)
    return params


def encode_patch(patch, params, cfg, rng=None, training=False):
    """(..., P, F) patch -> (..., P, C) dense feature map, C = F + sum(conv_channels)."""
    patch = nx.as_tensor(patch)
    if patch.shape[-2:] != (cfg.patch_len, cfg.in_features):
        raise DimensionError(
            f'patch axes {patch.shape[-2:]} do not match (P={cfg.patch_len}, F={cfg.in_features})'
        )
    features = [nx.swapaxes(patch, -1, -2)]
    for b in range(cfg.num_dense_blocks):
        block_input = features[0] if len(features) == 1 else nx.concat(features, axis=-2)
        out = nx.conv1d(block_input, params[f'blocks.{b}.kernel'], params[f'blocks.{b}.bias'],
                        padding=cfg.same_padding)
        out = nx.dropout(nx.gelu(out), cfg.dropout_rate, rng, training)
        features.append(out)
    return nx.swapaxes(nx.concat(features, axis=-2), -1, -2)


def attention_pool(features, params):
    """Softmax-weighted average over the temporal axis of (..., P, C)."""
    scores = nx.matmul(features, params['pool.query'])
    weights = nx.softmax_last(scores)
    weights = nx.reshape(weights, weights.shape[:-1] + (1, weights.shape[-1]))
    pooled = nx.matmul(weights, features)
    return nx.reshape(pooled, pooled.shape[:-2] + (pooled.shape[-1],))


def project_token(pooled, params):
    return nx.linear(pooled, params['proj.w'], params['proj.b'])


def refine_tokens(tokens, params, heads):
    """Residual self-attention across the K tokens of (..., K, D)."""
    tokens = nx.as_tensor(tokens)
    return nx.add(tokens, nx.multi_head_attention(tokens, params.scope('refine'), heads))


def encode_sequence(patches, params, cfg, rng=None, training=False):
    """(..., K, P, F) patches -> (..., K, D) refined tokens as a Tensor."""
    if isinstance(patches, PatchSequence):
        patches = patches.patches
    features = encode_patch(patches, params, cfg, rng, training)
    tokens = project_token(attention_pool(features, params), params)
    return refine_tokens(tokens, params, cfg.refine_heads)


class PatchEncoder:
    kind = 'encoder'

    def __init__(self, cfg, seed=0, params=None):
        self.cfg = cfg
        self.params = params if params is not None else init_encoder_params(cfg, np.random.default_rng(seed))

    def forward(self, patches, rng=None, training=False):
        return encode_sequence(patches, self.params, self.cfg, rng, training)

    def tokenize(self, patches):
        """Evaluation-mode tokens with no tape recording."""
        return TokenSequence(self.forward(patches).numpy())

    def freeze(self):
        self.params.freeze()

    @property
    def frozen(self):
        return self.params.frozen

    def config_dict(self):
        return self.cfg.to_dict()
