"""Stage-2 pre-norm Transformer over patch tokens with a horizon-aligned linear head."""
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .exceptions import ConfigurationError, DimensionError
from .patch_encoder import init_attention
from .patching import check_horizon


@dataclass(frozen=True)
class ForecasterConfig:
    d_model: int = 64
    num_layers: int = 4
    num_heads: int = 16
    ffn_dim: int = 256
    dropout_rate: float = 0.1
    max_patches: int = 64
    horizon: int = 1
    input_dim: int = 64

    def __post_init__(self):
        if self.d_model < 1 or self.input_dim < 1 or self.ffn_dim < 1:
            raise ConfigurationError('d_model, input_dim and ffn_dim must all be >= 1')
        if self.num_layers < 1:
            raise ConfigurationError(f'num_layers must be >= 1, got {self.num_layers}')
        if self.num_heads < 1 or self.d_model % self.num_heads:
            raise ConfigurationError(f'd_model {self.d_model} is not divisible by {self.num_heads} heads')
        if self.horizon < 1 or self.horizon >= self.max_patches:
            raise ConfigurationError(f'horizon {self.horizon} must be in [1, max_patches={self.max_patches})')
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f'dropout_rate must be in [0, 1), got {self.dropout_rate}')

    def to_dict(self):
        return asdict(self)


def init_layer_stack(params, cfg, rng, prefix='layers'):
    width = cfg.d_model
    for i in range(cfg.num_layers):
        layer = f'{prefix}.{i}'
        params.add(f'{layer}.ln1.gamma', np.ones(width))
        params.add(f'{layer}.ln1.beta', np.zeros(width))
        init_attention(params, f'{layer}.attn', width, rng)
        params.add(f'{layer}.ln2.gamma', np.ones(width))
        params.add(f'{layer}.ln2.beta', np.zeros(width))
        params.add(f'{layer}.ffn.w1', nx.glorot(rng, width, cfg.ffn_dim))
        params.add(f'{layer}.ffn.b1', np.zeros(cfg.ffn_dim))
        params.add(f'{layer}.ffn.w2', nx.glorot(rng, cfg.ffn_dim, width))
        params.add(f'{layer}.ffn.b2', np.zeros(width))
    params.add(f'{prefix}.final_ln.gamma', np.ones(width))
    params.add(f'{prefix}.final_ln.beta', np.zeros(width))


def init_positional(params, cfg, rng, name='pos.table'):
    params.add(name, rng.normal(0.0, 0.02, size=(cfg.max_patches, cfg.d_model)))


def init_head(params, cfg, rng, prefix='head'):
    params.add(f'{prefix}.w', nx.glorot(rng, cfg.d_model, 1).reshape(cfg.d_model))
    params.add(f'{prefix}.b', np.zeros(1))


def init_forecaster_params(cfg, rng):
    params = nx.ParameterSet()
    if cfg.input_dim != cfg.d_model:
        params.add('input.w', nx.glorot(rng, cfg.input_dim, cfg.d_model))
        params.add('input.b', np.zeros(cfg.d_model))
    init_positional(params, cfg, rng)
    init_layer_stack(params, cfg, rng)
    init_head(params, cfg, rng)
    return params


def project_input(tokens, params, cfg):
    tokens = nx.as_tensor(tokens)
    if tokens.shape[-1] != cfg.input_dim:
        raise DimensionError(f'token width {tokens.shape[-1]} != input_dim {cfg.input_dim}')
    if cfg.input_dim == cfg.d_model:
        return tokens
    return nx.linear(tokens, params['input.w'], params['input.b'])


def add_positional(x, table, dropout_rate, rng=None, training=False):
    k, max_patches = x.shape[-2], table.shape[0]
    if k > max_patches:
        raise ConfigurationError(f'{k} patches exceed the positional table size max_patches={max_patches}')
    return nx.dropout(nx.add(x, nx.take(table, slice(0, k))), dropout_rate, rng, training)


def feed_forward(x, params, prefix):
    hidden = nx.gelu(nx.linear(x, params[f'{prefix}.w1'], params[f'{prefix}.b1']))
    return nx.linear(hidden, params[f'{prefix}.w2'], params[f'{prefix}.b2'])


def encoder_forward(x, params, cfg, rng=None, training=False, prefix='layers'):
    """Pre-norm layers u = x + MHA(LN(x)); x = u + FFN(LN(u)), then a final LayerNorm."""
    for i in range(cfg.num_layers):
        layer = f'{prefix}.{i}'
        normed = nx.layer_norm(x, params[f'{layer}.ln1.gamma'], params[f'{layer}.ln1.beta'])
        attended = nx.multi_head_attention(normed, params.scope(f'{layer}.attn'), cfg.num_heads)
        u = nx.add(x, nx.dropout(attended, cfg.dropout_rate, rng, training))
        normed = nx.layer_norm(u, params[f'{layer}.ln2.gamma'], params[f'{layer}.ln2.beta'])
        x = nx.add(u, nx.dropout(feed_forward(normed, params, f'{layer}.ffn'), cfg.dropout_rate, rng, training))
    return nx.layer_norm(x, params[f'{prefix}.final_ln.gamma'], params[f'{prefix}.final_ln.beta'])


def predict_horizon(hidden, params, horizon, prefix='head'):
    """forecast[..., i] = w . hidden[..., i, :] + b predicts patch i + h."""
    k = hidden.shape[-2]
    check_horizon(k, horizon)
    states = nx.take(hidden, (Ellipsis, slice(0, k - horizon), slice(None)))
    return nx.add(nx.matmul(states, params[f'{prefix}.w']), params[f'{prefix}.b'])


class Forecaster:
    kind = 'forecaster'

    def __init__(self, cfg, seed=0, params=None):
        self.cfg = cfg
        self.params = params if params is not None else init_forecaster_params(cfg, np.random.default_rng(seed))

    def hidden_states(self, tokens, rng=None, training=False):
        x = project_input(tokens, self.params, self.cfg)
        x = add_positional(x, self.params['pos.table'], self.cfg.dropout_rate, rng, training)
        return encoder_forward(x, self.params, self.cfg, rng, training)

    def forward(self, tokens, rng=None, training=False):
        return predict_horizon(self.hidden_states(tokens, rng, training), self.params, self.cfg.horizon)

    def config_dict(self):
        return self.cfg.to_dict()
