"""Reference forecasters on the same patch grid: TCN, PatchTST-style Transformer, persistence."""
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .exceptions import ConfigurationError
from .forecaster import (
    ForecasterConfig, add_positional, encoder_forward, init_head, init_layer_stack,
    init_positional, predict_horizon,
)
from .patching import aggregate_targets, check_horizon, num_patches, patchify


@dataclass(frozen=True)
class TcnConfig:
    levels: int = 4
    channels: int = 32
    kernel_width: int = 3
    dilation_base: int = 2
    dropout_rate: float = 0.1
    horizon: int = 1
    patch_len: int = 8
    in_features: int = 6

    def __post_init__(self):
        if self.levels < 1 or self.channels < 1 or self.kernel_width < 1:
            raise ConfigurationError('levels, channels and kernel_width must all be >= 1')
        if self.dilation_base < 1:
            raise ConfigurationError(f'dilation_base must be >= 1, got {self.dilation_base}')
        if self.horizon < 1 or self.patch_len < 1:
            raise ConfigurationError('horizon and patch_len must be >= 1')
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f'dropout_rate must be in [0, 1), got {self.dropout_rate}')

    def dilation(self, level):
        return self.dilation_base ** level

    @property
    def receptive_field(self):
        return 1 + sum(2 * (self.kernel_width - 1) * self.dilation(level) for level in range(self.levels))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PatchTstConfig:
    patch_len: int = 8
    in_features: int = 6
    d_model: int = 64
    layers: int = 4
    heads: int = 16
    ffn_dim: int = 256
    dropout_rate: float = 0.1
    horizon: int = 1
    max_patches: int = 64

    def __post_init__(self):
        if self.patch_len < 1 or self.in_features < 1:
            raise ConfigurationError('patch_len and in_features must be >= 1')
        self.transformer_config()

    def transformer_config(self):
        return ForecasterConfig(
            d_model=self.d_model, num_layers=self.layers, num_heads=self.heads,
            ffn_dim=self.ffn_dim, dropout_rate=self.dropout_rate,
            max_patches=self.max_patches, horizon=self.horizon, input_dim=self.d_model,
        )

    def to_dict(self):
        return asdict(self)


def _check_sequence(X, patch_len, in_features):
    if X.shape[-1] != in_features:
        raise ConfigurationError(f'input has {X.shape[-1]} features, model expects {in_features}')
    return num_patches(X.shape[-2], patch_len)


# TCN

def init_tcn_params(cfg, rng):
    params = nx.ParameterSet()
    c_in, width = cfg.in_features, cfg.kernel_width
    for level in range(cfg.levels):
        prefix = f'levels.{level}'
        params.add(f'{prefix}.conv1.kernel', nx.glorot(rng, c_in * width, cfg.channels * width,
                                                       shape=(cfg.channels, c_in, width)))
        params.add(f'{prefix}.conv1.bias', np.zeros(cfg.channels))
        params.add(f'{prefix}.conv2.kernel', nx.glorot(rng, cfg.channels * width, cfg.channels * width,
                                                       shape=(cfg.channels, cfg.channels, width)))
        params.add(f'{prefix}.conv2.bias', np.zeros(cfg.channels))
        if c_in != cfg.channels:
            params.add(f'{prefix}.down.kernel', nx.glorot(rng, c_in, cfg.channels, shape=(cfg.channels, c_in, 1)))
            params.add(f'{prefix}.down.bias', np.zeros(cfg.channels))
        c_in = cfg.channels
    params.add('head.w', nx.glorot(rng, cfg.channels, 1).reshape(cfg.channels))
    params.add('head.b', np.zeros(1))
    return params


def tcn_step_states(X, params, cfg, rng=None, training=False):
    """Causal dilated residual stack: (..., T, F) -> (..., T, C) step-level states."""
    x = nx.swapaxes(nx.as_tensor(X), -1, -2)
    for level in range(cfg.levels):
        prefix = f'levels.{level}'
        dilation = cfg.dilation(level)
        causal = ((cfg.kernel_width - 1) * dilation, 0)
        h = nx.conv1d(x, params[f'{prefix}.conv1.kernel'], params[f'{prefix}.conv1.bias'], causal, dilation)
        h = nx.dropout(nx.gelu(h), cfg.dropout_rate, rng, training)
        h = nx.conv1d(h, params[f'{prefix}.conv2.kernel'], params[f'{prefix}.conv2.bias'], causal, dilation)
        h = nx.dropout(nx.gelu(h), cfg.dropout_rate, rng, training)
        residual = x
        if f'{prefix}.down.kernel' in params:
            residual = nx.conv1d(x, params[f'{prefix}.down.kernel'], params[f'{prefix}.down.bias'])
        x = nx.gelu(nx.add(h, residual))
    return nx.swapaxes(x, -1, -2)


def tcn_forward(X, params, cfg, rng=None, training=False):
    X = np.asarray(X, dtype=np.float64)
    k = _check_sequence(X, cfg.patch_len, cfg.in_features)
    check_horizon(k, cfg.horizon)
    states = tcn_step_states(X[..., :k * cfg.patch_len, :], params, cfg, rng, training)
    lead = states.shape[:-2]
    windows = nx.reshape(states, lead + (k, cfg.patch_len, cfg.channels))
    return predict_horizon(nx.mean(windows, axis=-2), params, cfg.horizon)


# PatchTST-style

def init_patchtst_params(cfg, rng):
    params = nx.ParameterSet()
    flat = cfg.patch_len * cfg.in_features
    params.add('embed.w', nx.glorot(rng, flat, cfg.d_model))
    params.add('embed.b', np.zeros(cfg.d_model))
    stack = cfg.transformer_config()
    init_positional(params, stack, rng)
    init_layer_stack(params, stack, rng)
    init_head(params, stack, rng)
    return params


def patchtst_forward(X, params, cfg, rng=None, training=False):
    X = np.asarray(X, dtype=np.float64)
    _check_sequence(X, cfg.patch_len, cfg.in_features)
    patches = patchify(X, cfg.patch_len).patches
    flat = patches.reshape(patches.shape[:-2] + (cfg.patch_len * cfg.in_features,))
    stack = cfg.transformer_config()
    tokens = nx.linear(nx.Tensor(flat), params['embed.w'], params['embed.b'])
    x = add_positional(tokens, params['pos.table'], cfg.dropout_rate, rng, training)
    hidden = encoder_forward(x, params, stack, rng, training)
    return predict_horizon(hidden, params, cfg.horizon)


class TcnModel:
    kind = 'tcn'

    def __init__(self, cfg, seed=0, params=None):
        self.cfg = cfg
        self.params = params if params is not None else init_tcn_params(cfg, np.random.default_rng(seed))

    @property
    def patch_len(self):
        return self.cfg.patch_len

    @property
    def horizon(self):
        return self.cfg.horizon

    def forward(self, X, rng=None, training=False):
        return tcn_forward(X, self.params, self.cfg, rng, training)

    def predict(self, X, y=None):
        return self.forward(X).numpy()

    def config_dict(self):
        return self.cfg.to_dict()


class PatchTstModel:
    kind = 'patchtst'

    def __init__(self, cfg, seed=0, params=None):
        self.cfg = cfg
        self.params = params if params is not None else init_patchtst_params(cfg, np.random.default_rng(seed))

    @property
    def patch_len(self):
        return self.cfg.patch_len

    @property
    def horizon(self):
        return self.cfg.horizon

    def forward(self, X, rng=None, training=False):
        return patchtst_forward(X, self.params, self.cfg, rng, training)

    def predict(self, X, y=None):
        return self.forward(X).numpy()

    def config_dict(self):
        return self.cfg.to_dict()


class PersistenceBaseline:
    """Predicts patch k + h as the observed mean target of patch k; has no parameters."""

    kind = 'persistence'

    def __init__(self, patch_len=8, horizon=1):
        self.patch_len = patch_len
        self.horizon = horizon
        self.params = nx.ParameterSet()

    def predict(self, X, y):
        if y is None:
            raise ConfigurationError('the persistence baseline needs the observed target history y')
        values = aggregate_targets(y, self.patch_len).values
        k = values.shape[-1]
        check_horizon(k, self.horizon)
        return values[..., :k - self.horizon]

    def config_dict(self):
        return {'patch_len': self.patch_len, 'horizon': self.horizon}
