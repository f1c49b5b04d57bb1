"""Non-overlapping patch segmentation and patch-level target alignment.

All functions accept a single sequence or a leading batch axis.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PatchSequence:
    """``patches`` is (..., K, P, F)."""
    patches: np.ndarray

    @property
    def num_patches(self):
        return self.patches.shape[-3]

    @property
    def patch_len(self):
        return self.patches.shape[-2]

    @property
    def num_features(self):
        return self.patches.shape[-1]


@dataclass(frozen=True)
class PatchTargets:
    """``values`` is (..., K): the mean target of each patch."""
    values: np.ndarray


def num_patches(seq_len, patch_len):
    if patch_len < 1:
        raise ConfigurationError(f'patch length P must be >= 1, got P={patch_len}')
    if seq_len < patch_len:
        raise ConfigurationError(f'sequence length T={seq_len} is shorter than patch length P={patch_len}')
    return seq_len // patch_len


def patchify(X, patch_len):
    X = np.asarray(X, dtype=np.float64)
    seq_len = X.shape[-2]
    k = num_patches(seq_len, patch_len)
    dropped = seq_len - k * patch_len
    if dropped:
        logger.debug('patchify dropped %d trailing steps (T=%d, P=%d)', dropped, seq_len, patch_len)
    kept = X[..., :k * patch_len, :]
    return PatchSequence(kept.reshape(*X.shape[:-2], k, patch_len, X.shape[-1]))


def aggregate_targets(y, patch_len):
    y = np.asarray(y, dtype=np.float64)
    seq_len = y.shape[-1]
    k = num_patches(seq_len, patch_len)
    kept = y[..., :k * patch_len]
    return PatchTargets(kept.reshape(*y.shape[:-1], k, patch_len).mean(axis=-1))


def check_horizon(k, horizon):
    if horizon < 1:
        raise ConfigurationError(f'horizon h must be >= 1, got h={horizon}')
    if horizon >= k:
        raise ConfigurationError(f'horizon h={horizon} leaves no prediction pairs for K={k} patches')


def align_horizon(states, targets, horizon):
    """Pair state i with the target of patch i + h; works on arrays or Tensors along axis -2."""
    values = targets.values if isinstance(targets, PatchTargets) else np.asarray(targets)
    k = values.shape[-1]
    if states.shape[-2] != k:
        raise ConfigurationError(f'{states.shape[-2]} states for {k} patch targets')
    check_horizon(k, horizon)
    return states[..., :k - horizon, :], values[..., horizon:]


def horizon_labels(y, patch_len, horizon):
    """Patch-mean targets of patches h..K-1, the labels every model is scored against."""
    values = aggregate_targets(y, patch_len).values
    check_horizon(values.shape[-1], horizon)
    return values[..., horizon:]
