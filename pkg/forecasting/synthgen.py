"""Controlled synthetic multivariate series with two dynamic and four static features.

Each sample draws from its own PCG64 stream seeded by ``SeedSequence(seed,
spawn_key=(i,))``, so sample ``i`` is the same whether it is produced alone,
serially or on a worker thread.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigurationError, DimensionError, InvariantViolation

logger = logging.getLogger(__name__)

FEATURE_NAMES = ('d1', 'd2', 's1', 's2', 's3', 's4')


@dataclass(frozen=True)
class SynthConfig:
    num_samples: int = 10000
    seq_len: int = 160
    alpha1: float = 0.045
    alpha2: float = 0.38
    alpha3: float = 0.07
    sigma1: float = 1.0
    sigma2: float = 2.0
    sigma_y: float = 0.1
    rho: float = 0.8
    seed: int = 42

    def __post_init__(self):
        if self.num_samples < 1:
            raise ConfigurationError(f'num_samples must be >= 1, got {self.num_samples}')
        if self.seq_len < 1:
            raise ConfigurationError(f'seq_len must be >= 1, got {self.seq_len}')
        for name in ('sigma1', 'sigma2', 'sigma_y'):
            if getattr(self, name) < 0:
                raise ConfigurationError(f'{name} must be >= 0, got {getattr(self, name)}')
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError(f'seed must be a 64-bit unsigned integer, got {self.seed}')

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SeriesSample:
    """One sequence: ``X`` is T x F, ``y`` has length T."""
    X: np.ndarray
    y: np.ndarray

    @property
    def seq_len(self):
        return self.y.shape[0]


def sample_stream(seed, index):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def time_index(seq_len):
    return np.arange(1, seq_len + 1, dtype=np.float64)


def trend_f(t, seq_len):
    return (-5.0 + 0.04 * t + 0.0002 * t ** 2
            + 0.8 * np.exp(t / seq_len) + 2.0 * np.sin(2.0 * np.pi * t / 20.0))


def coupling_g(x):
    return 0.4 * x + 0.6 * np.sign(x) * np.log1p(np.abs(x))


def trend_h(t):
    return 0.02 * t


def periodic_p(t):
    return 1.5 * np.sin(2.0 * np.pi * t / 25.0)


def gen_dynamic1(seq_len, rng, cfg):
    t = time_index(seq_len)
    noise = rng.standard_normal(seq_len)
    return trend_f(t, seq_len) + cfg.sigma1 * noise


def gen_dynamic2(d1, seq_len, rng, cfg):
    d1 = np.asarray(d1, dtype=np.float64)
    if d1.shape != (seq_len,):
        raise DimensionError(f'd1 has shape {d1.shape}, expected ({seq_len},)')
    t = time_index(seq_len)
    noise = rng.standard_normal(seq_len)
    return cfg.rho * coupling_g(d1) + trend_h(t) + periodic_p(t) + cfg.sigma2 * noise


def sample_statics(rng):
    s1 = int(rng.integers(1, 5))
    s2 = float(rng.uniform(10.0, 30.0))
    s3 = int(rng.integers(1, 6))
    s4 = int(rng.integers(1, 6))
    return s1, s2, s3, s4


def gen_target(d1, d2, statics, rng, cfg):
    s1, s2, _, s4 = statics
    if s2 <= 3:
        raise InvariantViolation(f's2={s2} reached the target equation; its support must stay above 3')
    d1 = np.asarray(d1, dtype=np.float64)
    d2 = np.asarray(d2, dtype=np.float64)
    if d1.shape != d2.shape:
        raise DimensionError(f'd1 {d1.shape} and d2 {d2.shape} differ')
    noise = rng.standard_normal(d1.shape[0])
    return (cfg.alpha1 * d1 * s1
            + cfg.alpha2 * (35.0 - s2) / (s2 - 3.0)
            + cfg.alpha3 * d2 * s4
            + cfg.sigma_y * noise)


def generate_sample(cfg, index):
    rng = sample_stream(cfg.seed, index)
    statics = sample_statics(rng)
    d1 = gen_dynamic1(cfg.seq_len, rng, cfg)
    d2 = gen_dynamic2(d1, cfg.seq_len, rng, cfg)
    y = gen_target(d1, d2, statics, rng, cfg)
    X = np.empty((cfg.seq_len, len(FEATURE_NAMES)), dtype=np.float64)
    X[:, 0] = d1
    X[:, 1] = d2
    X[:, 2:] = np.asarray(statics, dtype=np.float64)
    return SeriesSample(X=X, y=y)


def generate_dataset(cfg, workers=1):
    if workers <= 1:
        samples = [generate_sample(cfg, i) for i in range(cfg.num_samples)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(lambda i: generate_sample(cfg, i), range(cfg.num_samples)))
    logger.info('Generated %d synthetic samples (T=%d, seed=%d)', cfg.num_samples, cfg.seq_len, cfg.seed)
    return samples


def preview_rows(sample, rows=6):
    """First rows of a sample as (t, d1, d2, s1, s2, s3, s4) tuples, rounded for display."""
    out = []
    for i in range(min(rows, sample.seq_len)):
        d1, d2, s1, s2, s3, s4 = sample.X[i]
        out.append((i + 1, round(d1, 2), round(d2, 2), int(s1), round(s2, 2), int(s3), int(s4)))
    return out

