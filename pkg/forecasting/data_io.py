"""Dataset / checkpoint containers and UCI electricity load ingestion.

Dataset container (little-endian)::

    b'PCDS' | u16 version | u32 manifest length | manifest JSON (UTF-8)
    | N*T*F float64 (X, row-major) | N*T float64 (y)

Checkpoint container (little-endian)::

    b'PCKP' | u16 version | u32 metadata length | metadata JSON (UTF-8)
    | u32 tensor count | per tensor: u32 name length, name (UTF-8),
      u32 rank, rank * u64 dims, float64 values
"""
import hashlib
import json
import logging
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import (
    ConfigurationError, FormatError, IntegrityError, ParseError, StorageError, VersionError,
)
from .patching import check_horizon, num_patches
from .synthgen import FEATURE_NAMES, SeriesSample, generate_dataset

logger = logging.getLogger(__name__)

DATASET_MAGIC = b'PCDS'
CHECKPOINT_MAGIC = b'PCKP'
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1

_F64 = np.dtype('<f8')


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(',', ':'), default=str)


def config_hash(config):
    return hashlib.sha256(canonical_json(config).encode('utf-8')).hexdigest()


def file_digest(path):
    digest = hashlib.sha256()
    try:
        with open(path, 'rb') as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b''):
                digest.update(chunk)
    except OSError as exc:
        raise StorageError(f'cannot read {exc.strerror}', path) from exc
    return digest.hexdigest()


def reproducible_timestamp():
    """ISO timestamp from SOURCE_DATE_EPOCH, or None so containers stay byte-reproducible."""
    epoch = os.environ.get('SOURCE_DATE_EPOCH')
    if not epoch:
        return None
    return pd.Timestamp(int(epoch), unit='s', tz='UTC').isoformat()


@dataclass
class DatasetManifest:
    kind: str
    num_samples: int
    seq_len: int
    num_features: int
    config: dict = field(default_factory=dict)
    seed: int = None
    source_digest: str = None
    created_at: str = None
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def __post_init__(self):
        if self.kind not in ('synthetic', 'electricity'):
            raise ConfigurationError(f'unknown dataset kind {self.kind!r}')

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        try:
            manifest = cls(**data)
        except (TypeError, ConfigurationError) as exc:
            raise FormatError(f'manifest fields do not match the schema: {exc}') from exc
        for name in ('num_samples', 'seq_len', 'num_features'):
            value = getattr(manifest, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise FormatError(f'manifest field {name} must be an integer, got {value!r}')
        return manifest

    @property
    def config_hash(self):
        return config_hash(self.config)


# Shared container plumbing

def _write_bytes(path, payload):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as exc:
        raise StorageError(f'cannot write {exc.strerror}', path) from exc
    logger.info('Wrote %s (%d bytes)', path, len(payload))


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise StorageError('no such file', path) from exc
    except OSError as exc:
        raise StorageError(f'cannot read {exc.strerror}', path) from exc


def _header(magic, version, meta):
    body = canonical_json(meta).encode('utf-8')
    return magic + struct.pack('<HI', version, len(body)) + body


class _Reader:
    def __init__(self, payload, path):
        self.payload = payload
        self.path = path
        self.offset = 0

    def take(self, size, what):
        end = self.offset + size
        if end > len(self.payload):
            raise IntegrityError(f'{self.path}: truncated while reading {what} '
                                 f'(need {size} bytes at offset {self.offset}, file has {len(self.payload)})')
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    @property
    def remaining(self):
        return len(self.payload) - self.offset


def _read_header(reader, magic, supported_version):
    found = reader.take(4, 'magic')
    if found != magic:
        raise FormatError(f'{reader.path}: bad magic {found!r}, expected {magic!r}')
    version, length = reader.unpack('<HI', 'header')
    if version != supported_version:
        raise VersionError(f'{reader.path}: container version {version} is not supported (expected {supported_version})')
    try:
        meta = json.loads(reader.take(length, 'metadata').decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f'{reader.path}: metadata is not valid UTF-8 JSON: {exc}') from exc
    if not isinstance(meta, dict):
        raise FormatError(f'{reader.path}: metadata must be a JSON object, got {type(meta).__name__}')
    return meta


# Datasets

def save_dataset(samples, manifest, path):
    n, t, f = manifest.num_samples, manifest.seq_len, manifest.num_features
    if len(samples) != n:
        raise IntegrityError(f'manifest declares {n} samples, got {len(samples)}')
    for i, sample in enumerate(samples):
        if sample.X.shape != (t, f) or sample.y.shape != (t,):
            raise IntegrityError(
                f'sample {i} has X {sample.X.shape} / y {sample.y.shape}, manifest declares T={t}, F={f}'
            )
    X = np.stack([s.X for s in samples]).astype(_F64, copy=False)
    y = np.stack([s.y for s in samples]).astype(_F64, copy=False)
    payload = _header(DATASET_MAGIC, DATASET_VERSION, manifest.to_dict()) + X.tobytes() + y.tobytes()
    _write_bytes(path, payload)
    return Path(path)


def load_dataset(path):
    reader = _Reader(_read_bytes(path), path)
    manifest = DatasetManifest.from_dict(_read_header(reader, DATASET_MAGIC, DATASET_VERSION))
    n, t, f = manifest.num_samples, manifest.seq_len, manifest.num_features
    if min(n, t, f) < 1:
        raise IntegrityError(f'{path}: manifest declares an empty dataset (N={n}, T={t}, F={f})')
    expected = (n * t * f + n * t) * _F64.itemsize
    if reader.remaining != expected:
        raise IntegrityError(f'{path}: {reader.remaining} payload bytes, manifest declares {expected}')
    X = np.frombuffer(reader.take(n * t * f * 8, 'X'), dtype=_F64).reshape(n, t, f)
    y = np.frombuffer(reader.take(n * t * 8, 'y'), dtype=_F64).reshape(n, t)
    samples = [SeriesSample(X=X[i].astype(np.float64), y=y[i].astype(np.float64)) for i in range(n)]
    return samples, manifest


def save_synthetic(cfg, path, workers=1):
    """Generate one synthetic split and write it; returns (samples, path)."""
    samples = generate_dataset(cfg, workers=workers)
    manifest = DatasetManifest(
        kind='synthetic',
        num_samples=cfg.num_samples,
        seq_len=cfg.seq_len,
        num_features=len(FEATURE_NAMES),
        config=cfg.to_dict(),
        seed=cfg.seed,
        created_at=reproducible_timestamp(),
    )
    return samples, save_dataset(samples, manifest, path)


def stack_samples(samples):
    if not samples:
        raise ConfigurationError('dataset is empty')
    return np.stack([s.X for s in samples]), np.stack([s.y for s in samples])


# Checkpoints

def save_checkpoint(path, metadata, arrays):
    parts = [_header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, metadata), struct.pack('<I', len(arrays))]
    for name, array in arrays.items():
        array = np.ascontiguousarray(array, dtype=_F64)
        encoded = name.encode('utf-8')
        parts.append(struct.pack('<I', len(encoded)) + encoded)
        parts.append(struct.pack('<I', array.ndim) + struct.pack(f'<{array.ndim}Q', *array.shape))
        parts.append(array.tobytes())
    _write_bytes(path, b''.join(parts))
    return Path(path)


def load_checkpoint(path):
    reader = _Reader(_read_bytes(path), path)
    metadata = _read_header(reader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    (count,) = reader.unpack('<I', 'tensor count')
    arrays = {}
    for _ in range(count):
        (name_len,) = reader.unpack('<I', 'tensor name length')
        try:
            name = reader.take(name_len, 'tensor name').decode('utf-8')
        except UnicodeDecodeError as exc:
            raise FormatError(f'{path}: tensor name is not UTF-8') from exc
        (rank,) = reader.unpack('<I', f'rank of {name!r}')
        dims = reader.unpack(f'<{rank}Q', f'dims of {name!r}')
        size = math.prod(dims)
        values = np.frombuffer(reader.take(size * 8, f'values of {name!r}'), dtype=_F64)
        arrays[name] = values.reshape(dims).astype(np.float64)
    if reader.remaining:
        raise IntegrityError(f'{path}: {reader.remaining} trailing bytes after {count} tensors')
    return metadata, arrays


# Electricity load data

@dataclass(frozen=True)
class ElectricityFrame:
    timestamps: pd.DatetimeIndex
    meters: tuple
    values: np.ndarray


@dataclass(frozen=True)
class ElectricityConfig:
    source_path: str = ''
    target_meter: str = None
    input_meters: tuple = None
    num_features: int = 6
    seq_len: int = 160
    train_stride: int = None
    test_stride: int = None
    split_boundary: str = None
    patch_len: int = 8
    horizon: int = 1

    def __post_init__(self):
        if self.input_meters is not None:
            object.__setattr__(self, 'input_meters', tuple(self.input_meters))
        if self.patch_len < 1 or self.seq_len < self.patch_len:
            raise ConfigurationError(f'window length T={self.seq_len} must be >= patch length P={self.patch_len}')
        for name in ('train_stride', 'test_stride'):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigurationError(f'{name} must be >= 1, got {value}')
        if self.num_features < 1:
            raise ConfigurationError(f'num_features must be >= 1, got {self.num_features}')
        check_horizon(num_patches(self.seq_len, self.patch_len), self.horizon)

    @property
    def resolved_train_stride(self):
        return self.train_stride or max(1, self.seq_len // 2)

    @property
    def resolved_test_stride(self):
        return self.test_stride or self.seq_len

    def to_dict(self):
        data = asdict(self)
        data['input_meters'] = list(self.input_meters) if self.input_meters is not None else None
        data['train_stride'] = self.resolved_train_stride
        data['test_stride'] = self.resolved_test_stride
        return data


@dataclass(frozen=True)
class MeterStats:
    """Per-meter z-score statistics fitted on the training split."""
    meters: tuple
    mean: np.ndarray
    std: np.ndarray
    excluded: dict = field(default_factory=dict)

    def index(self, meter):
        try:
            return self.meters.index(meter)
        except ValueError:
            reason = self.excluded.get(meter, 'not present in the source file')
            raise ConfigurationError(f'meter {meter!r} is unavailable: {reason}') from None


def load_electricity(path):
    """Parse the published semicolon-separated, decimal-comma load file."""
    path = Path(path)
    if not path.exists():
        raise StorageError('no such file', path)
    try:
        raw = pd.read_csv(path, sep=';', dtype=str, keep_default_na=False, header=0)
    except pd.errors.EmptyDataError as exc:
        raise ParseError('file is empty', line=1) from exc
    except pd.errors.ParserError as exc:
        raise ParseError(str(exc).strip()) from exc
    except OSError as exc:
        raise StorageError(f'cannot read {exc.strerror}', path) from exc
    if raw.shape[0] == 0:
        raise ParseError('no data rows after the header', line=2)
    if raw.shape[1] < 2:
        raise ParseError('expected a timestamp column and at least one meter column', line=1)

    # header is line 1, so data row i sits on line i + 2
    stamps = pd.to_datetime(raw.iloc[:, 0], format='%Y-%m-%d %H:%M:%S', errors='coerce')
    bad = np.flatnonzero(stamps.isna().to_numpy())
    if bad.size:
        row = bad[0]
        raise ParseError(f'unparseable timestamp {raw.iloc[row, 0]!r}', line=row + 2, column=0)

    meters = tuple(str(c) for c in raw.columns[1:])
    values = np.empty((raw.shape[0], len(meters)), dtype=np.float64)
    for j in range(len(meters)):
        column = raw.iloc[:, j + 1]
        parsed = pd.to_numeric(column.str.replace(',', '.', regex=False), errors='coerce')
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if bad.size:
            row = bad[0]
            raise ParseError(f'unparseable reading {column.iloc[row]!r} for meter {meters[j]}',
                             line=row + 2, column=j + 1)
        values[:, j] = parsed.to_numpy(dtype=np.float64)
    logger.info('Parsed %d rows x %d meters from %s', values.shape[0], len(meters), path)
    return ElectricityFrame(timestamps=pd.DatetimeIndex(stamps), meters=meters, values=values)


def split_boundary(frame, cfg):
    if cfg.split_boundary:
        return pd.Timestamp(cfg.split_boundary)
    return pd.Timestamp(year=frame.timestamps[-1].year, month=1, day=1)


def fit_meter_stats(values, meters):
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    keep, excluded = [], {}
    for j, meter in enumerate(meters):
        if not np.isfinite(std[j]) or std[j] == 0.0:
            excluded[meter] = 'zero variance on the training split'
            logger.info('Excluding meter %s: zero variance on the training split', meter)
        else:
            keep.append(j)
    return MeterStats(
        meters=tuple(meters[j] for j in keep), mean=mean[keep], std=std[keep], excluded=excluded,
    ), keep


def select_features(stats, cfg):
    target = cfg.target_meter or (stats.meters[0] if stats.meters else None)
    if target is None:
        raise ConfigurationError('no meter with non-zero variance is available')
    if target in stats.excluded:
        raise ConfigurationError(f'target meter {target!r} has zero variance on the training split')
    stats.index(target)
    if cfg.input_meters is not None:
        inputs = list(cfg.input_meters)
        if target not in inputs:
            inputs.insert(0, target)
    else:
        inputs = [target] + [m for m in stats.meters if m != target][:cfg.num_features - 1]
    if len(inputs) != cfg.num_features:
        raise ConfigurationError(f'{len(inputs)} feature meters selected, {cfg.num_features} required')
    return target, inputs


def window_starts(num_rows, seq_len, stride):
    return list(range(0, num_rows - seq_len + 1, stride))


def _windows(normalized, feature_idx, target_idx, seq_len, stride):
    return [
        SeriesSample(X=normalized[s:s + seq_len, feature_idx].copy(), y=normalized[s:s + seq_len, target_idx].copy())
        for s in window_starts(normalized.shape[0], seq_len, stride)
    ]


def normalize_and_window(frame, cfg):
    boundary = split_boundary(frame, cfg)
    train_rows = np.asarray(frame.timestamps <= boundary)
    test_rows = ~train_rows
    stats, keep = fit_meter_stats(frame.values[train_rows], frame.meters)
    target, inputs = select_features(stats, cfg)
    normalized = (frame.values[:, keep] - stats.mean) / stats.std
    feature_idx = [stats.index(m) for m in inputs]
    target_idx = stats.index(target)

    train = _windows(normalized[train_rows], feature_idx, target_idx, cfg.seq_len, cfg.resolved_train_stride)
    test = _windows(normalized[test_rows], feature_idx, target_idx, cfg.seq_len, cfg.resolved_test_stride)
    if not train or not test:
        raise ConfigurationError(
            f'not enough rows for a {cfg.seq_len}-step window on both sides of {boundary} '
            f'({int(train_rows.sum())} train rows, {int(test_rows.sum())} test rows)'
        )
    logger.info('Electricity windows: %d train, %d test (target %s, boundary %s)',
                len(train), len(test), target, boundary)
    return train, test, stats


# Run artifacts

def write_json(path, data):
    payload = (json.dumps(data, indent=2, sort_keys=True, default=str) + '\n').encode('utf-8')
    _write_bytes(path, payload)
    return Path(path)


def read_json(path):
    try:
        return json.loads(_read_bytes(path).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f'{path}: not valid UTF-8 JSON: {exc}') from exc


def _write_frame(path, frame):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
    except OSError as exc:
        raise StorageError(f'cannot write {exc.strerror}', path) from exc
    logger.info('Wrote %s (%d rows)', path, len(frame))
    return path


def save_loss_log(path, history):
    """Per-epoch training loss as ``epoch,loss``; epochs are 1-based."""
    frame = pd.DataFrame({'epoch': np.arange(1, len(history) + 1), 'loss': np.asarray(history, dtype=np.float64)})
    return _write_frame(path, frame)


def load_loss_log(path):
    if not Path(path).exists():
        raise StorageError('no such file', path)
    frame = pd.read_csv(path, float_precision='round_trip')
    if list(frame.columns) != ['epoch', 'loss']:
        raise FormatError(f'{path}: expected header epoch,loss, got {",".join(frame.columns)}')
    return frame['loss'].to_list()


def save_comparison(rows, csv_path, text_path):
    """Write the model x {MSE, MAE} table as CSV and as an aligned plain-text rendering."""
    frame = pd.DataFrame(rows, columns=['model', 'mse', 'mae', 'num_eval_pairs'])
    _write_frame(csv_path, frame)
    text = frame.to_string(index=False, float_format=lambda v: f'{v:.6f}') + '\n'
    _write_bytes(text_path, text.encode('utf-8'))
    return text
