"""Two-stage training of the proposed model, baseline training, and patch-level evaluation."""
import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from . import numerics as nx
from .baselines import PatchTstConfig, PatchTstModel, TcnConfig, TcnModel
from .data_io import config_hash, load_checkpoint, read_json, save_checkpoint, stack_samples, write_json
from .exceptions import (
    ConfigurationError, DimensionError, FormatError, InvariantViolation, NumericalError, TrainingDiverged,
)
from .forecaster import Forecaster, ForecasterConfig
from .patch_encoder import EncoderConfig, PatchEncoder
from .patching import aggregate_targets, align_horizon, check_horizon, horizon_labels, num_patches, patchify

logger = logging.getLogger(__name__)

MODEL_KINDS = ('proposed', 'tcn', 'patchtst')

# tags separating the RNG streams derived from one training seed
_ENCODER_INIT, _PROBE_INIT, _FORECASTER_INIT, _BASELINE_INIT, _SHUFFLE, _DROPOUT = range(6)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    stage1_epochs: int = 2000
    stage2_epochs: int = 300
    baseline_epochs: int = 300
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    desk_scale: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError(f'lr must be > 0, got {self.lr}')
        if self.batch_size < 1:
            raise ConfigurationError(f'batch_size must be >= 1, got {self.batch_size}')
        for name in ('stage1_epochs', 'stage2_epochs', 'baseline_epochs'):
            if getattr(self, name) < 1:
                raise ConfigurationError(f'{name} must be >= 1, got {getattr(self, name)}')

    def optimizer(self, params):
        return nx.AdamW(params, lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                        eps=self.eps, weight_decay=self.weight_decay)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class MetricsReport:
    model_name: str
    mse: float
    mae: float
    num_eval_pairs: int
    config_hash: str
    dataset_digest: str = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(**data)
        except TypeError as exc:
            raise FormatError(f'metrics report fields do not match the schema: {exc}') from exc


def save_report(path, report):
    return write_json(path, report.to_dict())


def load_report(path):
    data = read_json(path)
    if not isinstance(data, dict):
        raise FormatError(f'{path}: metrics report must be a JSON object')
    return MetricsReport.from_dict(data)


def rank_reports(reports):
    """Reports ordered by MSE; ties keep their input order."""
    return sorted(reports, key=lambda r: r.mse)


def derive_seed(seed, tag):
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def stream(seed, tag):
    return np.random.default_rng(derive_seed(seed, tag))


# Metrics

def mse_mae(preds, targets):
    """Mean squared and absolute error over every sample and predicted patch."""
    if len(preds) != len(targets):
        raise DimensionError(f'{len(preds)} prediction rows for {len(targets)} target rows')
    if len(preds) == 0:
        raise ConfigurationError('cannot score an empty prediction set')
    errors = []
    for i, (p, t) in enumerate(zip(preds, targets)):
        p, t = np.asarray(p, dtype=np.float64), np.asarray(t, dtype=np.float64)
        if p.shape != t.shape:
            raise DimensionError(f'sample {i}: prediction {p.shape} != target {t.shape}')
        errors.append((p - t).ravel())
    errors = np.concatenate(errors)
    if errors.size == 0:
        raise ConfigurationError('cannot score an empty prediction set')
    return float(np.mean(errors * errors)), float(np.mean(np.abs(errors)))


# Models

class ProposedModel:
    """Frozen stage-1 patch encoder feeding the stage-2 forecaster."""

    kind = 'proposed'

    def __init__(self, encoder, forecaster):
        if encoder.cfg.token_dim != forecaster.cfg.input_dim:
            raise ConfigurationError(
                f'encoder token_dim {encoder.cfg.token_dim} != forecaster input_dim {forecaster.cfg.input_dim}'
            )
        self.encoder = encoder
        self.forecaster = forecaster

    @property
    def patch_len(self):
        return self.encoder.cfg.patch_len

    @property
    def horizon(self):
        return self.forecaster.cfg.horizon

    def forward(self, X, rng=None, training=False):
        tokens = self.encoder.forward(patchify(X, self.patch_len))
        return self.forecaster.forward(tokens, rng, training)

    def predict(self, X, y=None):
        return self.forward(X).numpy()

    def config_dict(self):
        return {'encoder': self.encoder.config_dict(), 'forecaster': self.forecaster.config_dict()}


def fit(params, loss_fn, num_samples, epochs, train_cfg, label):
    """Mini-batch AdamW over ``num_samples`` items; returns the per-epoch mean loss.

    ``loss_fn(indices, dropout_rng)`` builds the scalar batch loss. A non-finite
    loss or gradient raises ``TrainingDiverged`` carrying the last finite state.
    """
    optimizer = train_cfg.optimizer(params)
    shuffle_rng = stream(train_cfg.seed, _SHUFFLE)
    dropout_rng = stream(train_cfg.seed, _DROPOUT)
    history = []
    last_finite = {name: t.data.copy() for name, t in optimizer.named_params}
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(num_samples)
        total = 0.0
        for start in range(0, num_samples, train_cfg.batch_size):
            batch = order[start:start + train_cfg.batch_size]
            optimizer.zero_grad()
            try:
                with nx.Tape() as tape:
                    loss = loss_fn(batch, dropout_rng)
                tape.backward(loss)
                optimizer.step()
            except NumericalError as exc:
                logger.error('%s diverged in epoch %d: %s', label, epoch, exc)
                raise TrainingDiverged(f'{label} diverged in epoch {epoch}: {exc}', last_finite, history) from exc
            total += loss.item() * len(batch)
        history.append(total / num_samples)
        last_finite = {name: t.data.copy() for name, t in optimizer.named_params}
        logger.debug('%s epoch %d/%d loss %.6f', label, epoch, epochs, history[-1])
    logger.info('%s finished %d epochs: loss %.6f -> %.6f', label, epochs, history[0], history[-1])
    return history


def _dataset_arrays(dataset, patch_len, horizon):
    X, y = stack_samples(dataset)
    check_horizon(num_patches(X.shape[1], patch_len), horizon)
    return X, y, horizon_labels(y, patch_len, horizon)


def train_stage1(dataset, enc_cfg, train_cfg, horizon=1):
    """Train encoder + linear probe on horizon-aligned patch targets; returns (frozen encoder, probe, history)."""
    X, y, _ = _dataset_arrays(dataset, enc_cfg.patch_len, horizon)
    if X.shape[-1] != enc_cfg.in_features:
        raise ConfigurationError(f'dataset has {X.shape[-1]} features, encoder expects {enc_cfg.in_features}')
    patches = patchify(X, enc_cfg.patch_len).patches
    targets = aggregate_targets(y, enc_cfg.patch_len).values

    encoder = PatchEncoder(enc_cfg, seed=derive_seed(train_cfg.seed, _ENCODER_INIT))
    probe = nx.ParameterSet()
    init_rng = stream(train_cfg.seed, _PROBE_INIT)
    probe.add('probe.w', nx.glorot(init_rng, enc_cfg.token_dim, 1).reshape(enc_cfg.token_dim))
    probe.add('probe.b', np.zeros(1))

    def loss_fn(batch, rng):
        tokens = encoder.forward(patches[batch], rng, training=True)
        states, labels = align_horizon(tokens, targets[batch], horizon)
        pred = nx.add(nx.matmul(states, probe['probe.w']), probe['probe.b'])
        return nx.mse_loss(pred, labels)

    history = fit(encoder.params.named_parameters() + probe.named_parameters(),
                  loss_fn, len(X), train_cfg.stage1_epochs, train_cfg, 'stage 1 encoder')
    encoder.freeze()
    return encoder, probe, history


def encode_dataset(encoder, X, chunk=256):
    patches = patchify(X, encoder.cfg.patch_len).patches
    return np.concatenate([encoder.tokenize(patches[i:i + chunk]).tokens for i in range(0, len(patches), chunk)])


def train_stage2(dataset, encoder, fc_cfg, train_cfg):
    """Train the forecaster on tokens from the frozen encoder; returns (ProposedModel, history)."""
    if not encoder.frozen:
        raise InvariantViolation('stage 2 needs a frozen encoder')
    if fc_cfg.input_dim != encoder.cfg.token_dim:
        raise ConfigurationError(f'forecaster input_dim {fc_cfg.input_dim} != encoder token_dim {encoder.cfg.token_dim}')
    X, _, labels = _dataset_arrays(dataset, encoder.cfg.patch_len, fc_cfg.horizon)
    if X.shape[-1] != encoder.cfg.in_features:
        raise ConfigurationError(f'dataset has {X.shape[-1]} features, encoder expects {encoder.cfg.in_features}')
    before = encoder.params.fingerprint()
    tokens = encode_dataset(encoder, X)

    forecaster = Forecaster(fc_cfg, seed=derive_seed(train_cfg.seed, _FORECASTER_INIT))

    def loss_fn(batch, rng):
        return nx.mse_loss(forecaster.forward(tokens[batch], rng, training=True), labels[batch])

    history = fit(forecaster.params, loss_fn, len(X), train_cfg.stage2_epochs, train_cfg, 'stage 2 forecaster')
    if encoder.params.fingerprint() != before:
        raise InvariantViolation('encoder parameters changed during stage 2')
    return ProposedModel(encoder, forecaster), history


def build_baseline(kind, cfg, seed=0):
    if kind == 'tcn':
        return TcnModel(cfg, seed=seed)
    if kind == 'patchtst':
        return PatchTstModel(cfg, seed=seed)
    raise ConfigurationError(f'unknown baseline kind {kind!r}; expected tcn or patchtst')


def train_baseline(dataset, kind, cfg, train_cfg):
    """Single-stage end-to-end training of a TCN or PatchTST-style model; returns (model, history)."""
    model = build_baseline(kind, cfg, seed=derive_seed(train_cfg.seed, _BASELINE_INIT))
    X, _, labels = _dataset_arrays(dataset, cfg.patch_len, cfg.horizon)

    def loss_fn(batch, rng):
        return nx.mse_loss(model.forward(X[batch], rng, training=True), labels[batch])

    history = fit(model.params, loss_fn, len(X), train_cfg.baseline_epochs, train_cfg, f'{kind} baseline')
    return model, history


def _from_section(cls, section, **fixed):
    try:
        return cls(**{**(section or {}), **fixed})
    except TypeError as exc:
        raise ConfigurationError(f'{cls.__name__}: {exc}') from exc


def build_configs(kind, num_features, patch_len=8, horizon=1, sections=None):
    """Hyperparameter records for one model kind.

    ``sections`` maps ``encoder``/``forecaster``/``tcn``/``patchtst`` to overrides of
    the dataclass defaults; patch length, horizon and feature count always come
    from the arguments.
    """
    sections = sections or {}
    if kind == 'proposed':
        enc = _from_section(EncoderConfig, sections.get('encoder'), patch_len=patch_len, in_features=num_features)
        fc = _from_section(ForecasterConfig, sections.get('forecaster'), horizon=horizon, input_dim=enc.token_dim)
        return {'encoder': enc, 'forecaster': fc}
    if kind == 'tcn':
        return {'tcn': _from_section(TcnConfig, sections.get('tcn'),
                                     patch_len=patch_len, in_features=num_features, horizon=horizon)}
    if kind == 'patchtst':
        return {'patchtst': _from_section(PatchTstConfig, sections.get('patchtst'),
                                          patch_len=patch_len, in_features=num_features, horizon=horizon)}
    raise ConfigurationError(f'unknown model kind {kind!r}; expected one of {", ".join(MODEL_KINDS)}')


def check_encoder(encoder, num_features, patch_len):
    if encoder.cfg.in_features != num_features or encoder.cfg.patch_len != patch_len:
        raise ConfigurationError(
            f'encoder expects F={encoder.cfg.in_features}, P={encoder.cfg.patch_len}; '
            f'dataset has F={num_features}, run uses P={patch_len}'
        )


def train_model(kind, dataset, configs, train_cfg, encoder=None):
    """Train one model kind; returns (model, loss histories keyed by log name).

    A supplied frozen ``encoder`` skips stage 1 of the proposed model. On
    divergence the raised ``TrainingDiverged`` names the failing stage and
    carries the histories of the stages that completed.
    """
    histories = {}
    stage = f'{kind}_stage1' if kind == 'proposed' and encoder is None else kind
    try:
        if kind != 'proposed':
            model, histories[kind] = train_baseline(dataset, kind, configs[kind], train_cfg)
            return model, histories
        if encoder is None:
            encoder, _, histories[stage] = train_stage1(
                dataset, configs['encoder'], train_cfg, horizon=configs['forecaster'].horizon,
            )
        stage = kind
        model, histories[kind] = train_stage2(dataset, encoder, configs['forecaster'], train_cfg)
        return model, histories
    except TrainingDiverged as exc:
        exc.stage = stage
        exc.completed = histories
        raise


# Evaluation

def evaluate(model, dataset, dataset_digest=None, chunk=256):
    X, y = stack_samples(dataset)
    try:
        labels = horizon_labels(y, model.patch_len, model.horizon)
    except ConfigurationError as exc:
        raise ConfigurationError(f'{model.kind} model does not fit this dataset: {exc}') from exc
    preds = np.concatenate([model.predict(X[i:i + chunk], y[i:i + chunk]) for i in range(0, len(X), chunk)])
    if preds.shape != labels.shape:
        raise ConfigurationError(f'{model.kind} produced {preds.shape} forecasts for {labels.shape} labels')
    mse, mae = mse_mae(preds, labels)
    return MetricsReport(
        model_name=model.kind, mse=mse, mae=mae, num_eval_pairs=int(labels.size),
        config_hash=config_hash(model.config_dict()), dataset_digest=dataset_digest,
    )


# Checkpoints

def model_arrays(model):
    if isinstance(model, ProposedModel):
        arrays = {f'encoder.{n}': a for n, a in model.encoder.params.state_dict().items()}
        arrays.update({f'forecaster.{n}': a for n, a in model.forecaster.params.state_dict().items()})
        return arrays
    return model.params.state_dict()


def save_model(path, model, train_cfg=None, extra=None):
    metadata = {
        'kind': model.kind,
        'config': model.config_dict(),
        'train': train_cfg.to_dict() if train_cfg else None,
        'tool_version': __version__,
    }
    metadata.update(extra or {})
    return save_checkpoint(path, metadata, model_arrays(model))


def _split(arrays, prefix):
    start = len(prefix) + 1
    return {name[start:]: a for name, a in arrays.items() if name.startswith(prefix + '.')}


def load_model(path):
    """Rebuild a model of any checkpoint kind; encoders come back frozen."""
    metadata, arrays = load_checkpoint(path)
    kind, config = metadata.get('kind'), metadata.get('config') or {}
    try:
        if kind == 'encoder':
            encoder = PatchEncoder(EncoderConfig(**config))
            encoder.params.load_state_dict(arrays)
            encoder.freeze()
            return encoder, metadata
        if kind == 'proposed':
            encoder = PatchEncoder(EncoderConfig(**config['encoder']))
            encoder.params.load_state_dict(_split(arrays, 'encoder'))
            encoder.freeze()
            forecaster = Forecaster(ForecasterConfig(**config['forecaster']))
            forecaster.params.load_state_dict(_split(arrays, 'forecaster'))
            return ProposedModel(encoder, forecaster), metadata
        if kind == 'tcn':
            model = TcnModel(TcnConfig(**config))
        elif kind == 'patchtst':
            model = PatchTstModel(PatchTstConfig(**config))
        else:
            raise FormatError(f'{path}: unknown checkpoint kind {kind!r}')
    except (TypeError, KeyError) as exc:
        raise FormatError(f'{path}: checkpoint config does not match kind {kind!r}: {exc}') from exc
    model.params.load_state_dict(arrays)
    return model, metadata


def save_encoder(path, encoder, train_cfg=None):
    return save_checkpoint(path, {
        'kind': 'encoder', 'config': encoder.config_dict(),
        'train': train_cfg.to_dict() if train_cfg else None, 'tool_version': __version__,
    }, encoder.params.state_dict())
