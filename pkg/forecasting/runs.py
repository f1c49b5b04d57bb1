"""Flag resolution and run records shared by the experiment commands.

Flag values resolve as command line > ``--config`` JSON file > ``settings.PATCHCAST``
> dataclass defaults. Every command writes ``<command>_manifest.json`` beside its
outputs and, when the run registry is migrated, an ``ExperimentRun`` row.
"""
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from django.conf import settings
from django.db import DatabaseError
from django.utils import timezone

from . import __version__
from .data_io import file_digest, read_json, write_json
from .exceptions import FormatError, UsageError
from .models import ExperimentRun, MetricsRecord
from .synthgen import SynthConfig

logger = logging.getLogger(__name__)

# nested hyperparameter records a config file may override
SECTION_KEYS = ('encoder', 'forecaster', 'tcn', 'patchtst', 'training')


def load_config_file(path):
    """Flag values from a JSON object; a run manifest replays as its resolved config."""
    data = read_json(path)
    if isinstance(data, dict) and 'command' in data and isinstance(data.get('config'), dict):
        data = data['config']
    if not isinstance(data, dict):
        raise FormatError(f'{path}: config file must hold a JSON object')
    return data


def resolve_flags(form_class, options, defaults, config_path=None):
    """Merge the flag sources and validate them; returns (bound form, config sections).

    ``defaults`` is called with the resolved desk-scale switch and returns the
    settings-level values for every form field.
    """
    file_config = load_config_file(config_path) if config_path else {}
    names = set(form_class.base_fields)
    unknown = sorted(set(file_config) - names - set(SECTION_KEYS))
    if unknown:
        raise UsageError(f'--config: unknown keys in {config_path}: {", ".join(unknown)}')
    for key in SECTION_KEYS:
        if key in file_config and not isinstance(file_config[key], dict):
            raise UsageError(f'--config: section {key!r} must be a JSON object')

    cli = {name: options[name] for name in names if options.get(name) is not None}
    desk_scale = bool(cli.get('desk_scale', file_config.get('desk_scale', False)))
    data = dict(defaults(desk_scale))
    data.update({k: v for k, v in file_config.items() if k in names})
    data.update(cli)
    data = {k: str(v) if isinstance(v, Path) else v for k, v in data.items()}

    form = form_class(data=data)
    if not form.is_valid():
        raise UsageError('; '.join(form.flag_errors()))
    sections = {k: file_config[k] for k in SECTION_KEYS if k in file_config}
    return form, sections


# Settings-level defaults per command

def _patchcast():
    return settings.PATCHCAST


def generate_defaults(desk_scale):
    conf = _patchcast()
    synth = SynthConfig()
    return {
        'out': conf['OUTPUT_DIR'],
        'desk_scale': desk_scale,
        'n': conf['DESK_SCALE']['num_samples'] if desk_scale else conf['NUM_SAMPLES'],
        't': conf['SEQ_LEN'],
        'train_seed': conf['TRAIN_SEED'],
        'test_seed': conf['TEST_SEED'],
        'alpha1': synth.alpha1,
        'alpha2': synth.alpha2,
        'alpha3': synth.alpha3,
        'sigma1': synth.sigma1,
        'sigma2': synth.sigma2,
        'sigma_y': synth.sigma_y,
        'rho': synth.rho,
        'workers': 1,
        'preview': False,
    }


def training_defaults(desk_scale):
    conf = _patchcast()
    training = conf['TRAINING']
    data = {
        'out': conf['OUTPUT_DIR'],
        'desk_scale': desk_scale,
        'seed': training['seed'],
        'horizon': conf['HORIZON'],
        'patch_len': conf['PATCH_LEN'],
        'lr': training['lr'],
        'batch_size': training['batch_size'],
        'stage1_epochs': training['stage1_epochs'],
        'stage2_epochs': training['stage2_epochs'],
        'baseline_epochs': training['baseline_epochs'],
    }
    if desk_scale:
        for key in ('stage1_epochs', 'stage2_epochs', 'baseline_epochs'):
            data[key] = conf['DESK_SCALE'][key]
    return data


def comparison_defaults(desk_scale):
    conf = _patchcast()
    return {
        **training_defaults(desk_scale),
        'reports': [],
        'end_to_end': False,
        'jobs': 1,
        'n': conf['DESK_SCALE']['num_samples'] if desk_scale else conf['NUM_SAMPLES'],
    }


def evaluation_defaults(desk_scale):
    conf = _patchcast()
    return {
        'out': conf['OUTPUT_DIR'],
        'desk_scale': desk_scale,
        'patch_len': conf['PATCH_LEN'],
        'horizon': conf['HORIZON'],
    }


def electricity_defaults(desk_scale):
    conf = _patchcast()
    return {
        'out': conf['OUTPUT_DIR'],
        'desk_scale': desk_scale,
        'num_features': 6,
        't': conf['SEQ_LEN'],
        'patch_len': conf['PATCH_LEN'],
        'horizon': conf['HORIZON'],
    }


# Run records

@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict = field(default_factory=dict)
    dataset_digests: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    tool_version: str = __version__
    started_at: str = None
    finished_at: str = None
    status: str = 'running'
    error: str = None

    def to_dict(self):
        return asdict(self)


class RunRecorder:
    """Context manager that writes the manifest and mirrors it into the run registry.

    The manifest is written whether the run completes or fails; the exception
    is never swallowed.
    """

    def __init__(self, command, out_dir, config, seeds=None):
        self.out_dir = Path(out_dir)
        self.manifest = RunManifest(command=command, config=dict(config), seeds=dict(seeds or {}))
        self.run = None

    @property
    def manifest_path(self):
        return self.out_dir / f'{self.manifest.command}_manifest.json'

    def __enter__(self):
        started = timezone.now()
        self.manifest.started_at = started.isoformat()
        try:
            self.run = ExperimentRun.objects.create(
                command=self.manifest.command,
                config=self.manifest.config,
                seeds=self.manifest.seeds,
                tool_version=self.manifest.tool_version,
                started_at=started,
            )
        except DatabaseError as e:
            logger.warning('Run registry unavailable (%s); run "manage.py migrate" to record runs', e)
        return self

    def add_dataset(self, name, path):
        digest = file_digest(path)
        self.manifest.dataset_digests[name] = digest
        return digest

    def add_output(self, name, path):
        self.manifest.outputs[name] = str(path)
        return path

    def record_metrics(self, report, path=None):
        if self.run is None:
            return None
        return MetricsRecord.objects.create(
            run=self.run,
            model_name=report.model_name,
            mse=report.mse,
            mae=report.mae,
            num_eval_pairs=report.num_eval_pairs,
            config_hash=report.config_hash,
            dataset_digest=report.dataset_digest or '',
            report_path=str(path or ''),
        )

    def __exit__(self, exc_type, exc, tb):
        finished = timezone.now()
        self.manifest.finished_at = finished.isoformat()
        self.manifest.status = 'failed' if exc is not None else 'completed'
        if exc is not None:
            self.manifest.error = str(exc)
        write_json(self.manifest_path, self.manifest.to_dict())
        if self.run is not None:
            self.run.status = self.manifest.status
            self.run.config = self.manifest.config
            self.run.error = self.manifest.error or ''
            self.run.dataset_digests = self.manifest.dataset_digests
            self.run.output_paths = self.manifest.outputs
            self.run.manifest_path = str(self.manifest_path)
            self.run.finished_at = finished
            self.run.save()
        logger.info('%s run %s; manifest at %s', self.manifest.command, self.manifest.status, self.manifest_path)
        return False
