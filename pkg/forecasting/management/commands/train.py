import logging
from pathlib import Path

from ... import __version__
from ...data_io import load_dataset, save_checkpoint, save_loss_log
from ...exceptions import ConfigurationError, TrainingDiverged
from ...forms import TrainForm
from ...runs import RunRecorder, training_defaults
from ...training import ProposedModel, build_configs, check_encoder, load_model, save_encoder, save_model, train_model
from ..base import ExperimentCommand

logger = logging.getLogger(__name__)


def load_encoder(path):
    """Frozen stage-1 encoder from an encoder or proposed checkpoint"""
    model, _ = load_model(path)
    if isinstance(model, ProposedModel):
        return model.encoder
    if model.kind != 'encoder':
        raise ConfigurationError(f'{path} holds a {model.kind} model, not a stage-1 encoder')
    return model


def training_defaults_with_model(desk_scale):
    return {**training_defaults(desk_scale), 'model': 'proposed', 'encoder_checkpoint': ''}


class Command(ExperimentCommand):
    help = 'Train the proposed two-stage model or a TCN / PatchTST baseline on a dataset file'
    form_class = TrainForm
    defaults = staticmethod(training_defaults_with_model)

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--model', help='proposed | tcn | patchtst')
        parser.add_argument('--dataset', help='Training dataset (.pcds)')
        parser.add_argument('--seed', type=int, help='Training seed: initialization, shuffling and dropout')
        parser.add_argument('--horizon', type=int, help='Forecast horizon h in patches')
        parser.add_argument('--patch-len', type=int, help='Patch length P')
        parser.add_argument('--lr', type=float)
        parser.add_argument('--batch-size', type=int)
        parser.add_argument('--stage1-epochs', type=int)
        parser.add_argument('--stage2-epochs', type=int)
        parser.add_argument('--baseline-epochs', type=int)
        parser.add_argument('--encoder-checkpoint', help='Reuse this frozen encoder and skip stage 1')

    def run(self, form, sections):
        flags = form.cleaned_data
        out = Path(flags['out'])
        kind = flags['model']
        train_cfg = form.train_config(sections.get('training'))

        with RunRecorder('train', out, flags, seeds={'train': train_cfg.seed}) as recorder:
            recorder.manifest.config['training'] = train_cfg.to_dict()
            samples, manifest = load_dataset(flags['dataset'])
            digest = recorder.add_dataset('train', flags['dataset'])
            encoder = None
            if flags['encoder_checkpoint']:
                encoder = load_encoder(flags['encoder_checkpoint'])
                check_encoder(encoder, manifest.num_features, flags['patch_len'])
                sections = {**sections, 'encoder': encoder.config_dict()}
            configs = build_configs(kind, manifest.num_features, flags['patch_len'], flags['horizon'], sections)
            recorder.manifest.config.update({name: cfg.to_dict() for name, cfg in configs.items()})
            resolved = recorder.manifest.config

            try:
                model, histories = train_model(kind, samples, configs, train_cfg, encoder=encoder)
            except TrainingDiverged as e:
                self.keep_partial(e, kind, resolved, out, recorder)
                raise

            for name, history in histories.items():
                recorder.add_output(f'{name}_loss', save_loss_log(out / f'{name}_loss.csv', history))
            if kind == 'proposed' and encoder is None:
                recorder.add_output('encoder', save_encoder(out / 'proposed_encoder.pckp', model.encoder, train_cfg))
            checkpoint = save_model(out / f'{kind}.pckp', model, train_cfg, extra={'dataset_digest': digest})
            recorder.add_output('checkpoint', checkpoint)

        self.stdout.write(self.style.SUCCESS(f'Trained {kind} model; checkpoint at {checkpoint}'))

    def keep_partial(self, error, kind, resolved, out, recorder):
        """Loss logs up to the failure and the last finite parameters of the failing stage"""
        for name, history in error.completed.items():
            recorder.add_output(f'{name}_loss', save_loss_log(out / f'{name}_loss.csv', history))
        recorder.add_output(f'{error.stage}_loss', save_loss_log(out / f'{error.stage}_loss.csv', error.history))
        partial = save_checkpoint(out / f'{error.stage}_last_finite.pckp', {
            'kind': 'diverged',
            'model': kind,
            'stage': error.stage,
            'epochs_completed': len(error.history),
            'config': resolved,
            'tool_version': __version__,
        }, error.last_finite_state)
        recorder.add_output('last_finite_checkpoint', partial)
        logger.error('Training diverged in %s; kept %d epochs of loss log and %s',
                     error.stage, len(error.history), partial)
