import logging
from pathlib import Path

import pandas as pd

from ...data_io import save_synthetic
from ...forms import GenerateForm
from ...runs import RunRecorder, generate_defaults
from ...synthgen import FEATURE_NAMES, preview_rows
from ..base import ExperimentCommand

logger = logging.getLogger(__name__)


class Command(ExperimentCommand):
    help = 'Generate the synthetic train (seed 42) and test (seed 101) datasets'
    form_class = GenerateForm
    defaults = staticmethod(generate_defaults)

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--n', type=int, help='Samples per split')
        parser.add_argument('--t', type=int, help='Sequence length T')
        parser.add_argument('--train-seed', type=int)
        parser.add_argument('--test-seed', type=int)
        for name in ('alpha1', 'alpha2', 'alpha3', 'sigma1', 'sigma2', 'sigma-y', 'rho'):
            parser.add_argument(f'--{name}', type=float)
        parser.add_argument('--workers', type=int, help='Generator threads; output is identical for any count')
        parser.add_argument('--preview', action='store_const', const=True, default=None,
                            help='Log the first six steps of the first training sample')

    def run(self, form, sections):
        flags = form.cleaned_data
        out = Path(flags['out'])
        seeds = {'train': flags['train_seed'], 'test': flags['test_seed']}
        with RunRecorder('generate', out, flags, seeds=seeds) as recorder:
            for split, seed in seeds.items():
                cfg = form.synth_config(seed)
                samples, path = save_synthetic(cfg, out / f'{split}.pcds', workers=flags['workers'])
                recorder.add_output(split, path)
                recorder.add_dataset(split, path)
                if split == 'train' and flags['preview']:
                    table = pd.DataFrame(preview_rows(samples[0]), columns=('t',) + FEATURE_NAMES)
                    logger.info('First training sample:\n%s', table.to_string(index=False))

        self.stdout.write(self.style.SUCCESS(
            f"Generated {flags['n']} train and {flags['n']} test samples (T={flags['t']}) in {out}"
        ))
