from pathlib import Path

from ...data_io import (
    DatasetManifest, ElectricityConfig, load_electricity, normalize_and_window, reproducible_timestamp, save_dataset,
    select_features,
)
from ...forms import ElectricityPrepareForm
from ...runs import RunRecorder, electricity_defaults
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Normalize the UCI electricity load file per meter and window it into train / test datasets'
    form_class = ElectricityPrepareForm
    defaults = staticmethod(electricity_defaults)

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--source', help='Semicolon-separated, decimal-comma load file')
        parser.add_argument('--target-meter', help='Meter whose load is forecast (default: first retained meter)')
        parser.add_argument('--input-meters', nargs='+', help='Feature meters; the target is always included')
        parser.add_argument('--num-features', type=int, help='Feature columns per sample, target included')
        parser.add_argument('--t', type=int, help='Window length T')
        parser.add_argument('--train-stride', type=int, help='Default T/2')
        parser.add_argument('--test-stride', type=int, help='Default T')
        parser.add_argument('--split-boundary', help='Last training timestamp (default: start of the final year)')
        parser.add_argument('--patch-len', type=int)
        parser.add_argument('--horizon', type=int)

    def run(self, form, sections):
        flags = form.cleaned_data
        out = Path(flags['out'])
        cfg = ElectricityConfig(
            source_path=flags['source'],
            target_meter=flags['target_meter'] or None,
            input_meters=flags['input_meters'],
            num_features=flags['num_features'],
            seq_len=flags['t'],
            train_stride=flags['train_stride'],
            test_stride=flags['test_stride'],
            split_boundary=flags['split_boundary'],
            patch_len=flags['patch_len'],
            horizon=flags['horizon'],
        )
        with RunRecorder('electricity_prepare', out, flags) as recorder:
            digest = recorder.add_dataset('source', flags['source'])
            frame = load_electricity(flags['source'])
            train, test, stats = normalize_and_window(frame, cfg)
            target, inputs = select_features(stats, cfg)
            meter_stats = {
                meter: {'mean': float(stats.mean[i]), 'std': float(stats.std[i])}
                for i, meter in enumerate(stats.meters)
            }
            for split, samples in (('train', train), ('test', test)):
                manifest = DatasetManifest(
                    kind='electricity',
                    num_samples=len(samples),
                    seq_len=cfg.seq_len,
                    num_features=cfg.num_features,
                    config={
                        **cfg.to_dict(), 'split': split, 'target_meter': target, 'input_meters': inputs,
                        'meter_stats': meter_stats, 'excluded': stats.excluded,
                    },
                    source_digest=digest,
                    created_at=reproducible_timestamp(),
                )
                path = save_dataset(samples, manifest, out / f'electricity_{split}.pcds')
                recorder.add_output(split, path)

        self.stdout.write(self.style.SUCCESS(
            f'Wrote {len(train)} train and {len(test)} test windows of {len(stats.meters)} retained meters to {out}'
        ))
