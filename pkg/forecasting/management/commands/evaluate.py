from pathlib import Path

from ...baselines import PersistenceBaseline
from ...data_io import load_dataset
from ...exceptions import ConfigurationError
from ...forms import EvaluateForm
from ...runs import RunRecorder, evaluation_defaults
from ...training import evaluate, load_model, save_report
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Score a checkpoint (or the persistence baseline) with patch-level MSE / MAE'
    form_class = EvaluateForm
    defaults = staticmethod(evaluation_defaults)

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', help='Model checkpoint (.pckp)')
        parser.add_argument('--model', help='persistence: score the parameter-free baseline instead')
        parser.add_argument('--dataset', help='Evaluation dataset (.pcds)')
        parser.add_argument('--patch-len', type=int, help='Patch length for the persistence baseline')
        parser.add_argument('--horizon', type=int, help='Horizon for the persistence baseline')

    def run(self, form, sections):
        flags = form.cleaned_data
        out = Path(flags['out'])
        with RunRecorder('evaluate', out, flags) as recorder:
            samples, _ = load_dataset(flags['dataset'])
            digest = recorder.add_dataset('eval', flags['dataset'])
            if flags['model'] == 'persistence':
                model = PersistenceBaseline(patch_len=flags['patch_len'], horizon=flags['horizon'])
            else:
                model, _ = load_model(flags['checkpoint'])
                if model.kind == 'encoder':
                    raise ConfigurationError(
                        f"{flags['checkpoint']} is a stage-1 encoder; evaluate the proposed checkpoint"
                    )
            report = evaluate(model, samples, dataset_digest=digest)
            path = recorder.add_output('report', save_report(out / f'{model.kind}_metrics.json', report))
            recorder.record_metrics(report, path)

        self.stdout.write(self.style.SUCCESS(
            f'{report.model_name}: MSE {report.mse:.6f}, MAE {report.mae:.6f} over {report.num_eval_pairs} pairs'
        ))
