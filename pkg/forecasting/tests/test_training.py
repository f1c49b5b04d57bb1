import os
from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import mock, skipUnless

import numpy as np
import pandas as pd
from django.conf import settings
from django.test import SimpleTestCase, tag
from numpy.testing import assert_allclose, assert_array_equal

from forecasting import numerics as nx
from forecasting.baselines import PersistenceBaseline, TcnConfig, TcnModel
from forecasting.data_io import (
    ElectricityConfig, ElectricityFrame, load_electricity, normalize_and_window, save_checkpoint,
)
from forecasting.exceptions import (
    ConfigurationError, DimensionError, FormatError, InvariantViolation, NumericalError, TrainingDiverged,
)
from forecasting.patching import horizon_labels
from forecasting.synthgen import SynthConfig, generate_dataset
from forecasting.training import (
    MetricsReport, TrainConfig, build_configs, evaluate, fit, load_model, load_report, mse_mae, rank_reports,
    save_model, save_report, train_baseline, train_model, train_stage1, train_stage2,
)

TINY_SECTIONS = {
    'encoder': {'conv_channels': [4], 'num_dense_blocks': 1, 'token_dim': 8, 'refine_heads': 2, 'dropout_rate': 0.0},
    'forecaster': {'d_model': 8, 'num_layers': 1, 'num_heads': 2, 'ffn_dim': 16, 'dropout_rate': 0.0},
    'tcn': {'levels': 2, 'channels': 4, 'dropout_rate': 0.0},
    'patchtst': {'d_model': 8, 'layers': 1, 'heads': 2, 'ffn_dim': 16, 'dropout_rate': 0.0},
}
ONE_EPOCH = TrainConfig(lr=1e-2, batch_size=4, stage1_epochs=1, stage2_epochs=1, baseline_epochs=1, seed=3)


def tiny_dataset(seed=42, n=8):
    return generate_dataset(SynthConfig(num_samples=n, seq_len=32, seed=seed))


def tiny_configs(kind, horizon=1):
    return build_configs(kind, 6, patch_len=8, horizon=horizon, sections=TINY_SECTIONS)


class LabelOracle:
    """Predicts the exact horizon labels; scores must be zero."""
    kind = 'oracle'
    patch_len = 8
    horizon = 1

    def predict(self, X, y):
        return horizon_labels(y, self.patch_len, self.horizon)

    def config_dict(self):
        return {}


class MseMaeTests(SimpleTestCase):
    def test_exact(self):
        preds = [np.array([1.0, 2.0]), np.array([3.0, 4.0])]
        self.assertEqual(mse_mae(preds, preds), (0.0, 0.0))

    def test_offset_by_one(self):
        targets = np.random.default_rng(0).normal(size=(3, 5))
        assert_allclose(mse_mae(targets + 1.0, targets), (1.0, 1.0))

    def test_hand_values(self):
        self.assertEqual(mse_mae([[0.0, 0.0]], [[1.0, 3.0]]), (5.0, 2.0))

    def test_matches_double_loop(self):
        rng = np.random.default_rng(1)
        preds, targets = rng.normal(size=(4, 7)), rng.normal(size=(4, 7))
        sq = ab = 0.0
        for i in range(4):
            for j in range(7):
                sq += (preds[i, j] - targets[i, j]) ** 2
                ab += abs(preds[i, j] - targets[i, j])
        mse, mae = mse_mae(preds, targets)
        self.assertAlmostEqual(mse, sq / 28, delta=1e-12)
        self.assertAlmostEqual(mae, ab / 28, delta=1e-12)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            mse_mae([[0.0, 1.0]], [[0.0]])
        with self.assertRaises(DimensionError):
            mse_mae([[0.0]], [[0.0], [1.0]])

    def test_empty(self):
        with self.assertRaises(ConfigurationError):
            mse_mae([], [])


class TrainConfigTests(SimpleTestCase):
    def test_defaults_follow_published_schedule(self):
        cfg = TrainConfig()
        self.assertEqual((cfg.lr, cfg.batch_size), (1e-3, 32))
        self.assertEqual((cfg.stage1_epochs, cfg.stage2_epochs, cfg.baseline_epochs), (2000, 300, 300))

    def test_invalid(self):
        for bad in ({'lr': 0.0}, {'batch_size': 0}, {'stage2_epochs': 0}):
            with self.subTest(**bad), self.assertRaises(ConfigurationError):
                TrainConfig(**bad)


class BuildConfigsTests(SimpleTestCase):
    def test_proposed_links_token_width(self):
        configs = build_configs('proposed', 6, patch_len=4, horizon=2, sections={'encoder': {'token_dim': 32}})
        self.assertEqual(configs['encoder'].patch_len, 4)
        self.assertEqual(configs['forecaster'].input_dim, 32)
        self.assertEqual(configs['forecaster'].horizon, 2)

    def test_arguments_win_over_sections(self):
        cfg = build_configs('tcn', 3, patch_len=8, horizon=1, sections={'tcn': {'patch_len': 99}})['tcn']
        self.assertEqual((cfg.patch_len, cfg.in_features), (8, 3))

    def test_unknown_field(self):
        with self.assertRaises(ConfigurationError):
            build_configs('patchtst', 6, sections={'patchtst': {'depth': 3}})

    def test_unknown_kind(self):
        with self.assertRaises(ConfigurationError):
            build_configs('lstm', 6)


class FitTests(SimpleTestCase):
    def test_divergence_keeps_last_finite_state(self):
        params = nx.ParameterSet()
        params.add('w', np.array([1.0]))
        calls = []

        def loss_fn(batch, rng):
            calls.append(len(batch))
            if len(calls) > 2:
                return nx.div(nx.sum_(params['w']), 0.0)
            return nx.sum_(nx.square(params['w']))

        cfg = TrainConfig(batch_size=4, baseline_epochs=5)
        with self.assertRaises(TrainingDiverged) as ctx:
            fit(params, loss_fn, 8, 5, cfg, 'probe')
        self.assertEqual(len(ctx.exception.history), 1)
        self.assertEqual(set(ctx.exception.last_finite_state), {'w'})
        self.assertIsInstance(ctx.exception, NumericalError)


class TrainingTests(SimpleTestCase):
    def setUp(self):
        self.dataset = tiny_dataset()

    def test_stage1_smoke(self):
        configs = tiny_configs('proposed')
        encoder, probe, history = train_stage1(self.dataset, configs['encoder'], ONE_EPOCH)
        self.assertEqual(len(history), 1)
        self.assertTrue(np.isfinite(history[0]))
        self.assertTrue(encoder.frozen)
        self.assertIn('probe.w', probe)

    def test_stage1_changes_parameters(self):
        configs = tiny_configs('proposed')
        first, _, _ = train_stage1(self.dataset, configs['encoder'], ONE_EPOCH)
        longer = TrainConfig(**{**ONE_EPOCH.to_dict(), 'stage1_epochs': 2})
        second, _, _ = train_stage1(self.dataset, configs['encoder'], longer)
        self.assertNotEqual(first.params.fingerprint(), second.params.fingerprint())

    def test_stage2_leaves_encoder_untouched(self):
        configs = tiny_configs('proposed')
        encoder, _, _ = train_stage1(self.dataset, configs['encoder'], ONE_EPOCH)
        before = encoder.params.fingerprint()
        model, history = train_stage2(self.dataset, encoder, configs['forecaster'],
                                      TrainConfig(**{**ONE_EPOCH.to_dict(), 'stage2_epochs': 2}))
        self.assertEqual(encoder.params.fingerprint(), before)
        self.assertEqual(len(history), 2)
        self.assertTrue(all(np.isfinite(history)))
        self.assertIs(model.encoder, encoder)

    def test_stage2_needs_frozen_encoder(self):
        configs = tiny_configs('proposed')
        encoder, _, _ = train_stage1(self.dataset, configs['encoder'], ONE_EPOCH)
        encoder.params.frozen = False
        with self.assertRaises(InvariantViolation):
            train_stage2(self.dataset, encoder, configs['forecaster'], ONE_EPOCH)

    def test_baselines_smoke(self):
        for kind in ('tcn', 'patchtst'):
            with self.subTest(kind=kind):
                model, history = train_baseline(self.dataset, kind, tiny_configs(kind)[kind], ONE_EPOCH)
                self.assertEqual(model.kind, kind)
                self.assertTrue(np.isfinite(history[0]))

    def test_same_seed_same_parameters(self):
        cfg = tiny_configs('tcn')['tcn']
        first, _ = train_baseline(self.dataset, 'tcn', cfg, ONE_EPOCH)
        second, _ = train_baseline(self.dataset, 'tcn', cfg, ONE_EPOCH)
        self.assertEqual(first.params.fingerprint(), second.params.fingerprint())

    def test_train_model_histories(self):
        model, histories = train_model('proposed', self.dataset, tiny_configs('proposed'), ONE_EPOCH)
        self.assertEqual(set(histories), {'proposed_stage1', 'proposed'})
        self.assertEqual(model.kind, 'proposed')

    def test_divergence_names_stage(self):
        with mock.patch('forecasting.training.train_stage2', side_effect=TrainingDiverged('nan loss', history=[1.0])):
            with self.assertRaises(TrainingDiverged) as ctx:
                train_model('proposed', self.dataset, tiny_configs('proposed'), ONE_EPOCH)
        self.assertEqual(ctx.exception.stage, 'proposed')
        self.assertEqual(set(ctx.exception.completed), {'proposed_stage1'})


class EvaluateTests(SimpleTestCase):
    def setUp(self):
        self.dataset = tiny_dataset(seed=101, n=5)

    def test_exact_predictor(self):
        report = evaluate(LabelOracle(), self.dataset)
        self.assertEqual((report.mse, report.mae), (0.0, 0.0))
        self.assertEqual(report.num_eval_pairs, 5 * 3)

    def test_constant_predictor_scores_second_moment(self):
        model = TcnModel(tiny_configs('tcn')['tcn'])
        for tensor in model.params.parameters():
            tensor.data = np.zeros_like(tensor.data)
        model.params['head.b'].data = np.array([0.5])
        labels = horizon_labels(np.stack([s.y for s in self.dataset]), 8, 1)
        report = evaluate(model, self.dataset)
        self.assertAlmostEqual(report.mse, float(np.mean((labels - 0.5) ** 2)), delta=1e-12)

    def test_deterministic(self):
        model = TcnModel(tiny_configs('tcn')['tcn'], seed=1)
        self.assertEqual(evaluate(model, self.dataset, 'abc'), evaluate(model, self.dataset, 'abc'))

    def test_model_must_fit_dataset(self):
        with self.assertRaises(ConfigurationError):
            evaluate(PersistenceBaseline(patch_len=8, horizon=4), self.dataset)


class ReportTests(SimpleTestCase):
    def test_rank_is_stable(self):
        reports = [MetricsReport(name, mse, 0.0, 1, '') for name, mse in (('a', 0.2), ('b', 0.1), ('c', 0.2))]
        self.assertEqual([r.model_name for r in rank_reports(reports)], ['b', 'a', 'c'])

    def test_save_and_load(self):
        report = MetricsReport('tcn', 0.125, 0.25, 19, 'hash', 'digest')
        with TemporaryDirectory() as tmp:
            path = save_report(Path(tmp) / 'tcn_metrics.json', report)
            self.assertEqual(load_report(path), report)

    def test_schema_mismatch(self):
        with self.assertRaises(FormatError):
            MetricsReport.from_dict({'model_name': 'tcn'})


class CheckpointTests(SimpleTestCase):
    def test_reloaded_models_predict_identically(self):
        dataset = tiny_dataset(n=2)
        X = np.stack([s.X for s in dataset])
        model, _ = train_model('proposed', dataset, tiny_configs('proposed'), ONE_EPOCH)
        with TemporaryDirectory() as tmp:
            path = save_model(Path(tmp) / 'proposed.pckp', model, ONE_EPOCH)
            loaded, metadata = load_model(path)
        self.assertEqual(metadata['kind'], 'proposed')
        self.assertTrue(loaded.encoder.frozen)
        assert_array_equal(loaded.predict(X), model.predict(X))

    def test_config_of_wrong_shape(self):
        with TemporaryDirectory() as tmp:
            path = save_checkpoint(Path(tmp) / 'tcn.pckp', {'kind': 'tcn', 'config': [2, 4]}, {})
            with self.assertRaises(FormatError):
                load_model(path)


def meter_frame(rows=800):
    """Three daily-cycle meters on a 15-minute grid that crosses into 2014."""
    rng = np.random.default_rng(0)
    stamps = pd.date_range('2013-12-28', periods=rows, freq='15min')
    day = 2.0 * np.pi * np.arange(rows) / 96.0
    values = np.column_stack([
        10.0 + 3.0 * np.sin(day) + rng.normal(0.0, 0.3, rows),
        4.0 + np.cos(day) + rng.normal(0.0, 0.3, rows),
        rng.normal(1.0, 0.1, rows),
    ])
    return ElectricityFrame(timestamps=stamps, meters=('MT_001', 'MT_002', 'MT_003'), values=values)


class ElectricityPipelineTests(SimpleTestCase):
    def test_trained_model_and_persistence_share_the_grid(self):
        cfg = ElectricityConfig(num_features=2, seq_len=32, patch_len=8)
        train, test, _ = normalize_and_window(meter_frame(), cfg)
        model, _ = train_model('proposed', train, build_configs('proposed', 2, sections=TINY_SECTIONS), ONE_EPOCH)
        trained = evaluate(model, test)
        persistence = evaluate(PersistenceBaseline(patch_len=8, horizon=1), test)
        self.assertEqual(trained.num_eval_pairs, persistence.num_eval_pairs)
        self.assertEqual(trained.num_eval_pairs, len(test) * 3)
        self.assertTrue(np.isfinite([trained.mae, persistence.mae]).all())


@tag('slow')
class DeskScaleTests(SimpleTestCase):
    """Desk-scale schedule from settings; run with ``manage.py test --tag=slow``."""
    seeds = (0, 1, 2)

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        desk = settings.PATCHCAST['DESK_SCALE']
        train = generate_dataset(SynthConfig(num_samples=desk['num_samples'], seed=42))
        test = generate_dataset(SynthConfig(num_samples=desk['num_samples'], seed=101))
        cls.histories = {}
        cls.scores = {'proposed': [], 'tcn': []}
        for seed in cls.seeds:
            train_cfg = TrainConfig(stage1_epochs=desk['stage1_epochs'], stage2_epochs=desk['stage2_epochs'],
                                    baseline_epochs=desk['baseline_epochs'], desk_scale=True, seed=seed)
            kinds = ('proposed', 'tcn', 'patchtst') if seed == cls.seeds[0] else ('proposed', 'tcn')
            for kind in kinds:
                model, histories = train_model(kind, train, build_configs(kind, 6), train_cfg)
                if seed == cls.seeds[0]:
                    cls.histories.update(histories)
                if kind in cls.scores:
                    cls.scores[kind].append(evaluate(model, test).mse)

    def test_every_loss_curve_halves(self):
        self.assertEqual(set(self.histories), {'proposed_stage1', 'proposed', 'tcn', 'patchtst'})
        for name, history in self.histories.items():
            with self.subTest(history=name):
                self.assertLess(history[-1], 0.5 * history[0])

    def test_proposed_beats_tcn_for_every_seed(self):
        for seed, proposed, tcn in zip(self.seeds, self.scores['proposed'], self.scores['tcn']):
            with self.subTest(seed=seed):
                self.assertLess(proposed, tcn)


@tag('slow')
@skipUnless(os.environ.get('PATCHCAST_ELECTRICITY_SOURCE'), 'set PATCHCAST_ELECTRICITY_SOURCE to the load file')
class ElectricityDeskScaleTests(SimpleTestCase):
    def test_trained_model_matches_persistence(self):
        desk = settings.PATCHCAST['DESK_SCALE']
        train, test, _ = normalize_and_window(
            load_electricity(os.environ['PATCHCAST_ELECTRICITY_SOURCE']), ElectricityConfig(),
        )
        train = train[-desk['num_samples']:]
        train_cfg = TrainConfig(stage1_epochs=desk['stage1_epochs'], stage2_epochs=desk['stage2_epochs'],
                                baseline_epochs=desk['baseline_epochs'], desk_scale=True)
        model, _ = train_model('proposed', train, build_configs('proposed', 6), train_cfg)
        persistence = evaluate(PersistenceBaseline(patch_len=8, horizon=1), test)
        self.assertLessEqual(evaluate(model, test).mae, persistence.mae)
