import io
import json
import shutil
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings
from django.urls import reverse

from fusion.pipeline import NetworkSpec, ResidualOracle
from geometry.transforms import RigidTransform
from kernels.checkpoint import load_checkpoint
from kernels.tensor import NumericalError
from raster.maps import default_rig, scaled_rig
from synthdata.storage import read_dataset, read_manifest

from .ablation import TIME_BUDGET_S, AblationRun, AblationSummary, error_ratio
from .config import ConfigError, RunConfig, load_config
from .evaluation import COLUMNS, EvalReport, evaluate
from .fragments import FRAGMENTS, run_fragments
from .management.commands.gen_data import summarize
from .models import EpochRecord, EvaluationRun, TrainingRun
from .training import (
    Trainer, compute_losses, dump_path, initial_estimates, last_checkpoint_path, ledger_path, load_model,
    prepare_all, read_ledger,
)

TINY_CONFIG = """\
# tiny maps and network for tests
FV_HEIGHT=16
fv_width=32
bev_height=32
bev_width=32
channels=4
d_f=8
hidden_size=8
epochs=1
"""


def write_config(directory: Path, text: str = TINY_CONFIG, name: str = 'tiny.env') -> Path:
    path = directory / name
    path.write_text(text)
    return path


def run_command(name, **options):
    out = io.StringIO()
    call_command(name, stdout=out, **options)
    return out.getvalue()


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob('*')) if p.is_file()}


class DatasetMixin:
    """Ten tiny samples: indices 0-7 train, 8 val, 9 test."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = Path(tempfile.mkdtemp())
        cls.addClassCleanup(shutil.rmtree, cls.tmp, ignore_errors=True)
        cls.config_path = write_config(cls.tmp)
        cls.config = RunConfig.from_file(cls.config_path)
        cls.data = cls.tmp / 'data'
        run_command('gen_data', out=str(cls.data), samples=10, seed=1, lidar_density=15.0,
                    config=str(cls.config_path))
        cls.dataset = read_dataset(cls.data)


# ─────────────────────────────────────────────────────────────────────────────
# Config
# ─────────────────────────────────────────────────────────────────────────────

class RunConfigTests(SimpleTestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)

    def test_defaults(self):
        config = RunConfig()
        self.assertEqual((config.lam, config.beta, config.learning_rate), (0.75, 0.1, 1e-3))
        self.assertEqual((config.delta, config.delta_s, config.tau, config.iterations), (1.0, 0.5, 3, 3))
        self.assertEqual(config.fv_shape, (48, 96))
        self.assertEqual(config.bev_shape, (96, 96))
        self.assertEqual((config.epochs, config.lr_halving_period), (20, 7))
        self.assertEqual(config.ranges(), (10.0, 0.25))
        self.assertEqual(config.rig(), default_rig())

    def test_file_keys_are_case_insensitive(self):
        config = RunConfig.from_file(write_config(self.tmp))
        self.assertEqual(config.fv_shape, (16, 32))
        self.assertEqual(config.channels, 4)
        self.assertEqual(config.beta, 0.1)

    def test_value_parsing(self):
        text = "use_mca=false\nBETA=0\nfusion_mode=concat\nmiscalibration_range=r2\nnormalize_maps=yes\n"
        config = RunConfig.from_file(write_config(self.tmp, text))
        self.assertFalse(config.use_mca)
        self.assertTrue(config.normalize_maps)
        self.assertEqual(config.beta, 0.0)
        self.assertEqual(config.ranges(), (20.0, 1.5))
        self.assertEqual(config.network_spec(), NetworkSpec(use_mca=False, fusion_mode='concat', normalize_maps=True))

    def test_repeated_key_is_an_error(self):
        for text in ("beta=0.1\nbeta=0.2\n", "epochs=2\nEPOCHS=3\n", "export beta=0.1\nbeta=0.1\n"):
            with self.subTest(text=text), self.assertRaises(ConfigError) as ctx:
                RunConfig.from_file(write_config(self.tmp, text))
            self.assertIn("duplicate", str(ctx.exception))

    def test_unknown_key_is_an_error(self):
        with self.assertRaises(ConfigError):
            RunConfig.from_file(write_config(self.tmp, "learning_rat=0.1\n"))

    def test_unparsable_and_out_of_range_values(self):
        for text in ("epochs=two\n", "use_fv=maybe\n", "lam=1.5\n", "fv_width=100\n", "fusion_mode=max\n",
                     "miscalibration_range=R3\n", "use_fv=false\nuse_bev=false\n", "delta=0\n"):
            with self.subTest(text=text), self.assertRaises(ConfigError):
                RunConfig.from_file(write_config(self.tmp, text))

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            RunConfig.from_file(self.tmp / 'nope.env')

    @override_settings(CALIBRATION_CONFIG_FILE='')
    def test_load_config_falls_back_to_defaults(self):
        self.assertEqual(load_config(), RunConfig())

    def test_rig_mismatch(self):
        with self.assertRaises(ConfigError):
            RunConfig().check_rig(scaled_rig((16, 32), (32, 32)))


# ─────────────────────────────────────────────────────────────────────────────
# gen_data
# ─────────────────────────────────────────────────────────────────────────────

class GenDataCommandTests(TestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)
        self.config = write_config(self.tmp)

    def gen(self, out, **options):
        options = {'samples': 4, 'seed': 2, 'lidar_density': 15.0, 'config': str(self.config), **options}
        return run_command('gen_data', out=str(out), **options)

    def test_empty_dataset(self):
        self.gen(self.tmp / 'empty', samples=0)
        manifest = read_manifest(self.tmp / 'empty')
        self.assertEqual(manifest['samples'], [])
        self.assertEqual(read_dataset(self.tmp / 'empty').samples, [])

    def test_same_flags_give_identical_bytes(self):
        self.gen(self.tmp / 'a')
        self.gen(self.tmp / 'b')
        self.assertEqual(tree_bytes(self.tmp / 'a'), tree_bytes(self.tmp / 'b'))

    def test_summary_matches_recount(self):
        summary = json.loads(self.gen(self.tmp / 'ds', json=True))
        dataset = read_dataset(self.tmp / 'ds')
        self.assertEqual(summary['samples'], 4)
        self.assertEqual(summary['radar_points_total'], sum(len(s.radar) for s in dataset.samples))
        self.assertEqual(summary['ghost_points_total'], sum(int(np.sum(s.radar.labels == 1)) for s in dataset.samples))
        self.assertEqual(summary['lidar_points_total'], sum(len(s.lidar) for s in dataset.samples))
        self.assertEqual(summary['depth_pixels_max'], max(s.depth.occupied for s in dataset.samples))
        self.assertEqual(summary['train_samples'], 4)
        self.assertEqual(summary, summarize(read_manifest(self.tmp / 'ds')))

    def test_invalid_profile(self):
        with self.assertRaises(CommandError) as ctx:
            self.gen(self.tmp / 'x', noise_profile='stormy')
        self.assertEqual(ctx.exception.returncode, 2)

    def test_out_falls_back_to_the_data_root(self):
        root = self.tmp / 'root'
        with self.settings(CALIBRATION_DATA_ROOT=root):
            run_command('gen_data', samples=2, seed=2, lidar_density=15.0, config=str(self.config))
        self.assertEqual(len(read_manifest(root)['samples']), 2)

    def test_unwritable_directory(self):
        blocker = self.tmp / 'file'
        blocker.write_text('not a directory')
        with self.assertRaises(CommandError) as ctx:
            self.gen(blocker / 'ds')
        self.assertEqual(ctx.exception.returncode, 3)


# ─────────────────────────────────────────────────────────────────────────────
# Losses and training
# ─────────────────────────────────────────────────────────────────────────────

class ComputeLossesTests(DatasetMixin, SimpleTestCase):

    def losses(self, config, sensor='radar'):
        samples = self.dataset.split('train')[:2]
        prepared = prepare_all(samples, config, self.dataset.rig, sensor)
        t_init = initial_estimates(samples, config.ranges(), 0, 0)
        model = Trainer(config, self.dataset, self.tmp / 'unused.ckpt', sensor).model
        return compute_losses(model, prepared, t_init, config, self.dataset.rig)

    def test_total_is_linear_in_beta(self):
        base = self.losses(self.config.replace(beta=0.0)).losses
        for beta in (0.1, 0.7):
            result = self.losses(self.config.replace(beta=beta)).losses
            self.assertAlmostEqual(result.calibration, base.calibration, places=12)
            self.assertAlmostEqual(result.total, base.total + beta * (result.matching_fv + result.matching_bev),
                                   places=10)

    def test_matching_gradients_follow_beta(self):
        self.assertEqual(self.losses(self.config.replace(beta=0.0)).match_grads, [{}, {}, {}])
        grads = self.losses(self.config).match_grads
        self.assertEqual(len(grads), 3)
        self.assertEqual(set(grads[0]), {'FV', 'BEV'})
        self.assertEqual(grads[0]['FV'].d_log_p.shape, (2, 8, 8))
        self.assertEqual(grads[0]['BEV'].d_log_p.shape, (2, 16, 16))

    def test_untrained_model_has_no_calibration_progress(self):
        result = self.losses(self.config)
        for trace in result.traces:
            self.assertTrue(trace.final.allclose(trace.t_init, atol=1e-9))
        self.assertGreater(result.losses.calibration, 0.0)

    def test_lidar_variant(self):
        result = self.losses(self.config, sensor='lidar')
        self.assertTrue(result.losses.is_finite())

    def test_single_view_ablation(self):
        result = self.losses(self.config.replace(use_bev=False))
        self.assertEqual(result.losses.matching_bev, 0.0)
        self.assertEqual(set(result.match_grads[0]), {'FV'})


class TrainerTests(DatasetMixin, TestCase):

    def trainer(self, directory, config=None):
        return Trainer(config or self.config, self.dataset, self.tmp / directory / 'model.ckpt')

    def test_train_command_writes_checkpoint_and_ledger(self):
        out = self.tmp / 'cmd' / 'model.ckpt'
        run_command('train', data=str(self.data), config=str(self.config_path), out=str(out))
        model, config, meta = load_model(out)
        self.assertEqual(config, self.config)
        self.assertEqual(meta['epoch'], 1)
        self.assertEqual(len(model.parameters()), len(self.trainer('fresh').model.parameters()))
        ledger = read_ledger(ledger_path(out))
        self.assertEqual(len(ledger), 1)
        self.assertEqual(set(ledger[0]), {'epoch', 'step', 'lr', 'train', 'val', 'score', 'best'})
        self.assertEqual(ledger[0]['step'], 1)
        self.assertIn('rot_mean_deg', ledger[0]['val'])
        self.assertTrue(np.isfinite(ledger[0]['train']['total']))

        run = TrainingRun.objects.get()
        self.assertEqual(run.status, 'completed')
        self.assertEqual(run.epochs_done, 1)
        self.assertEqual(EpochRecord.objects.filter(run=run).count(), 1)

    def test_ledger_is_appended_per_epoch(self):
        trainer = self.trainer('ledger', self.config.replace(epochs=2))
        trainer.fit()
        lines = ledger_path(trainer.checkpoint).read_text().splitlines()
        self.assertEqual([json.loads(line)['epoch'] for line in lines], [0, 1])
        self.assertEqual(json.loads(lines[1])['lr'], self.config.learning_rate)

    def test_lr_halves_every_period(self):
        trainer = self.trainer('lr', self.config.replace(epochs=3, lr_halving_period=1))
        records = trainer.fit()
        lr = self.config.learning_rate
        self.assertEqual([r['lr'] for r in records], [lr, lr / 2, lr / 4])

    def test_resume_reproduces_uninterrupted_run(self):
        config = self.config.replace(epochs=2)
        straight = self.trainer('straight', config)
        straight.fit()

        first = self.trainer('resumed', config)
        first.fit(epochs=1)
        second = self.trainer('resumed', config)
        second.resume(last_checkpoint_path(first.checkpoint))
        self.assertEqual(second.epoch, 1)
        second.fit()

        a = load_checkpoint(last_checkpoint_path(straight.checkpoint)).tensors
        b = load_checkpoint(last_checkpoint_path(second.checkpoint)).tensors
        self.assertEqual(sorted(a), sorted(b))
        for key in a:
            self.assertEqual(a[key].tobytes(), b[key].tobytes(), key)
        self.assertEqual(ledger_path(straight.checkpoint).read_text(), ledger_path(second.checkpoint).read_text())

    def test_resume_rejects_other_config(self):
        trainer = self.trainer('other')
        trainer.fit()
        changed = self.trainer('other', self.config.replace(beta=0.0))
        with self.assertRaises(ConfigError):
            changed.resume(last_checkpoint_path(trainer.checkpoint))

    def test_non_finite_loss_aborts_with_dump(self):
        out = self.tmp / 'nan' / 'model.ckpt'
        with mock.patch('runs.training.compute_losses', side_effect=NumericalError("non-finite calibration output")):
            with self.assertRaises(CommandError) as ctx:
                run_command('train', data=str(self.data), config=str(self.config_path), out=str(out))
        self.assertEqual(ctx.exception.returncode, 4)
        with np.load(dump_path(out)) as dump:
            self.assertEqual(len(dump['sample_ids']), 8)
            self.assertEqual(len(dump['param_names']), len(dump['param_norms']))
        self.assertEqual(TrainingRun.objects.get().status, 'failed')

    def test_config_that_does_not_fit_the_data(self):
        config = write_config(self.tmp, "fv_height=48\n", 'big.env')
        with self.assertRaises(CommandError) as ctx:
            run_command('train', data=str(self.data), config=str(config), out=str(self.tmp / 'big' / 'm.ckpt'))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_paths_fall_back_to_settings(self):
        runs_dir = self.tmp / 'runs_out'
        with self.settings(CALIBRATION_DATA_ROOT=self.data, CALIBRATION_RUNS_DIR=runs_dir):
            run_command('train', config=str(self.config_path))
        self.assertTrue((runs_dir / 'model.ckpt').is_file())
        self.assertTrue(ledger_path(runs_dir / 'model.ckpt').is_file())
        run = TrainingRun.objects.get()
        self.assertEqual((run.data_dir, run.checkpoint), (str(self.data), str(runs_dir / 'model.ckpt')))

    def test_missing_dataset(self):
        with self.assertRaises(CommandError) as ctx:
            run_command('train', data=str(self.tmp / 'nowhere'), out=str(self.tmp / 'm.ckpt'))
        self.assertEqual(ctx.exception.returncode, 3)


# ─────────────────────────────────────────────────────────────────────────────
# calibrate
# ─────────────────────────────────────────────────────────────────────────────

class CalibrateCommandTests(DatasetMixin, TestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.untrained = Trainer(cls.config, cls.dataset, cls.tmp / 'untrained.ckpt').save(cls.tmp / 'untrained.ckpt')
        trainer = Trainer(cls.config, cls.dataset, cls.tmp / 'trained' / 'model.ckpt')
        trainer.fit()
        cls.trained = trainer.checkpoint
        cls.sample = cls.data / 'samples' / cls.dataset.samples[9].sample_id

    def calibrate(self, ckpt, **options):
        return json.loads(run_command('calibrate', ckpt=str(ckpt), sample=str(self.sample), json=True, **options))

    def test_identity_model_keeps_initial_error(self):
        result = self.calibrate(self.untrained, init_rot=[3.0], init_trans=[0.2])
        self.assertEqual(len(result['iterations']), 3)
        for key in COLUMNS:
            self.assertAlmostEqual(result['final_error'][key], result['initial_error'][key], places=9)
        self.assertAlmostEqual(result['initial_error']['rot_mean_deg'], 3.0, places=6)
        self.assertAlmostEqual(result['initial_error']['trans_mean_cm'], 20.0, places=6)

    def test_iterations_compose_to_final(self):
        result = self.calibrate(self.trained, init_rot=[2.0, -1.0, 4.0], init_trans=[0.1, 0.0, -0.2])
        t = RigidTransform.from_matrix(result['t_init'])
        for item in result['iterations']:
            t = (t @ RigidTransform.from_matrix(item['correction'])).orthonormalized()
            self.assertTrue(t.allclose(RigidTransform.from_matrix(item['estimate']), atol=1e-9))
        self.assertTrue(t.allclose(RigidTransform.from_matrix(result['final']), atol=1e-9))

    def test_calibrated_start_stays_calibrated(self):
        result = self.calibrate(self.untrained)
        self.assertLess(result['initial_error']['rot_mean_deg'], 1e-9)
        self.assertLess(result['final_error']['rot_mean_deg'], 1e-6)
        self.assertLess(result['final_error']['trans_mean_cm'], 1e-6)

    def test_trained_model_from_calibrated_start(self):
        out = run_command('calibrate', ckpt=str(self.trained), sample=str(self.sample))
        self.assertIn('iteration 3:', out)
        self.assertIn('final error: rotation', out)
        result = self.calibrate(self.trained)
        self.assertLess(result['final_error']['rot_mean_deg'], 5.0)
        self.assertLess(result['final_error']['trans_mean_cm'], 50.0)

    def test_bad_arguments(self):
        with self.assertRaises(CommandError) as ctx:
            self.calibrate(self.trained, init_rot=[1.0, 2.0])
        self.assertEqual(ctx.exception.returncode, 2)
        with self.assertRaises(CommandError) as ctx:
            run_command('calibrate', ckpt=str(self.trained), sample=str(self.data / 'samples' / 'missing'))
        self.assertEqual(ctx.exception.returncode, 3)
        with self.assertRaises(CommandError) as ctx:
            self.calibrate(self.tmp / 'missing.ckpt')
        self.assertEqual(ctx.exception.returncode, 3)


# ─────────────────────────────────────────────────────────────────────────────
# evaluate
# ─────────────────────────────────────────────────────────────────────────────

class EvaluateTests(DatasetMixin, TestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.ckpt = Trainer(cls.config, cls.dataset, cls.tmp / 'eval.ckpt').save(cls.tmp / 'eval.ckpt')

    def evaluate(self, report, **options):
        options = {'data': str(self.data), 'split': 'all', 'report': str(report), **options}
        out = run_command('evaluate', **options)
        return out, json.loads(Path(report).read_text())

    def test_oracle_has_zero_error(self):
        out, report = self.evaluate(self.tmp / 'oracle.json', oracle=True, config=str(self.config_path))
        self.assertEqual(len(report['samples']), 10)
        for key in COLUMNS:
            self.assertLess(report['aggregate'][key], 1e-6)
        self.assertGreater(report['initial']['rot_mean_deg'], 0.5)
        self.assertIn('final', out)
        self.assertEqual(EvaluationRun.objects.get().checkpoint, 'oracle')

    def test_report_layout(self):
        out, report = self.evaluate(self.tmp / 'layout.json', ckpt=str(self.ckpt))
        self.assertEqual(report['columns'], ['rot_mean_deg', 'roll_deg', 'pitch_deg', 'yaw_deg',
                                             'trans_mean_cm', 'x_cm', 'y_cm', 'z_cm'])
        for token in ('Rotation (deg)', 'Translation (cm)', 'Mean', 'Roll', 'Pitch', 'Yaw', 'X', 'Y', 'Z'):
            self.assertIn(token, out)
        self.assertEqual(len(report['per_iteration']), 4)
        self.assertEqual(len(report['samples'][0]['iterations']), 3)

    def test_aggregates_are_means_of_samples(self):
        _, report = self.evaluate(self.tmp / 'agg.json', ckpt=str(self.ckpt), range='R2', seed=4)
        for key in COLUMNS:
            mean = np.mean([s['final'][key] for s in report['samples']])
            self.assertAlmostEqual(report['aggregate'][key], mean, delta=1e-9)
        rebuilt = EvalReport.from_dict(report)
        self.assertEqual(rebuilt.aggregate, report['aggregate'])
        self.assertEqual(rebuilt.range_name, 'R2')

    def test_seeded_reports_are_bitwise_identical(self):
        a, b, c = self.tmp / 'a.json', self.tmp / 'b.json', self.tmp / 'c.json'
        self.evaluate(a, ckpt=str(self.ckpt), seed=7)
        self.evaluate(b, ckpt=str(self.ckpt), seed=7, workers=2)
        self.evaluate(c, ckpt=str(self.ckpt), seed=8)
        self.assertEqual(a.read_bytes(), b.read_bytes())
        self.assertNotEqual(a.read_bytes(), c.read_bytes())

    def test_dumps(self):
        dump = self.tmp / 'dump'
        self.evaluate(self.tmp / 'dump.json', ckpt=str(self.ckpt), split='test', dump_dir=str(dump))
        sid = self.dataset.split('test')[0].sample_id
        names = {p.name for p in dump.iterdir()}
        for name in (f"{sid}_overlay_initial.pgm", f"{sid}_overlay_final.pgm",
                     f"{sid}_fv_heatmap_image.pgm", f"{sid}_fv_heatmap_radar.f32",
                     f"{sid}_bev_heatmap_image.pgm", f"{sid}_bev_heatmap_radar.f32"):
            self.assertIn(name, names)

    def test_oracle_through_the_api(self):
        report = evaluate(ResidualOracle(), self.dataset.samples, self.dataset.rig, self.config, 'R1', seed=3)
        self.assertLess(report.aggregate['trans_mean_cm'], 1e-6)
        stages = report.per_iteration()
        self.assertLess(stages[1]['rot_median_deg'], 1e-6)

    def test_data_falls_back_to_the_data_root(self):
        with self.settings(CALIBRATION_DATA_ROOT=self.data):
            run_command('evaluate', oracle=True, config=str(self.config_path), split='all')
        evaluation = EvaluationRun.objects.get()
        self.assertEqual((evaluation.data_dir, evaluation.samples), (str(self.data), 10))

    def test_invalid_options(self):
        for options in ({'range': 'R9', 'ckpt': str(self.ckpt)}, {'split': 'dev', 'ckpt': str(self.ckpt)}, {}):
            with self.subTest(options=options), self.assertRaises(CommandError) as ctx:
                run_command('evaluate', data=str(self.data), **options)
            self.assertEqual(ctx.exception.returncode, 2)


# ─────────────────────────────────────────────────────────────────────────────
# ablation
# ─────────────────────────────────────────────────────────────────────────────

STEADY = ((10.0, 12.0), (4.0, 8.0), (2.0, 6.0), (1.5, 5.0))


def ablation_run(seed, beta, rot, trans, medians=STEADY, seconds=60.0):
    initial = {'rot_mean_deg': 10.0, 'trans_mean_cm': 12.5}
    final = {'rot_mean_deg': rot, 'trans_mean_cm': trans}
    stages = [{'iteration': n, 'rot_median_deg': r, 'trans_median_cm': t} for n, (r, t) in enumerate(medians)]
    return AblationRun(seed, beta, f"seed{seed}.ckpt", seconds, initial, final, stages)


class AblationSummaryTests(SimpleTestCase):

    def summary(self, *runs):
        return AblationSummary(0.1, 0.0, list(runs))

    def test_two_of_three_seeds_suffice(self):
        summary = self.summary(
            ablation_run(0, 0.1, 2.0, 5.0), ablation_run(0, 0.0, 2.5, 7.0),
            ablation_run(1, 0.1, 2.0, 5.0), ablation_run(1, 0.0, 2.5, 4.0),
            ablation_run(2, 0.1, 2.9, 7.4), ablation_run(2, 0.0, 3.0, 9.0),
        )
        self.assertEqual([summary.seed_passes(s) for s in (0, 1, 2)], [True, False, True])
        self.assertTrue(summary.learning_holds)
        self.assertTrue(summary.monotone_holds)
        self.assertEqual(summary.as_dict()['seeds'], {'0': True, '1': False, '2': True})

    def test_one_seed_of_three_is_not_enough(self):
        summary = self.summary(
            ablation_run(0, 0.1, 2.0, 5.0), ablation_run(0, 0.0, 2.5, 7.0),
            ablation_run(1, 0.1, 2.0, 12.0), ablation_run(1, 0.0, 2.5, 13.0),
            ablation_run(2, 0.1, 2.0, 5.0),
        )
        self.assertFalse(summary.seed_passes(2))
        self.assertFalse(summary.learning_holds)

    def test_targets_are_relative_to_the_initial_error(self):
        self.assertAlmostEqual(ablation_run(0, 0.1, 3.0, 7.5).rot_ratio, 0.3)
        self.assertTrue(ablation_run(0, 0.1, 3.0, 7.5).converged)
        self.assertFalse(ablation_run(0, 0.1, 3.1, 5.0).converged)
        self.assertFalse(ablation_run(0, 0.1, 1.0, 7.6).converged)
        self.assertFalse(ablation_run(0, 0.1, 1.0, 1.0, seconds=TIME_BUDGET_S + 1).converged)
        self.assertEqual(error_ratio(0.0, 0.0), 0.0)

    def test_a_growing_last_iteration_breaks_monotonicity(self):
        growing = ((10.0, 12.0), (2.0, 6.0), (1.213, 5.0), (1.244, 4.9))
        self.assertFalse(ablation_run(0, 0.1, 2.0, 5.0, medians=growing).monotone)
        self.assertFalse(self.summary(ablation_run(0, 0.1, 2.0, 5.0, medians=growing)).monotone_holds)
        # baseline-weight models are not held to it
        self.assertTrue(self.summary(ablation_run(0, 0.1, 2.0, 5.0),
                                     ablation_run(0, 0.0, 2.0, 5.0, medians=growing)).monotone_holds)


class AblationCommandTests(DatasetMixin, TestCase):

    def test_every_seed_and_weight_is_trained_and_recorded(self):
        out = self.tmp / 'ablation'
        text = run_command('ablation', data=str(self.data), config=str(self.config_path), out=str(out), seeds=[0, 1])
        result = json.loads((out / 'ablation.json').read_text())
        self.assertEqual(sorted((r['seed'], r['beta']) for r in result['runs']),
                         [(0, 0.0), (0, 0.1), (1, 0.0), (1, 0.1)])
        self.assertEqual(set(result['seeds']), {'0', '1'})
        self.assertIsInstance(result['learning'], bool)
        self.assertIsInstance(result['monotone'], bool)
        for run in result['runs']:
            self.assertEqual(len(run['per_iteration']), 4)
            self.assertTrue(Path(run['checkpoint']).is_file())
            self.assertTrue(Path(run['checkpoint']).with_suffix('.json').is_file())
        self.assertEqual(EvaluationRun.objects.count(), 4)
        self.assertIn('iteration monotonicity', text)

    def test_equal_weights_are_rejected(self):
        with self.assertRaises(CommandError) as ctx:
            run_command('ablation', data=str(self.data), config=str(self.config_path),
                        out=str(self.tmp / 'same'), beta=0.0)
        self.assertEqual(ctx.exception.returncode, 2)


# ─────────────────────────────────────────────────────────────────────────────
# gradcheck
# ─────────────────────────────────────────────────────────────────────────────

class GradcheckTests(TestCase):

    def test_every_fragment_behaves_as_expected(self):
        results = run_fragments()
        self.assertEqual([r.report.name for r in results], list(FRAGMENTS))
        for result in results:
            self.assertTrue(result.ok, result.as_row())
        control = next(r for r in results if r.report.name == 'corrupted_backward')
        self.assertFalse(control.report.passed)

    def test_command_table(self):
        out = run_command('gradcheck', modules=['linear', 'corrupted_backward'])
        self.assertIn('max rel. err', out)
        self.assertIn('linear', out)
        self.assertIn('corrupted_backward', out)

    def test_unmet_tolerance_fails(self):
        with self.assertRaises(CommandError) as ctx:
            run_command('gradcheck', modules=['linear'], tol=1e-16)
        self.assertEqual(ctx.exception.returncode, 4)

    def test_unknown_fragment(self):
        with self.assertRaises(CommandError) as ctx:
            run_command('gradcheck', modules=['transformer'])
        self.assertEqual(ctx.exception.returncode, 2)


# ─────────────────────────────────────────────────────────────────────────────
# Views
# ─────────────────────────────────────────────────────────────────────────────

class ViewsTests(TestCase):

    def setUp(self):
        self.run = TrainingRun.objects.create(data_dir='data', checkpoint='model.ckpt', status='completed')
        EpochRecord.objects.create(run=self.run, epoch=0, lr=1e-4, loss_total=1.0, loss_calibration=0.9,
                                   loss_matching_fv=0.5, loss_matching_bev=0.5, val_rot_deg=2.0, val_trans_cm=5.0)
        self.evaluation = EvaluationRun.objects.create(checkpoint='model.ckpt', data_dir='data', rot_mean_deg=1.5)

    def test_run_list(self):
        data = self.client.get(reverse('run_list')).json()
        self.assertEqual([r['id'] for r in data['runs']], [self.run.pk])
        data = self.client.get(reverse('run_list'), {'status': 'failed'}).json()
        self.assertEqual(data['runs'], [])

    def test_run_detail(self):
        data = self.client.get(reverse('run_detail', args=[self.run.pk])).json()
        self.assertEqual(data['checkpoint'], 'model.ckpt')
        self.assertEqual(data['epochs'][0]['loss_calibration'], 0.9)

    def test_evaluation_detail(self):
        data = self.client.get(reverse('evaluation_detail', args=[self.evaluation.pk])).json()
        self.assertEqual(data['rot_mean_deg'], 1.5)
        self.assertEqual(self.client.get(reverse('evaluation_list')).json()['evaluations'][0]['range'], 'R1')

    def test_missing_and_wrong_method(self):
        self.assertEqual(self.client.get(reverse('run_detail', args=[999])).status_code, 404)
        self.assertEqual(self.client.post(reverse('run_list')).status_code, 405)
