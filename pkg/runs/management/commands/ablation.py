import logging
from pathlib import Path

from synthdata.storage import read_dataset

from runs.ablation import run_ablation
from runs.config import ConfigError, load_config
from runs.management.base import CalibrationCommand
from runs.models import EvaluationRun

logger = logging.getLogger(__name__)


class Command(CalibrationCommand):
    help = ("Train and evaluate one model per seed and matching weight, then check the convergence "
            "and iteration-monotonicity targets; writes ablation.json.")

    def add_arguments(self, parser):
        parser.add_argument("--data", default=None, help="Dataset directory (default: CALIBRATION_DATA_ROOT).")
        parser.add_argument("--config", default=None, help="Run config file.")
        parser.add_argument("--out", default=None,
                            help="Output directory (default: ablation in CALIBRATION_RUNS_DIR).")
        parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
        parser.add_argument("--beta", type=float, default=None,
                            help="Matching weight of the reference model (default: the config's beta).")
        parser.add_argument("--baseline-beta", type=float, default=0.0, help="Matching weight it is compared with.")
        self.add_sensor_argument(parser)

    def run(self, **options):
        config = load_config(options["config"])
        beta = config.beta if options["beta"] is None else options["beta"]
        if beta < 0 or options["baseline_beta"] < 0:
            raise ConfigError("matching weights must be non-negative")
        if any(s < 0 for s in options["seeds"]):
            raise ConfigError(f"--seeds must be non-negative, got {options['seeds']}")
        data = self.data_path(options["data"])
        dataset = read_dataset(data)
        config.check_rig(dataset.rig)
        out = self.runs_path(options["out"], "ablation")

        def on_run(run, report):
            EvaluationRun.objects.create(
                checkpoint=run.checkpoint,
                data_dir=str(data),
                range_name=report.range_name,
                seed=run.seed,
                sensor=report.sensor,
                samples=len(report.samples),
                report_path=str(Path(run.checkpoint).with_suffix(".json")),
                **run.final,
            )
            self.stdout.write(f"seed {run.seed} beta {run.beta:g}: rotation {run.rot_ratio:.2f}, "
                              f"translation {run.trans_ratio:.2f} of initial")

        summary = run_ablation(config, dataset, out, options["seeds"], beta, options["baseline_beta"],
                               options["sensor"], on_run)
        self.stdout.write(summary.table())
        verdict = {True: "holds", False: "fails"}
        self.stdout.write(f"learning: {verdict[summary.learning_holds]}; "
                          f"iteration monotonicity: {verdict[summary.monotone_holds]}")
        self.stdout.write(self.style.SUCCESS(f"Results written to {out / 'ablation.json'}"))
