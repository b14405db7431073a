import logging
from pathlib import Path

from fusion.pipeline import ResidualOracle
from geometry.transforms import MISCALIBRATION_RANGES
from synthdata.storage import read_dataset

from runs.config import ConfigError, load_config
from runs.evaluation import evaluate
from runs.management.base import CalibrationCommand
from runs.models import EvaluationRun
from runs.training import load_model

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test", "all")


class Command(CalibrationCommand):
    help = "Evaluate a checkpoint on a dataset split; prints rotation/translation errors and writes a JSON report."

    def add_arguments(self, parser):
        parser.add_argument("--ckpt", default=None, help="Model checkpoint.")
        parser.add_argument("--data", default=None, help="Dataset directory (default: CALIBRATION_DATA_ROOT).")
        parser.add_argument("--range", default="R1", help="Miscalibration range: R1 or R2.")
        parser.add_argument("--seed", type=int, default=0, help="Seed of the initial miscalibrations.")
        parser.add_argument("--split", default="test", help="train, val, test or all.")
        parser.add_argument("--report", default=None, help="JSON report path.")
        parser.add_argument("--dump-dir", default=None, help="Write overlays and attention heatmaps here.")
        parser.add_argument("--workers", type=int, default=1)
        parser.add_argument("--config", default=None, help="Run config used with --oracle.")
        parser.add_argument("--oracle", action="store_true",
                            help="Use the exact-residual predictor instead of a checkpoint.")
        self.add_sensor_argument(parser)

    def run(self, **options):
        range_name = options["range"].upper()
        if range_name not in MISCALIBRATION_RANGES:
            raise ConfigError(f"--range must be one of {sorted(MISCALIBRATION_RANGES)}, got {options['range']}")
        if options["split"] not in SPLITS:
            raise ConfigError(f"--split must be one of {', '.join(SPLITS)}, got {options['split']}")
        if options["workers"] < 1:
            raise ConfigError(f"--workers must be at least 1, got {options['workers']}")

        data = self.data_path(options["data"])
        dataset = read_dataset(data)
        if options["oracle"]:
            model, config = ResidualOracle(), load_config(options["config"])
        elif options["ckpt"]:
            model, config, _ = load_model(options["ckpt"], dataset.rig)
        else:
            raise ConfigError("either --ckpt or --oracle is required")

        samples = dataset.samples if options["split"] == "all" else dataset.split(options["split"])
        report = evaluate(model, samples, dataset.rig, config, range_name, options["seed"], options["sensor"],
                          options["workers"], options["dump_dir"])

        report_path = ""
        if options["report"]:
            report_path = str(report.write(Path(options["report"])))

        agg = report.aggregate
        EvaluationRun.objects.create(
            checkpoint=options["ckpt"] or "oracle",
            data_dir=str(data),
            range_name=range_name,
            seed=options["seed"],
            sensor=options["sensor"],
            samples=len(report.samples),
            report_path=report_path,
            **agg,
        )
        self.stdout.write(f"{len(report.samples)} samples, range {range_name}, seed {options['seed']}")
        self.stdout.write(report.table())
        if report_path:
            self.stdout.write(self.style.SUCCESS(f"Report written to {report_path}"))
