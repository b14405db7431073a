import logging

from kernels.tensor import NumericalError
from synthdata.storage import read_dataset

from runs.config import load_config
from runs.management.base import DEFAULT_CHECKPOINT, CalibrationCommand
from runs.models import EpochRecord, TrainingRun
from runs.training import Trainer, last_checkpoint_path, ledger_path

logger = logging.getLogger(__name__)


class Command(CalibrationCommand):
    help = "Train the calibration network; writes the best-validation checkpoint and a JSON lines ledger."

    def add_arguments(self, parser):
        parser.add_argument("--data", default=None, help="Dataset directory (default: CALIBRATION_DATA_ROOT).")
        parser.add_argument("--config", default=None, help="Run config file.")
        parser.add_argument("--out", default=None,
                            help="Checkpoint path for the best-validation model (default: model.ckpt in CALIBRATION_RUNS_DIR).")
        parser.add_argument("--resume", action="store_true",
                            help="Continue from the last checkpoint written next to --out.")
        self.add_sensor_argument(parser)

    def run(self, **options):
        config = load_config(options["config"])
        data = self.data_path(options["data"])
        dataset = read_dataset(data)
        out = self.runs_path(options["out"], DEFAULT_CHECKPOINT)
        trainer = Trainer(config, dataset, out, options["sensor"])
        if options["resume"]:
            trainer.resume(last_checkpoint_path(out))

        run = TrainingRun.objects.create(
            config=config.as_dict(),
            data_dir=str(data),
            checkpoint=str(out),
            sensor=options["sensor"],
            seed=config.seed,
            epochs_done=trainer.epoch,
        )

        def on_epoch(record):
            EpochRecord.from_ledger(run, record).save()
            run.epochs_done = record["epoch"] + 1
            if record["best"]:
                run.best_score = record["score"]
                run.best_rot_deg = record["val"].get("rot_mean_deg")
                run.best_trans_cm = record["val"].get("trans_mean_cm")
            run.save()
            self.stdout.write(
                f"epoch {record['epoch']}: loss {record['train']['total']:.5f} "
                f"score {record['score']:.5f}{' *' if record['best'] else ''}"
            )

        try:
            trainer.fit(on_epoch=on_epoch)
        except NumericalError as exc:
            run.status = "failed"
            run.message = str(exc)
            run.save()
            raise

        run.status = "completed"
        run.save()
        self.stdout.write(self.style.SUCCESS(
            f"Training run #{run.pk} finished after {trainer.epoch} epochs; "
            f"checkpoint {out}, ledger {ledger_path(out)}"
        ))
