"""
Shared base for the calibration management commands: maps pipeline errors to
exit codes (2 config, 3 data, 4 numerical failure).
"""
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from kernels.checkpoint import CheckpointError
from kernels.tensor import NumericalError
from synthdata.storage import DatasetError

from runs.config import ConfigError

logger = logging.getLogger(__name__)

CONFIG_ERROR, DATA_ERROR, NUMERICAL_ERROR = 2, 3, 4
DEFAULT_CHECKPOINT = "model.ckpt"


class CalibrationCommand(BaseCommand):

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except ConfigError as exc:
            logger.error("config error: %s", exc)
            raise CommandError(f"Config error: {exc}", returncode=CONFIG_ERROR)
        except (DatasetError, CheckpointError) as exc:
            logger.error("data error: %s", exc)
            raise CommandError(f"Data error: {exc}", returncode=DATA_ERROR)
        except NumericalError as exc:
            logger.error("numerical failure: %s", exc)
            raise CommandError(f"Numerical failure: {exc}", returncode=NUMERICAL_ERROR)

    def run(self, **options):
        raise NotImplementedError

    def data_path(self, value) -> Path:
        """The dataset directory given on the command line, else CALIBRATION_DATA_ROOT."""
        return Path(value) if value else Path(settings.CALIBRATION_DATA_ROOT)

    def runs_path(self, value, name: str) -> Path:
        """The output path given on the command line, else `name` under CALIBRATION_RUNS_DIR."""
        return Path(value) if value else Path(settings.CALIBRATION_RUNS_DIR) / name

    def add_sensor_argument(self, parser):
        parser.add_argument(
            "--sensor", choices=("radar", "lidar"), default="radar",
            help="Point source fed to the network; 'lidar' disables the noise-resistant matcher.",
        )
