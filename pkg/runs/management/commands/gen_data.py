import json
import logging

from synthdata.sensors import generate_samples, noise_profile
from synthdata.storage import DatasetError, read_manifest, write_dataset

from runs.config import ConfigError, load_config
from runs.management.base import CalibrationCommand

logger = logging.getLogger(__name__)

COUNT_FIELDS = ("radar_points", "ghost_points", "lidar_points", "depth_pixels")


def summarize(manifest: dict) -> dict:
    """Sample and point counts recounted from a dataset manifest."""
    entries = manifest["samples"]
    summary = {"samples": len(entries)}
    for split in ("train", "val", "test"):
        summary[f"{split}_samples"] = sum(1 for e in entries if e["split"] == split)
    for name in COUNT_FIELDS:
        values = [int(e[name]) for e in entries]
        summary[f"{name}_total"] = sum(values)
        summary[f"{name}_min"] = min(values, default=0)
        summary[f"{name}_max"] = max(values, default=0)
    return summary


class Command(CalibrationCommand):
    help = "Generate a synthetic radar / LiDAR / depth dataset with a manifest."

    def add_arguments(self, parser):
        parser.add_argument("--out", default=None, help="Dataset directory to write (default: CALIBRATION_DATA_ROOT).")
        parser.add_argument("--samples", type=int, default=64)
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--noise-profile", default="default", help="clean, default or harsh.")
        parser.add_argument("--lidar-density", type=float, default=40.0, help="LiDAR samples per square meter.")
        parser.add_argument("--config", default=None, help="Run config file (map dimensions).")
        parser.add_argument("--json", action="store_true", help="Print the summary as JSON.")

    def run(self, **options):
        config = load_config(options["config"])
        if options["samples"] < 0:
            raise ConfigError(f"--samples must be non-negative, got {options['samples']}")
        if options["seed"] < 0:
            raise ConfigError(f"--seed must be non-negative, got {options['seed']}")
        try:
            noise = noise_profile(options["noise_profile"])
        except ValueError as exc:
            raise ConfigError(str(exc))

        rig = config.rig()
        out = self.data_path(options["out"])
        samples = generate_samples(options["samples"], options["seed"], noise, rig, options["lidar_density"])
        metadata = {
            "seed": options["seed"],
            "noise_profile": options["noise_profile"],
            "lidar_density": options["lidar_density"],
        }
        try:
            write_dataset(samples, out, rig, metadata)
        except OSError as exc:
            raise DatasetError(f"cannot write dataset to {out}: {exc}")

        summary = summarize(read_manifest(out))
        logger.info("generated %d samples in %s", summary["samples"], out)
        if options["json"]:
            self.stdout.write(json.dumps(summary, sort_keys=True))
            return
        self.stdout.write(self.style.SUCCESS(f"Wrote {summary['samples']} samples to {out}"))
        for key in sorted(summary):
            self.stdout.write(f"  {key}: {summary[key]}")
