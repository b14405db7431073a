import json
import logging

from fusion.pipeline import iterate_calibration, prepare_sample
from geometry.metrics import calibration_error
from geometry.transforms import RigidTransform, perturb
from synthdata.storage import read_sample_dir

from runs.config import ConfigError
from runs.management.base import CalibrationCommand
from runs.training import load_model

logger = logging.getLogger(__name__)


def _triple(values, name):
    if len(values) == 1:
        return [values[0]] * 3
    if len(values) == 3:
        return list(values)
    raise ConfigError(f"--{name} takes one value or three, got {len(values)}")


class Command(CalibrationCommand):
    help = "Refine the extrinsic of one sample from a given miscalibration and print every iteration."

    def add_arguments(self, parser):
        parser.add_argument("--ckpt", required=True, help="Model checkpoint.")
        parser.add_argument("--sample", required=True, help="Sample directory: <dataset>/samples/<id>.")
        parser.add_argument("--init-rot", type=float, nargs="+", default=[0.0],
                            help="Roll/pitch/yaw offset in degrees (one value applies to all three).")
        parser.add_argument("--init-trans", type=float, nargs="+", default=[0.0],
                            help="X/Y/Z offset in meters (one value applies to all three).")
        parser.add_argument("--iterations", type=int, default=None, help="Defaults to the checkpoint's config.")
        parser.add_argument("--json", action="store_true", help="Print the result as JSON.")
        self.add_sensor_argument(parser)

    def run(self, **options):
        sample, rig = read_sample_dir(options["sample"])
        model, config, _ = load_model(options["ckpt"], rig)
        model.eval()
        n = options["iterations"] or config.iterations
        if n < 1:
            raise ConfigError(f"--iterations must be at least 1, got {n}")

        delta = RigidTransform.from_euler(_triple(options["init_rot"], "init-rot"),
                                          _triple(options["init_trans"], "init-trans"), degrees=True)
        t_init = perturb(sample.t_gt, delta)
        prepared = prepare_sample(sample, rig, options["sensor"], config.delta, config.delta_s, config.tau)
        trace = iterate_calibration(prepared, t_init, model, n, rig, config.normalize_maps)

        initial = calibration_error(trace.t_init, sample.t_gt).as_report_row()
        final = calibration_error(trace.final, sample.t_gt).as_report_row()
        result = {
            "sample_id": sample.sample_id,
            "t_gt": sample.t_gt.as_row_major(),
            "t_init": trace.t_init.as_row_major(),
            "iterations": [
                {
                    "iteration": i + 1,
                    "correction": r.step.transform().as_row_major(),
                    "estimate": r.t_out.as_row_major(),
                    "error": calibration_error(r.t_out, sample.t_gt).as_report_row(),
                }
                for i, r in enumerate(trace.iterations)
            ],
            "final": trace.final.as_row_major(),
            "initial_error": initial,
            "final_error": final,
        }
        logger.info("calibrated %s: rotation %.3f -> %.3f deg, translation %.3f -> %.3f cm", sample.sample_id,
                    initial["rot_mean_deg"], final["rot_mean_deg"], initial["trans_mean_cm"], final["trans_mean_cm"])
        if options["json"]:
            self.stdout.write(json.dumps(result, sort_keys=True))
            return

        self.stdout.write(f"sample {sample.sample_id}")
        for item in result["iterations"]:
            matrix = " ".join(f"{v: .6f}" for v in item["estimate"])
            self.stdout.write(f"  iteration {item['iteration']}: [{matrix}]")
        self.stdout.write(
            f"initial error: rotation {initial['rot_mean_deg']:.4f} deg, translation {initial['trans_mean_cm']:.4f} cm"
        )
        self.stdout.write(self.style.SUCCESS(
            f"final error: rotation {final['rot_mean_deg']:.4f} deg, translation {final['trans_mean_cm']:.4f} cm"
        ))
