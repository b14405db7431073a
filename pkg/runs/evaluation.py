"""
Evaluation over a dataset split and the report it produces.

Samples are refined independently (optionally on a thread pool); records are
collected in sample order, so the report does not depend on the worker count.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fusion.pipeline import CalibrationTrace, PreparedSample, iterate_calibration
from geometry.cameras import project_bev_many, project_fv_many
from geometry.metrics import calibration_error
from geometry.transforms import RigidTransform, miscalibration_range
from matchnet.attention import attention_heatmaps
from matchnet.export import export_heatmap
from matchnet.extractor import STRIDE
from raster.export import to_gray8, write_pgm
from raster.maps import SensorRig
from synthdata.sensors import Sample

from .training import EVAL_STREAM, initial_estimates, prepare_all

logger = logging.getLogger(__name__)

ROTATION_COLUMNS = ('rot_mean_deg', 'roll_deg', 'pitch_deg', 'yaw_deg')
TRANSLATION_COLUMNS = ('trans_mean_cm', 'x_cm', 'y_cm', 'z_cm')
COLUMNS = ROTATION_COLUMNS + TRANSLATION_COLUMNS


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    initial: dict            # report row of the starting estimate
    final: dict              # report row after the last iteration
    iterations: list[dict]   # report row after each iteration
    transforms: list[list[float]] = field(default_factory=list)  # row-major estimate after each iteration

    def as_dict(self) -> dict:
        return {
            'sample_id': self.sample_id,
            'initial': self.initial,
            'final': self.final,
            'iterations': self.iterations,
            'transforms': self.transforms,
        }

    @classmethod
    def from_trace(cls, sample_id: str, trace: CalibrationTrace, t_gt: RigidTransform) -> SampleRecord:
        rows = [calibration_error(r.t_out, t_gt).as_report_row() for r in trace.iterations]
        return cls(
            sample_id=sample_id,
            initial=calibration_error(trace.t_init, t_gt).as_report_row(),
            final=calibration_error(trace.final, t_gt).as_report_row(),
            iterations=rows,
            transforms=[r.t_out.as_row_major() for r in trace.iterations],
        )


def _mean_row(rows: list[dict]) -> dict:
    if not rows:
        return {key: 0.0 for key in COLUMNS}
    return {key: float(np.mean([r[key] for r in rows])) for key in COLUMNS}


@dataclass
class EvalReport:
    range_name: str
    seed: int
    sensor: str
    iterations: int
    samples: list[SampleRecord] = field(default_factory=list)

    @property
    def aggregate(self) -> dict:
        return _mean_row([s.final for s in self.samples])

    @property
    def initial_aggregate(self) -> dict:
        return _mean_row([s.initial for s in self.samples])

    def per_iteration(self) -> list[dict]:
        """Mean and median errors after each iteration, index 0 being the starting estimate."""
        stages = [[s.initial for s in self.samples]]
        for n in range(self.iterations):
            stages.append([s.iterations[n] for s in self.samples])
        out = []
        for n, rows in enumerate(stages):
            rot = [r['rot_mean_deg'] for r in rows]
            trans = [r['trans_mean_cm'] for r in rows]
            out.append({
                'iteration': n,
                'rot_mean_deg': float(np.mean(rot)) if rot else 0.0,
                'rot_median_deg': float(np.median(rot)) if rot else 0.0,
                'trans_mean_cm': float(np.mean(trans)) if trans else 0.0,
                'trans_median_cm': float(np.median(trans)) if trans else 0.0,
            })
        return out

    def as_dict(self) -> dict:
        return {
            'range': self.range_name,
            'seed': self.seed,
            'sensor': self.sensor,
            'iterations': self.iterations,
            'columns': list(COLUMNS),
            'initial': self.initial_aggregate,
            'aggregate': self.aggregate,
            'per_iteration': self.per_iteration(),
            'samples': [s.as_dict() for s in self.samples],
        }

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + '\n')
        return path

    @classmethod
    def from_dict(cls, data: dict) -> EvalReport:
        samples = [SampleRecord(**s) for s in data['samples']]
        return cls(data['range'], int(data['seed']), data['sensor'], int(data['iterations']), samples)

    def table(self) -> str:
        """Rotation (deg) and translation (cm) errors: Mean Roll Pitch Yaw | Mean X Y Z."""
        header = f"{'':>8} | {'Mean':>7} {'Roll':>7} {'Pitch':>7} {'Yaw':>7} | {'Mean':>7} {'X':>7} {'Y':>7} {'Z':>7}"
        lines = [
            f"{'':>8} | {'Rotation (deg)':^31} | {'Translation (cm)':^31}",
            header,
            '-' * len(header),
        ]
        for label, row in (('initial', self.initial_aggregate), ('final', self.aggregate)):
            rot = ' '.join(f"{row[k]:7.3f}" for k in ROTATION_COLUMNS)
            trans = ' '.join(f"{row[k]:7.3f}" for k in TRANSLATION_COLUMNS)
            lines.append(f"{label:>8} | {rot} | {trans}")
        return '\n'.join(lines)


# ─────────────────────────────────────────────────────────────────────────────
# Image dumps
# ─────────────────────────────────────────────────────────────────────────────

def _fv_marks(prepared: PreparedSample, t: RigidTransform, rig: SensorRig) -> list[tuple[int, int]]:
    u, v, _, valid = project_fv_many(t.apply(prepared.cloud.points), rig.k)
    return [(int(round(r)), int(round(c))) for r, c, ok in zip(v, u, valid) if ok]


def _bev_marks(prepared: PreparedSample, t: RigidTransform, rig: SensorRig) -> list[tuple[int, int]]:
    u, v, _ = project_bev_many(t.apply(prepared.cloud.points), rig.k_bev, rig.cam_height)
    return [(int(round(r)), int(round(c))) for r, c in zip(v, u)]


def dump_sample(prepared: PreparedSample, trace: CalibrationTrace, rig: SensorRig, directory) -> list[Path]:
    """
    Overlays of the radar points projected with the initial and the final
    estimate on the grayscale depth image, plus the last iteration's attention
    heatmaps for each view that recorded them.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sid = prepared.sample.sample_id
    gray = to_gray8(prepared.context.values, prepared.context.mask, vmax=1.0)
    paths = [
        write_pgm(directory / f"{sid}_overlay_initial.pgm", gray, _fv_marks(prepared, trace.t_init, rig)),
        write_pgm(directory / f"{sid}_overlay_final.pgm", gray, _fv_marks(prepared, trace.final, rig)),
    ]
    if not trace.iterations:
        return paths
    last = trace.iterations[-1]
    views = (
        ('fv', last.fv_scores, rig.fv_shape, _fv_marks(prepared, last.t_in, rig)),
        ('bev', last.bev_scores, rig.bev_shape, _bev_marks(prepared, last.t_in, rig)),
    )
    for view, scores, shape, marks in views:
        if scores is None:
            continue
        image_map, radar_map = attention_heatmaps(scores, shape[0] // STRIDE, shape[1] // STRIDE)
        paths.extend(export_heatmap(image_map, directory / f"{sid}_{view}_heatmap_image", marks))
        paths.extend(export_heatmap(radar_map, directory / f"{sid}_{view}_heatmap_radar", marks))
    return paths


# ─────────────────────────────────────────────────────────────────────────────
# Evaluation
# ─────────────────────────────────────────────────────────────────────────────

def evaluate(model, samples: list[Sample], rig: SensorRig, config, range_name: str = 'R1', seed: int = 0,
             sensor: str = 'radar', workers: int = 1, dump_dir=None) -> EvalReport:
    """
    Refine every sample from a seeded miscalibration drawn in `range_name` and
    report the errors of the initial, intermediate and final estimates.
    """
    ranges = miscalibration_range(range_name)
    if hasattr(model, 'eval'):
        model.eval()
    prepared = prepare_all(samples, config, rig, sensor)
    t_init = initial_estimates(samples, ranges, seed, EVAL_STREAM)

    def run(i: int) -> CalibrationTrace:
        return iterate_calibration(prepared[i], t_init[i], model, config.iterations, rig, config.normalize_maps)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(run, range(len(samples))))
    else:
        traces = [run(i) for i in range(len(samples))]

    report = EvalReport(range_name.upper(), seed, sensor, config.iterations)
    for p, trace in zip(prepared, traces):
        report.samples.append(SampleRecord.from_trace(p.sample.sample_id, trace, p.sample.t_gt))
        if dump_dir is not None:
            dump_sample(p, trace, rig, dump_dir)
    agg = report.aggregate
    logger.info("evaluated %d samples (%s, seed %d): rotation %.3f deg, translation %.3f cm",
                len(samples), report.range_name, seed, agg['rot_mean_deg'], agg['trans_mean_cm'])
    return report
