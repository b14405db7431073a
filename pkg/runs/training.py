"""
Training: losses over the unrolled refinement, Adam with lr halving, a JSON
lines ledger and best-validation checkpoints.

Every random draw is keyed by the run seed and the epoch, so a run resumed
from its last checkpoint replays the remaining epochs exactly.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fusion.pipeline import (
    CalibrationNet, CalibrationTrace, PreparedSample, Tape, backward_iterations, prepare_sample, run_iterations,
)
from geometry.metrics import calibration_error
from geometry.transforms import RigidTransform, perturb, sample_miscalibration
from kernels.checkpoint import load_checkpoint, save_checkpoint
from kernels.optim import Adam, halving_lr
from kernels.tensor import NumericalError
from raster.maps import SensorRig
from supervision.losses import MatchGrad, calibration_loss, matching_loss_terms, total_loss
from supervision.matches import gt_matches
from synthdata.sensors import Sample
from synthdata.storage import Dataset

from .config import ConfigError, RunConfig

logger = logging.getLogger(__name__)

TRAIN_STREAM, VAL_STREAM, EVAL_STREAM = 0, 1, 2


def initial_estimates(samples: list[Sample], ranges: tuple[float, float], seed: int, stream: int,
                      *key: int) -> list[RigidTransform]:
    """
    Miscalibrated starting extrinsics, one independent draw per sample keyed by
    (seed, stream, *key, sample index).
    """
    range_rot, range_trans = ranges
    return [
        perturb(s.t_gt, sample_miscalibration(range_rot, range_trans, (seed, stream, *key, s.index)))
        for s in samples
    ]


def prepare_all(samples: list[Sample], config: RunConfig, rig: SensorRig, sensor: str = 'radar') -> list[PreparedSample]:
    return [prepare_sample(s, rig, sensor, config.delta, config.delta_s, config.tau) for s in samples]


# ─────────────────────────────────────────────────────────────────────────────
# Losses
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class LossBreakdown:
    total: float
    calibration: float
    matching_fv: float
    matching_bev: float

    def as_dict(self) -> dict:
        return {
            'total': self.total,
            'calibration': self.calibration,
            'matching_fv': self.matching_fv,
            'matching_bev': self.matching_bev,
        }

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_dict().values())


@dataclass(eq=False)
class LossPass:
    """Batch-mean losses of one forward sweep plus the gradients its backward sweep needs."""

    losses: LossBreakdown
    traces: list[CalibrationTrace]
    tape: Tape
    d_rots: list[np.ndarray] = field(default_factory=list)
    d_trans: list[np.ndarray] = field(default_factory=list)
    match_grads: list[dict] = field(default_factory=list)

    def backward(self, model: CalibrationNet) -> None:
        backward_iterations(model, self.tape, self.d_rots, self.d_trans, self.match_grads)


def _view_matching(out, view: str, prepared: list[PreparedSample], traces: list[CalibrationTrace],
                   n: int, config: RunConfig, rig: SensorRig, scale: float):
    """Matching loss of one view at iteration n, summed over the batch, and its batched gradient."""
    k = rig.k if view == 'FV' else rig.k_bev
    total, grads = 0.0, []
    for b, p in enumerate(prepared):
        gt = gt_matches(p.cloud, p.sample.t_gt, traces[b].iterations[n].t_in, k, out.grid, view,
                        reliable_only=config.noise_resistant, cam_height=rig.cam_height)
        loss, grad = matching_loss_terms(out.match.sample(b), gt, config.lam)
        total += loss
        grads.append(grad)
    batched = MatchGrad(
        scale * np.stack([g.d_log_p for g in grads]),
        scale * np.stack([g.d_not_i for g in grads]),
        scale * np.stack([g.d_not_r for g in grads]),
    )
    return total, batched


def compute_losses(model: CalibrationNet, prepared: list[PreparedSample], t_init: list[RigidTransform],
                   config: RunConfig, rig: SensorRig) -> LossPass:
    """
    L_total = L_calib + β·(L_match_FV + L_match_BEV), each averaged over the
    batch. Ground-truth matches of iteration n are built against the estimate
    that iteration rasterised the radar with.
    """
    n_iter = config.iterations
    traces, tape = run_iterations(prepared, t_init, model, n_iter, rig, config.normalize_maps, record_tape=True)
    batch = len(prepared)

    calib = 0.0
    d_rots = [np.zeros((batch, 3)) for _ in range(n_iter)]
    d_trans = [np.zeros((batch, 3)) for _ in range(n_iter)]
    for b, (p, trace) in enumerate(zip(prepared, traces)):
        value, dr, dt = calibration_loss(
            [tape.outputs[n].rot[b] for n in range(n_iter)],
            [tape.outputs[n].trans[b] for n in range(n_iter)],
            p.sample.t_gt, trace.trace, config.rot_beta, config.trans_beta,
        )
        calib += value / batch
        for n in range(n_iter):
            d_rots[n][b] = dr[n] / batch
            d_trans[n][b] = dt[n] / batch

    matching = {'FV': 0.0, 'BEV': 0.0}
    match_grads = [{} for _ in range(n_iter)]
    for n, out in enumerate(tape.outputs):
        for view, branch in (('FV', out.fv), ('BEV', out.bev)):
            if branch is None:
                continue
            loss, grad = _view_matching(branch, view, prepared, traces, n, config, rig, config.beta / batch)
            matching[view] += loss / batch
            if config.beta > 0:
                match_grads[n][view] = grad

    losses = LossBreakdown(
        total=total_loss(calib, matching['FV'] + matching['BEV'], config.beta),
        calibration=calib,
        matching_fv=matching['FV'],
        matching_bev=matching['BEV'],
    )
    return LossPass(losses, traces, tape, d_rots, d_trans, match_grads)


# ─────────────────────────────────────────────────────────────────────────────
# Validation
# ─────────────────────────────────────────────────────────────────────────────

def mean_errors(traces: list[CalibrationTrace], samples: list[Sample]) -> dict:
    """Mean of the per-sample report rows of the final estimates."""
    rows = [calibration_error(t.final, s.t_gt).as_report_row() for t, s in zip(traces, samples)]
    if not rows:
        return {}
    return {key: float(np.mean([r[key] for r in rows])) for key in rows[0]}


def selection_score(errors: dict, config: RunConfig) -> float:
    """Mean errors relative to the miscalibration range; lower is better."""
    range_rot, range_trans = config.ranges()
    return errors['rot_mean_deg'] / range_rot + errors['trans_mean_cm'] / (100.0 * range_trans)


# ─────────────────────────────────────────────────────────────────────────────
# Trainer
# ─────────────────────────────────────────────────────────────────────────────

def ledger_path(checkpoint: Path) -> Path:
    return checkpoint.with_suffix('.ledger.jsonl')


def last_checkpoint_path(checkpoint: Path) -> Path:
    return checkpoint.with_suffix('.last.ckpt')


def dump_path(checkpoint: Path) -> Path:
    return checkpoint.with_suffix('.nan.npz')


def build_model(config: RunConfig, rig: SensorRig) -> CalibrationNet:
    return CalibrationNet(rig, config.network_spec(), seed=config.seed)


def load_model(path, rig: SensorRig | None = None) -> tuple[CalibrationNet, RunConfig, dict]:
    """Rebuild the network a checkpoint was written from; returns (model, config, metadata)."""
    ckpt = load_checkpoint(path)
    meta = ckpt.metadata
    config = RunConfig.from_mapping({k: str(v) for k, v in meta.get('config', {}).items()})
    rig = rig or SensorRig.from_dict(meta['rig'])
    config.check_rig(rig)
    model = build_model(config, rig)
    model.load_state_dict({k[len('model.'):]: v for k, v in ckpt.split('model.').items()})
    return model, config, meta


class Trainer:

    def __init__(self, config: RunConfig, dataset: Dataset, checkpoint, sensor: str = 'radar'):
        config.check_rig(dataset.rig)
        self.config = config
        self.rig = dataset.rig
        self.sensor = sensor
        self.checkpoint = Path(checkpoint)
        self.train_samples = dataset.split('train')
        self.val_samples = dataset.split('val')
        if not self.train_samples:
            raise ConfigError("the dataset has no training samples")
        self.train_set = prepare_all(self.train_samples, config, self.rig, sensor)
        self.val_set = prepare_all(self.val_samples, config, self.rig, sensor)
        self.model = build_model(config, self.rig)
        self.optimizer = Adam(self.model, lr=config.learning_rate)
        self.epoch = 0
        self.step = 0
        self.best_score = math.inf
        self.last_losses: list[dict] = []

    # checkpoints

    def _metadata(self) -> dict:
        return {
            'config': self.config.as_dict(),
            'rig': self.rig.as_dict(),
            'sensor': self.sensor,
            'epoch': self.epoch,
            'step': self.step,
            'best_score': None if math.isinf(self.best_score) else self.best_score,
        }

    def _tensors(self) -> dict[str, np.ndarray]:
        tensors = {f"model.{k}": v for k, v in self.model.state_dict().items()}
        tensors.update(self.optimizer.state_dict())
        return tensors

    def save(self, path) -> Path:
        return save_checkpoint(path, self._tensors(), self._metadata())

    def resume(self, path) -> None:
        ckpt = load_checkpoint(path)
        meta = ckpt.metadata
        if meta.get('config') != self.config.as_dict():
            raise ConfigError(f"{path} was written with a different config")
        self.model.load_state_dict({k[len('model.'):]: v for k, v in ckpt.split('model.').items()})
        self.optimizer.load_state_dict(ckpt.split('adam.'))
        self.epoch = int(meta['epoch'])
        self.step = int(meta['step'])
        best = meta.get('best_score')
        self.best_score = math.inf if best is None else float(best)
        logger.info("resumed from %s at epoch %d (step %d)", path, self.epoch, self.step)

    # epochs

    def _abort(self, ids: list[str], reason: str) -> None:
        norms = {name: float(np.linalg.norm(p.data.astype(np.float64))) for name, p in self.model.named_parameters()}
        path = dump_path(self.checkpoint)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(
            path,
            sample_ids=np.array(ids),
            last_losses=np.array([[r[k] for k in ('total', 'calibration', 'matching_fv', 'matching_bev')]
                                  for r in self.last_losses[-16:]], dtype=np.float64).reshape(-1, 4),
            param_names=np.array(list(norms)),
            param_norms=np.array(list(norms.values())),
            epoch=np.array(self.epoch),
            step=np.array(self.step),
        )
        logger.error("training aborted at epoch %d step %d: %s (dump: %s)", self.epoch, self.step, reason, path)
        raise NumericalError(f"{reason}; diagnostic dump written to {path}")

    def train_epoch(self) -> dict:
        config = self.config
        self.model.train()
        self.optimizer.lr = halving_lr(config.learning_rate, self.epoch, config.lr_halving_period)
        order = np.random.default_rng((config.seed, TRAIN_STREAM, self.epoch)).permutation(len(self.train_set))
        t_all = initial_estimates(self.train_samples, config.ranges(), config.seed, TRAIN_STREAM, self.epoch)
        sums = {'total': 0.0, 'calibration': 0.0, 'matching_fv': 0.0, 'matching_bev': 0.0}
        batches = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            prepared = [self.train_set[i] for i in idx]
            ids = [p.sample.sample_id for p in prepared]
            try:
                result = compute_losses(self.model, prepared, [t_all[i] for i in idx], config, self.rig)
            except NumericalError as exc:
                self._abort(ids, str(exc))
            losses = result.losses.as_dict()
            self.last_losses.append(losses)
            if not result.losses.is_finite():
                self._abort(ids, "non-finite loss")
            self.model.zero_grad()
            result.backward(self.model)
            self.optimizer.step()
            self.step += 1
            batches += 1
            for key, value in losses.items():
                sums[key] += value
            logger.debug("epoch %d step %d: loss %.6f", self.epoch, self.step, losses['total'])
        return {key: value / batches for key, value in sums.items()}

    def validate(self) -> dict:
        if not self.val_set:
            return {}
        self.model.eval()
        t_init = initial_estimates(self.val_samples, self.config.ranges(), self.config.seed, VAL_STREAM)
        traces, _ = run_iterations(self.val_set, t_init, self.model, self.config.iterations, self.rig,
                                   self.config.normalize_maps)
        self.model.train()
        return mean_errors(traces, self.val_samples)

    def fit(self, epochs: int | None = None, on_epoch=None) -> list[dict]:
        """
        Run epochs up to `epochs` (default: the configured count), appending one
        ledger record per epoch. Returns the records written by this call.
        """
        epochs = self.config.epochs if epochs is None else epochs
        ledger = ledger_path(self.checkpoint)
        ledger.parent.mkdir(parents=True, exist_ok=True)
        if self.epoch == 0:
            ledger.write_text('')
        records = []
        while self.epoch < epochs:
            train = self.train_epoch()
            val = self.validate()
            score = selection_score(val, self.config) if val else train['total']
            improved = score < self.best_score
            if improved:
                self.best_score = score
            record = {
                'epoch': self.epoch,
                'step': self.step,
                'lr': self.optimizer.lr,
                'train': train,
                'val': val,
                'score': score,
                'best': improved,
            }
            self.epoch += 1
            if improved:
                self.save(self.checkpoint)
            self.save(last_checkpoint_path(self.checkpoint))
            with ledger.open('a') as fh:
                fh.write(json.dumps(record, sort_keys=True) + '\n')
            logger.info(
                "epoch %d: loss %.5f (calib %.5f, fv %.5f, bev %.5f) val %s",
                record['epoch'], train['total'], train['calibration'], train['matching_fv'], train['matching_bev'],
                ', '.join(f"{k}={v:.3f}" for k, v in sorted(val.items())) or 'n/a',
            )
            records.append(record)
            if on_epoch is not None:
                on_epoch(record)
        return records


def read_ledger(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
