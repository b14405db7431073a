"""
Seed × matching-weight ablation.

Every (seed, beta) pair trains its own model on the training split and is
evaluated on the test split from initial estimates drawn with that seed. A
seed passes when the reference model, trained within the time budget, brings
the mean rotation error to ROT_TARGET and the mean translation error to
TRANS_TARGET of their initial values and beats the baseline weight on
translation. Learning holds when at least two thirds of the seeds pass;
iteration monotonicity holds when no reference model lets its median error
grow from one iteration to the next.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from synthdata.storage import Dataset

from .config import ConfigError, RunConfig
from .evaluation import EvalReport, evaluate
from .training import Trainer, load_model

logger = logging.getLogger(__name__)

ROT_TARGET = 0.30
TRANS_TARGET = 0.60
TIME_BUDGET_S = 30 * 60.0


def error_ratio(final: float, initial: float) -> float:
    if initial > 0:
        return final / initial
    return 0.0 if final == 0 else float('inf')


def non_increasing(values: list[float], tol: float = 1e-9) -> bool:
    return all(b <= a + tol for a, b in zip(values, values[1:]))


@dataclass(frozen=True)
class AblationRun:
    seed: int
    beta: float
    checkpoint: str
    train_seconds: float
    initial: dict
    final: dict
    per_iteration: list[dict]

    @classmethod
    def from_report(cls, seed: int, beta: float, checkpoint, train_seconds: float,
                    report: EvalReport) -> AblationRun:
        return cls(seed, beta, str(checkpoint), train_seconds,
                   report.initial_aggregate, report.aggregate, report.per_iteration())

    @property
    def rot_ratio(self) -> float:
        return error_ratio(self.final['rot_mean_deg'], self.initial['rot_mean_deg'])

    @property
    def trans_ratio(self) -> float:
        return error_ratio(self.final['trans_mean_cm'], self.initial['trans_mean_cm'])

    @property
    def converged(self) -> bool:
        return (self.rot_ratio <= ROT_TARGET and self.trans_ratio <= TRANS_TARGET
                and self.train_seconds <= TIME_BUDGET_S)

    @property
    def monotone(self) -> bool:
        """Median rotation and translation errors never grow from one iteration to the next."""
        return (non_increasing([r['rot_median_deg'] for r in self.per_iteration])
                and non_increasing([r['trans_median_cm'] for r in self.per_iteration]))

    def as_dict(self) -> dict:
        return {
            'seed': self.seed,
            'beta': self.beta,
            'checkpoint': self.checkpoint,
            'train_seconds': round(self.train_seconds, 3),
            'initial': self.initial,
            'final': self.final,
            'per_iteration': self.per_iteration,
            'rot_ratio': self.rot_ratio,
            'trans_ratio': self.trans_ratio,
            'converged': self.converged,
            'monotone': self.monotone,
        }


@dataclass
class AblationSummary:
    beta: float
    baseline_beta: float
    runs: list[AblationRun] = field(default_factory=list)

    @property
    def seeds(self) -> list[int]:
        return sorted({r.seed for r in self.runs})

    def find(self, seed: int, beta: float) -> AblationRun | None:
        return next((r for r in self.runs if r.seed == seed and r.beta == beta), None)

    def seed_passes(self, seed: int) -> bool:
        reference, baseline = self.find(seed, self.beta), self.find(seed, self.baseline_beta)
        if reference is None or baseline is None:
            return False
        return reference.converged and reference.final['trans_mean_cm'] < baseline.final['trans_mean_cm']

    @property
    def learning_holds(self) -> bool:
        seeds = self.seeds
        passed = sum(self.seed_passes(s) for s in seeds)
        return bool(seeds) and 3 * passed >= 2 * len(seeds)

    @property
    def monotone_holds(self) -> bool:
        references = [r for r in self.runs if r.beta == self.beta]
        return bool(references) and all(r.monotone for r in references)

    def as_dict(self) -> dict:
        return {
            'beta': self.beta,
            'baseline_beta': self.baseline_beta,
            'targets': {'rot_ratio': ROT_TARGET, 'trans_ratio': TRANS_TARGET, 'train_seconds': TIME_BUDGET_S},
            'seeds': {str(s): self.seed_passes(s) for s in self.seeds},
            'learning': self.learning_holds,
            'monotone': self.monotone_holds,
            'runs': [r.as_dict() for r in self.runs],
        }

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + '\n')
        return path

    def table(self) -> str:
        header = f"{'seed':>4} {'beta':>6} | {'rot deg':>8} {'ratio':>6} | {'trans cm':>8} {'ratio':>6} | {'secs':>7} | medians"
        lines = [header, '-' * len(header)]
        for r in self.runs:
            medians = ' '.join(f"{row['rot_median_deg']:.2f}/{row['trans_median_cm']:.1f}" for row in r.per_iteration)
            lines.append(
                f"{r.seed:>4} {r.beta:>6g} | {r.final['rot_mean_deg']:8.3f} {r.rot_ratio:6.2f} | "
                f"{r.final['trans_mean_cm']:8.3f} {r.trans_ratio:6.2f} | {r.train_seconds:7.1f} | {medians}"
            )
        return '\n'.join(lines)


def run_ablation(config: RunConfig, dataset: Dataset, out_dir, seeds: list[int], beta: float,
                 baseline_beta: float = 0.0, sensor: str = 'radar', on_run=None) -> AblationSummary:
    """Train and evaluate every (seed, beta) pair; writes checkpoints, reports and `ablation.json` to `out_dir`."""
    if beta == baseline_beta:
        raise ConfigError(f"the reference and baseline beta are both {beta}")
    if not seeds:
        raise ConfigError("at least one seed is required")
    test = dataset.split('test')
    if not test:
        raise ConfigError("the dataset has no test samples")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    range_name = config.miscalibration_range.upper()

    summary = AblationSummary(beta, baseline_beta)
    for seed in seeds:
        for b in (beta, baseline_beta):
            run_config = config.replace(seed=seed, beta=b)
            checkpoint = out / f"seed{seed}-beta{b:g}.ckpt"
            start = time.perf_counter()
            Trainer(run_config, dataset, checkpoint, sensor).fit()
            seconds = time.perf_counter() - start
            model, _, _ = load_model(checkpoint, dataset.rig)
            report = evaluate(model, test, dataset.rig, run_config, range_name, seed, sensor)
            report.write(checkpoint.with_suffix('.json'))
            run = AblationRun.from_report(seed, b, checkpoint, seconds, report)
            summary.runs.append(run)
            logger.info("seed %d beta %g: rotation %.2f of initial, translation %.2f of initial (%.0f s)",
                        seed, b, run.rot_ratio, run.trans_ratio, seconds)
            if on_run is not None:
                on_run(run, report)
    summary.write(out / 'ablation.json')
    return summary
