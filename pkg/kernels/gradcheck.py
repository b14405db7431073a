"""
Central finite-difference checking of hand-written backward passes.

A fragment under test is a function `run(inputs) -> (loss, backward)` where
`loss` is a scalar and `backward()` accumulates parameter gradients and returns
a dict of input gradients. Checks are run in float64: callers promote the
module with `Module.astype(np.float64)` and pass float64 inputs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Parameter

logger = logging.getLogger(__name__)

Fragment = Callable[[dict], tuple[float, Callable[[], dict]]]


@dataclass
class GradCheckReport:
    name: str
    tol: float
    errors: dict[str, float] = field(default_factory=dict)  # max rel. error per tensor
    finite: bool = True

    @property
    def max_rel_error(self) -> float:
        return max(self.errors.values(), default=0.0) if self.finite else float('inf')

    @property
    def passed(self) -> bool:
        return self.finite and self.max_rel_error < self.tol

    def as_row(self) -> dict:
        return {
            'fragment': self.name,
            'max_rel_error': self.max_rel_error,
            'tol': self.tol,
            'passed': self.passed,
        }


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def _sample_indices(rng, size: int, max_entries: int) -> np.ndarray:
    if size <= max_entries:
        return np.arange(size)
    return np.sort(rng.choice(size, max_entries, replace=False))


def grad_check(run: Fragment, params: list[Parameter], inputs: dict[str, np.ndarray],
               eps: float = 1e-6, tol: float = 1e-3, name: str = 'fragment',
               max_entries: int = 24, seed: int = 0) -> GradCheckReport:
    """
    Compare analytic gradients of every parameter and every input against
    central differences on up to `max_entries` sampled entries per tensor.
    """
    report = GradCheckReport(name, tol)
    for p in params:
        p.tensor.zero_grad()
    loss, backward = run(inputs)
    input_grads = backward()
    if not np.isfinite(loss):
        report.finite = False
        return report

    targets = [(f"param:{p.name}", p.tensor.data, p.grad.copy()) for p in params]
    targets += [(f"input:{key}", inputs[key], np.asarray(input_grads[key], dtype=np.float64))
                for key in sorted(input_grads)]

    rng = np.random.default_rng(seed)
    for label, array, analytic in targets:
        if not np.all(np.isfinite(analytic)):
            report.finite = False
            return report
        flat = array.reshape(-1)
        worst = 0.0
        for idx in _sample_indices(rng, flat.size, max_entries):
            original = flat[idx]
            flat[idx] = original + eps
            plus, _ = run(inputs)
            flat[idx] = original - eps
            minus, _ = run(inputs)
            flat[idx] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                report.finite = False
                return report
            numeric = (plus - minus) / (2.0 * eps)
            worst = max(worst, float(relative_error(analytic.reshape(-1)[idx], numeric)))
        report.errors[label] = worst

    logger.debug("grad check %s: max rel. error %.3e (tol %.0e)", name, report.max_rel_error, tol)
    return report


def projection_loss(y: np.ndarray, seed: int = 1) -> tuple[float, np.ndarray]:
    """Scalar probe Σ y·r with a fixed random r; returns (loss, dloss/dy)."""
    r = np.random.default_rng(seed).normal(size=y.shape)
    return float(np.sum(y.astype(np.float64) * r)), r


def jitter_parameters(module, seed: int = 0, scale: float = 0.1):
    """
    Add Gaussian noise to every trainable parameter so zero-initialised
    layers carry non-trivial gradients during a check.
    """
    rng = np.random.default_rng(seed)
    for p in module.parameters():
        p.data = p.data + scale * rng.normal(size=p.data.shape)
    return module
