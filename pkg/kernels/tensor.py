"""
Parameter storage for the hand-differentiated network.

Activations travel as plain numpy arrays; only trainable state lives in
`Tensor`/`Parameter` objects so it can be named, checkpointed and updated.
Gradient buffers are float64 accumulators.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

COMPUTE_DTYPE = np.float32


class ShapeError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


def check_shape(name: str, array: np.ndarray, expected: tuple) -> None:
    """`expected` may hold None for free extents."""
    if array.ndim != len(expected) or any(e is not None and a != e for a, e in zip(array.shape, expected)):
        raise ShapeError(f"{name}: expected shape {expected}, got {array.shape}")


@dataclass(eq=False)
class Tensor:
    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data)
        if self.grad is not None and self.grad.size != self.data.size:
            raise ShapeError("gradient buffer must match data length")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros(self.data.shape, dtype=np.float64)

    def accumulate(self, g) -> None:
        if self.grad is None:
            self.zero_grad()
        self.grad += np.asarray(g, dtype=np.float64).reshape(self.data.shape)


@dataclass(eq=False)
class Parameter:
    tensor: Tensor
    name: str = ''
    trainable: bool = True

    @classmethod
    def of(cls, array, trainable=True) -> Parameter:
        return cls(Tensor(np.asarray(array, dtype=COMPUTE_DTYPE)), trainable=trainable)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value) -> None:
        self.tensor.data = np.ascontiguousarray(value, dtype=self.tensor.data.dtype)

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def accumulate(self, g) -> None:
        if self.trainable:
            self.tensor.accumulate(g)


class Module:
    """
    Container with ordered, named parameters and children.

    Layers expose `forward(...) -> (output, cache)` and `backward(grad, cache)`;
    caches are plain tuples so one module can run several times (calibration
    iterations) before a single backward sweep.
    """

    def __init__(self):
        self._params: dict[str, Parameter] = {}
        self._children: dict[str, Module] = {}
        self.training = True

    def param(self, name: str, array, trainable=True) -> Parameter:
        p = Parameter.of(array, trainable)
        self._params[name] = p
        return p

    def child(self, name: str, module: Module) -> Module:
        self._children[name] = module
        return module

    def named_parameters(self, prefix='') -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            full = f"{prefix}{name}"
            p.name = full
            yield full, p
        for name, module in self._children.items():
            yield from module.named_parameters(f"{prefix}{name}.")

    def parameters(self, trainable_only=True) -> list[Parameter]:
        return [p for _, p in self.named_parameters() if p.trainable or not trainable_only]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ShapeError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            if p.data.shape != state[name].shape:
                raise ShapeError(f"{name}: expected {p.data.shape}, got {state[name].shape}")
            p.data = state[name]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.tensor.zero_grad()

    def astype(self, dtype) -> Module:
        for _, p in self.named_parameters():
            p.tensor.data = p.tensor.data.astype(dtype)
        return self

    def train(self, mode=True) -> Module:
        self.training = mode
        for module in self._children.values():
            module.train(mode)
        return self

    def eval(self) -> Module:
        return self.train(False)
