"""
Strided conv stacks turning information maps into stride-8 feature grids.

Radar inputs (the radar map plus its residual against the image map of the
same view) go through three stride-2 blocks trained from scratch. Image maps
(FV depth, pseudo-BEV) go through two convolutions (stride 4 then 2); the first
kernel is wider than its stride so every pixel reaches the grid. In the FV
branch a context stack of the same shape reads the grayscale rendering of the
depth map and its output is added to the image features.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from kernels import functional as F
from kernels.layers import Conv2d
from kernels.tensor import Module, ShapeError

STRIDE = 8
RADAR_CHANNELS = 2

View = Literal['FV', 'BEV']
Source = Literal['radar', 'image']


@dataclass(frozen=True, eq=False)
class FeatureGrid:
    tensor: np.ndarray  # (B, C, h, w)
    view: View
    source: Source

    @property
    def spatial(self) -> tuple[int, int]:
        return self.tensor.shape[2], self.tensor.shape[3]

    def tokens(self) -> np.ndarray:
        return to_tokens(self.tensor)


def to_tokens(grid: np.ndarray) -> np.ndarray:
    """(B, C, h, w) -> (B, h·w, C), row-major over cells."""
    b, c, h, w = grid.shape
    return np.ascontiguousarray(grid.transpose(0, 2, 3, 1).reshape(b, h * w, c))


def from_tokens(tokens: np.ndarray, h: int, w: int) -> np.ndarray:
    b, m, c = tokens.shape
    if m != h * w:
        raise ShapeError(f"{m} tokens cannot fill a {h}x{w} grid")
    return np.ascontiguousarray(tokens.reshape(b, h, w, c).transpose(0, 3, 1, 2))


def check_stride(x: np.ndarray) -> None:
    if x.ndim != 4 or x.shape[2] % STRIDE or x.shape[3] % STRIDE:
        raise ShapeError(f"map dims must be divisible by {STRIDE}, got {x.shape}")


class ConvStack(Module):
    """Conv → leaky ReLU, repeated."""

    def __init__(self, specs: list[tuple[int, int, int, int]], rng: np.random.Generator):
        super().__init__()
        # (c_in, c_out, kernel, stride); padding is kernel // 2
        self.convs = [self.child(f"conv{i}", Conv2d(ci, co, k, rng, stride=s, padding=k // 2))
                      for i, (ci, co, k, s) in enumerate(specs)]

    def forward(self, x: np.ndarray):
        caches = []
        for conv in self.convs:
            pre, cache = conv.forward(x)
            caches.append((pre, cache))
            x = F.leaky_relu(pre)
        return x, caches

    def backward(self, dy: np.ndarray, caches):
        for conv, (pre, cache) in zip(reversed(self.convs), reversed(caches)):
            dy = conv.backward(F.leaky_relu_backward(dy, pre), cache)
        return dy


def radar_stack(channels: int, rng: np.random.Generator, in_channels: int = RADAR_CHANNELS) -> ConvStack:
    widths = [in_channels, max(channels // 4, 1), max(channels // 2, 1), channels]
    return ConvStack([(widths[i], widths[i + 1], 3, 2) for i in range(3)], rng)


def image_stack(channels: int, rng: np.random.Generator) -> ConvStack:
    mid = max(channels // 2, 1)
    return ConvStack([(1, mid, 7, 4), (mid, channels, 3, 2)], rng)


class RadarExtractor(Module):

    def __init__(self, channels: int, rng: np.random.Generator, view: View = 'FV'):
        super().__init__()
        self.view = view
        self.stack = self.child('stack', radar_stack(channels, rng))

    def forward(self, x: np.ndarray):
        check_stride(x)
        y, cache = self.stack.forward(x)
        return FeatureGrid(y, self.view, 'radar'), cache

    def backward(self, dy: np.ndarray, cache):
        return self.stack.backward(dy, cache)


class ImageExtractor(Module):
    """Depth (or pseudo-BEV) stack, plus the context stack when `with_context`."""

    def __init__(self, channels: int, rng: np.random.Generator, view: View = 'FV', with_context: bool = False):
        super().__init__()
        self.view = view
        self.stack = self.child('stack', image_stack(channels, rng))
        self.context = self.child('context', image_stack(channels, rng)) if with_context else None

    def forward(self, x: np.ndarray, context_image: np.ndarray | None = None):
        check_stride(x)
        y, cache = self.stack.forward(x)
        context_cache = None
        if self.context is not None and context_image is not None:
            if context_image.shape != x.shape:
                raise ShapeError(f"context image {context_image.shape} does not match map {x.shape}")
            yc, context_cache = self.context.forward(context_image)
            y = y + yc
        return FeatureGrid(y, self.view, 'image'), (cache, context_cache)

    def backward(self, dy: np.ndarray, cache):
        main, context_cache = cache
        dx = self.stack.backward(dy, main)
        if context_cache is not None:
            return dx, self.context.backward(dy, context_cache)
        return dx, None


def extract_features(extractor: RadarExtractor | ImageExtractor, info_map: np.ndarray,
                     context_image: np.ndarray | None = None) -> FeatureGrid:
    """Forward only; `info_map` is a (B, 1, H, W) batch, (B, 2, H, W) for radar."""
    if isinstance(extractor, ImageExtractor):
        grid, _ = extractor.forward(info_map, context_image)
    else:
        grid, _ = extractor.forward(info_map)
    return grid
