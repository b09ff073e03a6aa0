"""Backbone, query/support feature sequences, scale aggregation and
sinusoidal position embedding."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .attention import FeatureSequence
from .imaging import pad_to_multiple, resize_bilinear
from .numcore import Rng, Tensor
from .numcore.params import constant_param, uniform_param


class BoxError(ValueError):
    pass


@dataclass
class BackboneSpec:
    channels: tuple[int, ...] = (16, 32, 64)
    convs_per_stage: int = 2
    d: int = 64

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) < 2:
            raise ValueError("backbone needs at least 2 levels for scale aggregation")

    @property
    def levels(self) -> int:
        return len(self.channels)

    @property
    def stride(self) -> int:
        return 2 ** self.levels


@dataclass(frozen=True)
class SupportBox:
    """Pixel box, inclusive-exclusive: columns x0..x1-1, rows y0..y1-1."""

    x0: int
    y0: int
    x1: int
    y1: int

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    def clipped(self, width: int, height: int) -> "SupportBox":
        box = SupportBox(max(0, self.x0), max(0, self.y0), min(width, self.x1), min(height, self.y1))
        if box.x1 <= box.x0 or box.y1 <= box.y0:
            raise BoxError(f"degenerate support box {self.as_list()} for a {width}x{height} image")
        if box != self:
            warnings.warn(f"support box {self.as_list()} clipped to {box.as_list()}", stacklevel=3)
        return box


@dataclass
class ScaleAggregationConfig:
    delta: int = 2
    support_resize: int = 32


@dataclass
class ConvLayer:
    w: Tensor
    b: Tensor


@dataclass
class Projection:
    w: Tensor  # (C_level, d)
    b: Tensor  # (d,)


@dataclass
class BackboneParams:
    stages: list[list[ConvLayer]]
    proj: list[Projection]
    spec: BackboneSpec = field(default_factory=BackboneSpec)

    @classmethod
    def init(cls, rng: Rng, spec: BackboneSpec, in_channels: int = 3) -> "BackboneParams":
        stages = []
        c_in = in_channels
        for c_out in spec.channels:
            layers = []
            for _ in range(spec.convs_per_stage):
                fan_in = c_in * 9
                layers.append(ConvLayer(uniform_param(rng, (c_out, c_in, 3, 3), math.sqrt(6.0 / fan_in)),
                                        constant_param((c_out,), 0.0)))
                c_in = c_out
            stages.append(layers)
        proj = [Projection(uniform_param(rng, (c, spec.d), 1.0 / math.sqrt(c)), constant_param((spec.d,), 0.0))
                for c in spec.channels]
        return cls(stages, proj, spec)


def run_backbone(image, params: BackboneParams) -> list[Tensor]:
    """Return the pooled feature map of every level, finest first."""
    x = nc.as_tensor(image)
    maps = []
    for layers in params.stages:
        for layer in layers:
            x = nc.relu(nc.conv2d(x, layer.w, layer.b, stride=1, pad=1))
        x = nc.maxpool2(x)
        maps.append(x)
    return maps


def _project(fmap: Tensor, proj: Projection) -> Tensor:
    c, h, w = fmap.shape
    tokens = nc.transpose(nc.reshape(fmap, (c, h * w)))
    return tokens @ proj.w + proj.b


def grid_positions(h: int, w: int, stride: int, fine_width: int) -> np.ndarray:
    """Fine-grid linear position of each (y, x) cell of a stride-``stride`` map, row-major."""
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return ((ys * stride) * fine_width + xs * stride).reshape(-1).astype(np.int64)


def extract_query_features(image, params: BackboneParams, pad: bool = True) -> FeatureSequence:
    """Flatten the last-level map of the query image into (h_l * w_l, d) tokens."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    stride = params.spec.stride
    if arr.shape[1] % stride or arr.shape[2] % stride:
        if not pad:
            raise ValueError(f"image dims {arr.shape[1:]} are not multiples of the backbone stride {stride}")
        arr = pad_to_multiple(arr, stride)
    levels = params.spec.levels
    fmap = run_backbone(Tensor(arr, dtype=nc.default_dtype()), params)[-1]
    _, h, w = fmap.shape
    tokens = _project(fmap, params.proj[-1])
    pos = grid_positions(h, w, 2 ** levels, arr.shape[2])
    return FeatureSequence(tokens, np.full(h * w, levels), pos, grid=(h, w))


def crop_support(image: np.ndarray, box: SupportBox, size: int) -> np.ndarray:
    _, height, width = image.shape
    box = box.clipped(width, height)
    crop = image[:, box.y0 : box.y1, box.x0 : box.x1]
    return resize_bilinear(crop, size, size)


def extract_support_features(image, box: SupportBox, cfg: ScaleAggregationConfig,
                             params: BackboneParams) -> FeatureSequence:
    """Concatenate the top ``delta`` level maps of the resized box crop, coarsest first."""
    levels = params.spec.levels
    if not 1 <= cfg.delta <= levels:
        raise ValueError(f"delta must be in [1, {levels}], got {cfg.delta}")
    size = cfg.support_resize
    if size % params.spec.stride:
        raise ValueError(f"support_resize {size} must be a multiple of the backbone stride {params.spec.stride}")
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    crop = crop_support(arr, box, size)
    maps = run_backbone(Tensor(crop, dtype=nc.default_dtype()), params)
    tokens, scales, positions = [], [], []
    for level in range(levels, levels - cfg.delta, -1):
        fmap = maps[level - 1]
        _, h, w = fmap.shape
        tokens.append(_project(fmap, params.proj[level - 1]))
        scales.append(np.full(h * w, level))
        positions.append(grid_positions(h, w, 2 ** level, size))
    seq_tokens = tokens[0] if len(tokens) == 1 else nc.concat(tokens, axis=0)
    return FeatureSequence(seq_tokens, np.concatenate(scales), np.concatenate(positions))


def sinusoidal_pe(pos, d: int) -> np.ndarray:
    """Sinusoidal embedding; a scalar ``pos`` gives shape (d,), an array gives (len(pos), d)."""
    if d % 2:
        raise ValueError(f"position embedding needs an even dimension, got {d}")
    p = np.asarray(pos, dtype=np.float64)
    freq = 1.0 / (10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d))
    angles = p[..., None] * freq
    out = np.empty(p.shape + (d,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def attach_pe(seq: FeatureSequence, enabled: bool = True) -> FeatureSequence:
    if not enabled:
        return seq
    table = sinusoidal_pe(seq.pos, seq.dim).astype(seq.tokens.dtype)
    return seq.with_tokens(seq.tokens + Tensor(table, dtype=seq.tokens.dtype))
