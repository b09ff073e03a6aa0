"""Density regressor head, ground-truth density maps and the training loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .attention import FeatureSequence
from .numcore import Rng, Tensor
from .numcore.params import constant_param, uniform_param


@dataclass
class DensityMap:
    """2-D non-negative map; ``scale`` is density cells per image pixel."""

    values: Tensor
    scale: float = 1.0

    @property
    def count(self) -> float:
        return float(np.sum(self.values.data, dtype=np.float64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class LossConfig:
    lam: float = 1e-4
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_c1: float = 0.01 ** 2
    ssim_c2: float = 0.03 ** 2
    gt_sigma: float = 2.0
    norm_eps: float = 1e-8

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.ssim_window % 2 == 0:
            raise ValueError(f"ssim_window must be odd, got {self.ssim_window}")


@dataclass
class RegressorParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor

    @classmethod
    def init(cls, rng: Rng, d: int, channels: tuple[int, int] = (32, 16)) -> "RegressorParams":
        c1, c2 = channels
        return cls(
            uniform_param(rng, (c1, d, 3, 3), math.sqrt(6.0 / (d * 9))), constant_param((c1,), 0.0),
            uniform_param(rng, (c2, c1, 3, 3), math.sqrt(6.0 / (c1 * 9))), constant_param((c2,), 0.0),
            # small output layer with a positive bias: a large initial count drives every
            # final pre-activation negative within a few steps and the relu never recovers
            uniform_param(rng, (1, c2, 1, 1), 0.1 * math.sqrt(6.0 / c2)), constant_param((1,), 0.01),
        )


def regress_density(x_star: FeatureSequence, h_l: int, w_l: int, p: RegressorParams,
                    scale: float = 1.0) -> DensityMap:
    """Tokens -> (d, h, w) map -> x2 upsample -> conv3x3/relu, conv3x3/relu, conv1x1/relu."""
    tokens = x_star.tokens if isinstance(x_star, FeatureSequence) else nc.as_tensor(x_star)
    if tokens.shape[0] != h_l * w_l:
        raise ValueError(f"{tokens.shape[0]} tokens cannot fill a {h_l}x{w_l} grid")
    d = tokens.shape[1]
    fmap = nc.reshape(nc.transpose(tokens), (d, h_l, w_l))
    x = nc.upsample2(fmap)
    x = nc.relu(nc.conv2d(x, p.w1, p.b1, pad=1))
    x = nc.relu(nc.conv2d(x, p.w2, p.b2, pad=1))
    x = nc.relu(nc.conv2d(x, p.w3, p.b3, pad=0))
    return DensityMap(nc.reshape(x, (2 * h_l, 2 * w_l)), scale)


class PointError(ValueError):
    pass


def gaussian_footprint(sigma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Offsets (dy, dx) and weights of a Gaussian truncated at radius 4 sigma."""
    r = int(math.ceil(4.0 * sigma))
    dy, dx = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    inside = dy ** 2 + dx ** 2 <= (4.0 * sigma) ** 2
    weights = np.exp(-(dy ** 2 + dx ** 2) / (2.0 * sigma ** 2))
    return dy[inside], dx[inside], weights[inside]


def gt_density_from_points(points, grid: tuple[int, int], scale: float, sigma: float = 2.0,
                           sample_id: str | None = None) -> DensityMap:
    """Unit-mass Gaussian per point on the density grid (float64).

    A point at image pixel coords (x, y) lands in cell (floor(y*scale), floor(x*scale)).
    Kernels clipped by the border are renormalized, so the map sums to len(points).
    """
    hd, wd = grid
    img_w, img_h = wd / scale, hd / scale
    out = np.zeros((hd, wd), dtype=np.float64)
    dy, dx, wts = gaussian_footprint(sigma)
    for x, y in points:
        if not (0 <= x < img_w and 0 <= y < img_h):
            tag = f" in sample {sample_id}" if sample_id is not None else ""
            raise PointError(f"point ({x}, {y}) outside the {img_w:g}x{img_h:g} image{tag}")
        cy = min(int(math.floor(y * scale)), hd - 1)
        cx = min(int(math.floor(x * scale)), wd - 1)
        yy, xx = cy + dy, cx + dx
        ok = (yy >= 0) & (yy < hd) & (xx >= 0) & (xx < wd)
        w = wts[ok]
        np.add.at(out, (yy[ok], xx[ok]), w / w.sum())
    return DensityMap(Tensor(out, dtype=np.float64), scale)


def _values(m) -> Tensor:
    return m.values if isinstance(m, DensityMap) else nc.as_tensor(m)


def _check_same_shape(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"density map shapes differ: {a.shape} vs {b.shape}")


def euclidean_loss(d, gt) -> Tensor:
    """Squared L2 distance summed over all cells."""
    dv, gv = _values(d), _values(gt)
    _check_same_shape(dv, gv)
    if gv.dtype != dv.dtype:
        gv = Tensor(gv.data, dtype=dv.dtype)
    return nc.sum(nc.square(dv - gv))


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    g = np.exp(-((np.arange(size) - size // 2) ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(d, gt, cfg: LossConfig) -> Tensor:
    """Per-cell SSIM with a zero-padded Gaussian window, maps scaled by their joint max."""
    dv, gv = _values(d), _values(gt)
    _check_same_shape(dv, gv)
    k = cfg.ssim_window
    if min(dv.shape) < k:
        raise ValueError(f"map {dv.shape} is smaller than the SSIM window {k}")
    if gv.dtype != dv.dtype:
        gv = Tensor(gv.data, dtype=dv.dtype)
    norm = nc.maximum(nc.maximum(nc.amax(dv), nc.amax(gv)), cfg.norm_eps)
    x = nc.reshape(dv / norm, (1,) + dv.shape)
    y = nc.reshape(gv / norm, (1,) + gv.shape)
    win = Tensor(gaussian_window(k, cfg.ssim_sigma)[None, None], dtype=dv.dtype)
    pad = k // 2

    def blur(t):
        return nc.conv2d(t, win, pad=pad)

    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = blur(x * x) - mu_xx
    var_y = blur(y * y) - mu_yy
    cov = blur(x * y) - mu_xy
    num = (2.0 * mu_xy + cfg.ssim_c1) * (2.0 * cov + cfg.ssim_c2)
    den = (mu_xx + mu_yy + cfg.ssim_c1) * (var_x + var_y + cfg.ssim_c2)
    return nc.reshape(num / den, dv.shape)


def ssim_loss(d, gt, cfg: LossConfig) -> Tensor:
    return 1.0 - nc.mean(ssim_map(d, gt, cfg))


def total_loss(d, gt, cfg: LossConfig) -> Tensor:
    """Euclidean loss plus ``cfg.lam`` times the SSIM loss; the SSIM term is skipped when lam == 0."""
    loss = euclidean_loss(d, gt)
    if cfg.lam > 0:
        loss = loss + cfg.lam * ssim_loss(d, gt, cfg)
    return loss
