"""End-to-end one-shot counting network and its configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .attention import CorrelationConfig, CorrelationParams, feature_correlation
from .density import DensityMap, LossConfig, RegressorParams, regress_density
from .features import (BackboneParams, BackboneSpec, ScaleAggregationConfig, SupportBox, attach_pe,
                       extract_query_features, extract_support_features)
from .numcore import Rng
from .numcore.params import named_parameters


@dataclass
class ModelConfig:
    d: int = 64
    h: int = 4
    T: int = 2
    delta: int = 2
    lam: float = 1e-4
    backbone_channels: tuple[int, ...] = (16, 32, 64)
    convs_per_stage: int = 2
    regressor_channels: tuple[int, int] = (32, 16)
    ffn_hidden: int | None = None
    support_resize: int = 32
    use_pe: bool = True
    gt_sigma: float = 2.0
    lr: float = 5e-4
    warmup_steps: int = 1000
    epochs: int = 10
    seed: int = 0
    augment: bool = True
    # ablation switches; False removes the term
    self_attn_x: bool = True
    self_attn_s: bool = True
    scale_agg: bool = True
    ssim: bool = True

    def __post_init__(self):
        self.backbone_channels = tuple(int(c) for c in self.backbone_channels)
        self.regressor_channels = tuple(int(c) for c in self.regressor_channels)
        if self.d % self.h:
            raise ValueError(f"d={self.d} is not divisible by h={self.h}")
        if self.d % 2:
            raise ValueError(f"d={self.d} must be even for the position embedding")
        if not 1 <= self.delta <= len(self.backbone_channels):
            raise ValueError(f"delta={self.delta} outside [1, {len(self.backbone_channels)}]")

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_channels"] = list(self.backbone_channels)
        d["regressor_channels"] = list(self.regressor_channels)
        return d

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @property
    def effective_delta(self) -> int:
        return self.delta if self.scale_agg else 1

    @property
    def effective_lambda(self) -> float:
        return self.lam if self.ssim else 0.0

    def backbone_spec(self) -> BackboneSpec:
        return BackboneSpec(self.backbone_channels, self.convs_per_stage, self.d)

    def correlation(self) -> CorrelationConfig:
        return CorrelationConfig(self.h, self.T, self.use_pe, self.ffn_hidden, self.self_attn_x, self.self_attn_s)

    def scale_aggregation(self) -> ScaleAggregationConfig:
        return ScaleAggregationConfig(self.effective_delta, self.support_resize)

    def loss(self) -> LossConfig:
        return LossConfig(lam=self.effective_lambda, gt_sigma=self.gt_sigma)


@dataclass
class ModelParams:
    backbone: BackboneParams
    correlation: CorrelationParams
    regressor: RegressorParams


class CountingModel:
    def __init__(self, cfg: ModelConfig, params: ModelParams | None = None):
        self.cfg = cfg
        if params is None:
            rng = Rng(cfg.seed)
            params = ModelParams(
                BackboneParams.init(rng.derive(1), cfg.backbone_spec()),
                CorrelationParams.init(rng.derive(2), cfg.d, cfg.correlation()),
                RegressorParams.init(rng.derive(3), cfg.d, cfg.regressor_channels),
            )
        self.params = params
        self._named = named_parameters(params)

    def parameters(self) -> dict:
        return self._named

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self._named.values()))

    @property
    def stride(self) -> int:
        return 2 ** len(self.cfg.backbone_channels)

    @property
    def density_scale(self) -> float:
        return 2.0 / self.stride

    def forward(self, image: np.ndarray, box: SupportBox, trace: list | None = None) -> DensityMap:
        cfg = self.cfg
        p = self.params
        x = extract_query_features(image, p.backbone)
        s = extract_support_features(image, box, cfg.scale_aggregation(), p.backbone)
        x = attach_pe(x, cfg.use_pe)
        s = attach_pe(s, cfg.use_pe)
        x_star, _ = feature_correlation(x, s, cfg.correlation(), p.correlation, trace)
        h_l, w_l = x.grid
        return regress_density(x_star, h_l, w_l, p.regressor, self.density_scale)

    __call__ = forward
