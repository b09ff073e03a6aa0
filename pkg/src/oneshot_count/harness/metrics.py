from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass
class Metrics:
    mae: float
    rmse: float
    per_sample: list[tuple[float, float]] = field(default_factory=list)

    def as_row(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "n": len(self.per_sample)}


def counting_metrics(gt_counts, pred_counts) -> Metrics:
    """MAE and RMSE between ground-truth and predicted counts."""
    gt = [float(g) for g in gt_counts]
    pred = [float(p) for p in pred_counts]
    if not gt:
        raise ValueError("cannot compute metrics on an empty split")
    if len(gt) != len(pred):
        raise ValueError(f"{len(gt)} ground-truth counts vs {len(pred)} predictions")
    m = len(gt)
    errs = [abs(g - p) for g, p in zip(gt, pred)]
    mae = math.fsum(errs) / m
    # factor out the largest error so tiny errors do not underflow when squared
    top = max(errs)
    rmse = top * math.sqrt(math.fsum((e / top) ** 2 for e in errs) / m) if top > 0 else 0.0
    return Metrics(mae, rmse, list(zip(gt, pred)))
