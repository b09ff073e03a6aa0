"""Training loop, evaluation, prediction and ablation runs."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import numcore as nc
from ..datagen import CountingSample, augment
from ..density import DensityMap, gt_density_from_points, total_loss
from ..features import SupportBox
from ..imaging import pad_to_multiple
from ..model import CountingModel, ModelConfig
from ..numcore import AdamState, Rng, tnsr
from .checkpoint import Checkpoint
from .metrics import Metrics, counting_metrics

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "train_loss", "val_mae", "val_rmse")


class TrainingError(RuntimeError):
    def __init__(self, message: str, checkpoint_path: str | None = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def sample_loss(model: CountingModel, sample: CountingSample):
    pred = model(sample.image, sample.box)
    gt = gt_density_from_points(sample.points, pred.shape, pred.scale, model.cfg.gt_sigma, sample.sample_id)
    return total_loss(pred, gt, model.cfg.loss()), pred


def train(cfg: ModelConfig, train_samples: Sequence[CountingSample], val_samples: Sequence[CountingSample] = (),
          out_dir=None, model: CountingModel | None = None) -> TrainResult:
    """Batch-size-1 Adam training; keeps the checkpoint with the lowest validation MAE.

    With ``out_dir`` set, writes ``log.csv``, ``best.ckpt`` and ``last.ckpt`` there.
    """
    if not train_samples:
        raise ValueError("training split is empty")
    model = model or CountingModel(cfg)
    params = model.parameters()
    adam = AdamState()
    stream = Rng(cfg.seed).derive(0x7EA1)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    history: list[dict] = []
    best = Checkpoint.capture(model, adam, 0)
    best_mae = math.inf
    best_epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        epoch_rng = stream.derive(epoch)
        order = epoch_rng.permutation(len(train_samples))
        total = 0.0
        for step, idx in enumerate(order):
            sample = train_samples[int(idx)]
            if cfg.augment:
                sample = augment(sample, epoch_rng.derive(step), multiple=model.stride)
            loss, _ = sample_loss(model, sample)
            value = loss.item()
            if not math.isfinite(value):
                path = None
                if out is not None:
                    path = str(out / "last_good.ckpt")
                    best.save(path)
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, step {step}, sample {sample.sample_id}", path)
            nc.backward(loss, params.values())
            nc.adam_step(params, adam, learning_rate(cfg, adam.step + 1))
            total += value
        row = {"epoch": epoch, "train_loss": total / len(order)}
        if val_samples:
            m = evaluate(model, val_samples)
            row.update(val_mae=m.mae, val_rmse=m.rmse)
            if m.mae < best_mae:
                best_mae, best_epoch = m.mae, epoch
                best = Checkpoint.capture(model, adam, epoch)
        else:
            row.update(val_mae=float("nan"), val_rmse=float("nan"))
            best, best_epoch = Checkpoint.capture(model, adam, epoch), epoch
        history.append(row)
        log.info("epoch %d  train_loss %.5f  val_mae %.3f  val_rmse %.3f", epoch, row["train_loss"], row["val_mae"], row["val_rmse"])
        if out is not None:
            write_log(out / "log.csv", history)
    last = Checkpoint.capture(model, adam, cfg.epochs)
    if out is not None:
        best.save(out / "best.ckpt")
        last.save(out / "last.ckpt")
    return TrainResult(best, last, history, best_epoch)


def learning_rate(cfg: ModelConfig, step: int) -> float:
    """Linear warmup over ``cfg.warmup_steps`` Adam steps, then constant ``cfg.lr``."""
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    return cfg.lr


def write_log(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in LOG_FIELDS})


def _as_model(model_or_ckpt) -> CountingModel:
    if isinstance(model_or_ckpt, CountingModel):
        return model_or_ckpt
    if isinstance(model_or_ckpt, Checkpoint):
        return model_or_ckpt.build_model()
    return Checkpoint.load(model_or_ckpt).build_model()


def predict_density(model: CountingModel, image: np.ndarray, box: SupportBox) -> DensityMap:
    return model(image, box)


def evaluate(model_or_ckpt, samples: Sequence[CountingSample]) -> Metrics:
    """Count = sum of the predicted density map; MAE/RMSE over ``samples``."""
    if not samples:
        raise ValueError("cannot evaluate on an empty split")
    model = _as_model(model_or_ckpt)
    preds = [model(s.image, s.box).count for s in samples]
    return counting_metrics([s.count for s in samples], preds)


def mean_baseline(train_samples: Sequence[CountingSample], test_samples: Sequence[CountingSample]) -> Metrics:
    """Predict the mean training count for every test image."""
    mu = float(np.mean([s.count for s in train_samples]))
    return counting_metrics([s.count for s in test_samples], [mu] * len(test_samples))


def predict(model_or_ckpt, image: np.ndarray, box: SupportBox, out_prefix=None) -> tuple[float, DensityMap]:
    """Count one image; with ``out_prefix`` writes ``<prefix>.tnsr`` and ``<prefix>.pgm``."""
    model = _as_model(model_or_ckpt)
    image = np.asarray(image, dtype=np.float32)
    if image.shape[1] % model.stride or image.shape[2] % model.stride:
        log.warning("image %s is not a multiple of stride %d; reflect-padding", image.shape[1:], model.stride)
        image = pad_to_multiple(image, model.stride)
    dmap = model(image, box)
    if out_prefix is not None:
        prefix = Path(out_prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        tnsr.save(prefix.with_suffix(".tnsr"), dmap.values.data)
        tnsr.save_pgm(prefix.with_suffix(".pgm"), dmap.values.data)
    return dmap.count, dmap


ABLATION_ARMS = {
    "full": {},
    "-self_attn_x": {"self_attn_x": False},
    "-self_attn_s": {"self_attn_s": False},
    "-scale_agg": {"scale_agg": False},
    "-ssim": {"ssim": False},
}


def ablate(cfg: ModelConfig, train_samples, val_samples, test_samples, out_dir=None,
           arms: dict[str, dict] | None = None) -> dict[str, Metrics]:
    """Train and test the full model and each single-term removal with identical seeds."""
    arms = ABLATION_ARMS if arms is None else arms
    results = {}
    for name, overrides in arms.items():
        arm_cfg = replace(cfg, **overrides)
        arm_dir = Path(out_dir) / name if out_dir is not None else None
        log.info("ablation arm %s", name)
        res = train(arm_cfg, train_samples, val_samples, arm_dir)
        results[name] = evaluate(res.best, test_samples)
    if out_dir is not None:
        write_ablation_table(Path(out_dir) / "ablation.csv", results)
    return results


def write_ablation_table(path, results: dict[str, Metrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arm", "test_mae", "test_rmse"])
        for name, m in results.items():
            writer.writerow([name, f"{m.mae:.6f}", f"{m.rmse:.6f}"])


def format_table(results: dict[str, Metrics]) -> str:
    lines = [f"{'arm':<16}{'MAE':>10}{'RMSE':>10}"]
    for name, m in results.items():
        lines.append(f"{name:<16}{m.mae:>10.3f}{m.rmse:>10.3f}")
    return "\n".join(lines)
