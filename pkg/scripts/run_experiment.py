"""Train the default model on the synthetic corpus and report test error against the mean predictor.

    python3 scripts/run_experiment.py --out-dir runs/default
    python3 scripts/run_experiment.py --out-dir runs/lr1e-4 --set lr=1e-4 --set epochs=5
"""

import argparse
import json
import logging
import time
from pathlib import Path

from oneshot_count.datagen import CorpusConfig, generate_split
from oneshot_count.harness import evaluate, mean_baseline, train
from oneshot_count.model import ModelConfig


def parse_overrides(pairs):
    out = {}
    for pair in pairs:
        key, _, value = pair.partition("=")
        out[key] = json.loads(value)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="runs/default")
    ap.add_argument("--corpus-seed", type=int, default=0)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=JSON", help="override a ModelConfig field")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    corpus = CorpusConfig(seed=args.corpus_seed)
    tr, va, te = (generate_split(corpus, s) for s in ("train", "val", "test"))
    cfg = ModelConfig.from_dict({**ModelConfig().to_dict(), **parse_overrides(args.set)})

    start = time.perf_counter()
    result = train(cfg, tr, va, args.out_dir)
    minutes = (time.perf_counter() - start) / 60
    test = evaluate(result.best, te)
    base = mean_baseline(tr, te)
    summary = {
        "config": cfg.to_dict(),
        "best_epoch": result.best_epoch,
        "test_mae": test.mae,
        "test_rmse": test.rmse,
        "baseline_mae": base.mae,
        "baseline_rmse": base.rmse,
        "mae_ratio": test.mae / base.mae,
        "train_minutes": minutes,
        "checkpoint_sha256": result.best.digest(),
    }
    Path(args.out_dir, "summary.json").write_text(json.dumps(summary, indent=1))
    print(f"test MAE {test.mae:.3f}  RMSE {test.rmse:.3f}  |  mean predictor MAE {base.mae:.3f}  "
          f"ratio {summary['mae_ratio']:.3f}  |  {minutes:.1f} min")


if __name__ == "__main__":
    main()
