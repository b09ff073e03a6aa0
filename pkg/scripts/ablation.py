"""Train the full model and each single-term ablation with shared seeds; print the MAE/RMSE table."""

import argparse
import logging

from oneshot_count.datagen import CorpusConfig, generate_split
from oneshot_count.harness import ablate, mean_baseline
from oneshot_count.harness.train import format_table
from oneshot_count.model import ModelConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="runs/ablation")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=ModelConfig.epochs)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    corpus = CorpusConfig()
    tr, va, te = (generate_split(corpus, s) for s in ("train", "val", "test"))
    results = ablate(ModelConfig(seed=args.seed, epochs=args.epochs), tr, va, te, args.out_dir)
    print(format_table(results))
    base = mean_baseline(tr, te)
    print(f"{'mean predictor':<16}{base.mae:>10.3f}{base.rmse:>10.3f}")
    full = results["full"].mae
    wins = sum(full <= m.mae for name, m in results.items() if name != "full")
    print(f"full model at or below {wins}/4 ablated arms")


if __name__ == "__main__":
    main()
