"""Command line entry point: ``oneshot-count {gen,train,eval,predict,ablate}``.

Results go to stdout as JSON; failures go to stderr as a JSON object and the
process exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..datagen import CorpusConfig, build_corpus, load_split
from ..features import SupportBox
from ..model import ModelConfig
from ..numcore import tnsr
from .checkpoint import Checkpoint
from .train import ablate, evaluate, format_table, mean_baseline, predict, train

ABLATION_FLAGS = {
    "no_self_attn_x": "self_attn_x",
    "no_self_attn_s": "self_attn_s",
    "no_scale_agg": "scale_agg",
    "no_ssim": "ssim",
}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _load_json(path) -> dict:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: malformed JSON at byte offset {exc.pos}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise CliError(f"{path}: config must be a JSON object")
    return doc


def model_config(args) -> ModelConfig:
    cfg = ModelConfig.from_dict(_load_json(args.config)) if args.config else ModelConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, epochs=args.epochs)
    for flag, field_name in ABLATION_FLAGS.items():
        if getattr(args, flag, False):
            cfg = replace(cfg, **{field_name: False})
    return cfg


def _require(args, name):
    if getattr(args, name) is None:
        raise CliError(f"--{name.replace('_', '-')} is required for '{args.command}'")
    return getattr(args, name)


def cmd_gen(args) -> dict:
    cfg = CorpusConfig(seed=args.seed if args.seed is not None else 0)
    if args.config:
        doc = _load_json(args.config)
        if "sizes" in doc:
            cfg.sizes = {k: int(v) for k, v in doc["sizes"].items()}
        if "categories" in doc:
            cfg.categories = {k: tuple(v) for k, v in doc["categories"].items()}
        if "seed" in doc and args.seed is None:
            cfg.seed = int(doc["seed"])
    out = _require(args, "out_dir")
    manifest = build_corpus(out, cfg)
    return {"out_dir": str(out), "sizes": {k: len(manifest[k]) for k in ("train", "val", "test") if k in manifest}}


def cmd_train(args) -> dict:
    cfg = model_config(args)
    corpus = _require(args, "corpus")
    tr, va = load_split(corpus, "train"), load_split(corpus, "val")
    result = train(cfg, tr, va, args.out_dir)
    return {"best_epoch": result.best_epoch, "best_digest": result.best.digest(),
            "history": result.history, "out_dir": args.out_dir}


def cmd_eval(args) -> dict:
    ckpt = Checkpoint.load(_require(args, "checkpoint"))
    corpus = _require(args, "corpus")
    split = args.split or "test"
    samples = load_split(corpus, split)
    m = evaluate(ckpt, samples)
    base = mean_baseline(load_split(corpus, "train"), samples)
    return {"split": split, "n": len(samples), "mae": m.mae, "rmse": m.rmse,
            "baseline_mae": base.mae, "baseline_rmse": base.rmse}


def cmd_predict(args) -> dict:
    ckpt = Checkpoint.load(_require(args, "checkpoint"))
    image = tnsr.load(_require(args, "image"))
    box = SupportBox(*_require(args, "box"))
    prefix = Path(args.out_dir) / Path(args.image).stem if args.out_dir else None
    count, dmap = predict(ckpt, image, box, prefix)
    out = {"count": count, "density_shape": list(dmap.shape)}
    if prefix is not None:
        out["density_tnsr"] = str(prefix.with_suffix(".tnsr"))
        out["density_pgm"] = str(prefix.with_suffix(".pgm"))
    return out


def cmd_ablate(args) -> dict:
    cfg = model_config(args)
    corpus = _require(args, "corpus")
    tr, va, te = (load_split(corpus, s) for s in ("train", "val", "test"))
    results = ablate(cfg, tr, va, te, args.out_dir)
    print(format_table(results), file=sys.stderr)
    return {name: {"mae": m.mae, "rmse": m.rmse} for name, m in results.items()}


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="oneshot-count", description="One-shot object counting on a synthetic shape corpus.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON file of config key/values")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--split", choices=["train", "val", "test"])
    p.add_argument("--corpus", help="corpus directory written by 'gen'")
    p.add_argument("--checkpoint")
    p.add_argument("--image", help="TNSR image file (3, H, W)")
    p.add_argument("--box", type=int, nargs=4, metavar=("X0", "Y0", "X1", "Y1"))
    p.add_argument("--epochs", type=int)
    for flag in ABLATION_FLAGS:
        p.add_argument("--" + flag.replace("_", "-"), action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(message)s", stream=sys.stderr)
        result = COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - every failure is reported the same way
        err = {"error": type(exc).__name__, "message": str(exc)}
        path = getattr(exc, "checkpoint_path", None)
        if path:
            err["checkpoint"] = path
        print(json.dumps(err), file=sys.stderr)
        return 2 if isinstance(exc, CliError) else 1
    print(json.dumps(result, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
