"""Command-line entry point: ``entropy-jscc <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import phy
from .config import load_config
from .data import ingest_dataset
from .evaluation import (
    ablation_run,
    curves_to_csv,
    entropy_buckets,
    evaluate,
    reports_to_csv,
    write_csv,
)
from .models import JSCCModel, load_model

log = logging.getLogger("entropy_jscc")


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(" ", "").split(",") if t]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace(" ", "").split(",") if t]


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)


def _test_images(args, cfg) -> np.ndarray:
    store = ingest_dataset(args.data_dir, test_limit=args.limit or None, seed=args.seed, splits=("test",))
    return store.test


def cmd_train(args) -> int:
    overrides = {
        "train.seed": args.seed,
        "train.alpha": args.alpha,
        "train.beta": args.beta,
        "train.batch_size": args.batch_size,
        "train.limit": args.limit,
    }
    if args.stage_epochs:
        overrides["train.stage_epochs"] = _ints(args.stage_epochs)
    cfg = load_config(args.config, overrides)
    store = ingest_dataset(args.data_dir, limit=cfg["train.limit"] or None, seed=cfg["train.seed"], splits=("train",))
    from .training import run_schedule

    model = JSCCModel(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps())
    for ckpt in run_schedule(model, store.train, cfg, out_dir=out):
        log.info("checkpoint: stages done %d, epoch %d", ckpt.stage, ckpt.epoch)
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, {"eval.seed": args.seed})
    model, _ = load_model(args.checkpoint, cfg if args.config else None)
    images = _test_images(args, cfg)
    reports = evaluate(model, images, _floats(args.snr_list), seed=args.seed)
    _emit(reports_to_csv(args.out, reports), args.out)
    return 0


def cmd_export_curves(args) -> int:
    cfg = load_config(args.config)
    model, _ = load_model(args.checkpoint, cfg if args.config else None)
    images = _test_images(args, cfg)
    reports = evaluate(model, images, _floats(args.snr_list), seed=args.seed)
    _emit(curves_to_csv(args.out, reports), args.out)
    return 0


def cmd_entropy_analysis(args) -> int:
    cfg = load_config(args.config)
    model, _ = load_model(args.checkpoint, cfg if args.config else None)
    images = _test_images(args, cfg)
    buckets = entropy_buckets(model, images, n_per_bucket=args.buckets, snr_db=args.snr, seed=args.seed)
    text = json.dumps(buckets, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    _emit(text, args.out)
    return 0


def cmd_ablation(args) -> int:
    model_a, _ = load_model(args.checkpoint_a)
    model_b, _ = load_model(args.checkpoint_b)
    images = _test_images(args, None)
    rows = ablation_run(model_a, model_b, images, _floats(args.snr_list), seed=args.seed)
    cols = ("model", "snr_db", "avg_maps", "avg_length_ratio", "cpp", "psnr_db", "n_images")
    _emit(write_csv(args.out, rows, cols), args.out)
    return 0


def cmd_phy_sim(args) -> int:
    rows = phy.ber_sweep(_floats(args.snr_list), args.symbols, args.seed)
    _emit(write_csv(args.out, rows, ("snr_db", "ber", "empirical_noise_power")), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="entropy-jscc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the staged training schedule")
    t.add_argument("--config")
    t.add_argument("--data-dir", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--alpha", type=float)
    t.add_argument("--beta", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--limit", type=int, help="train on a seeded subset of this many images")
    t.add_argument("--stage-epochs", help="comma list of four epoch counts")
    t.set_defaults(func=cmd_train)

    def eval_args(sp, snr=True):
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--config")
        sp.add_argument("--data-dir", required=True)
        if snr:
            sp.add_argument("--snr-list", default="0,5,10,15")
        sp.add_argument("--limit", type=int, default=0, help="seeded test subset size")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out")

    e = sub.add_parser("eval", help="per-SNR strategy and PSNR report (CSV)")
    eval_args(e)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("export-curves", help="snr_db,psnr_db,cpp CSV")
    eval_args(c)
    c.set_defaults(func=cmd_export_curves)

    a = sub.add_parser("entropy-analysis", help="low vs high image-entropy buckets (JSON)")
    eval_args(a, snr=False)
    a.add_argument("--buckets", type=int, default=100, help="images per bucket")
    a.add_argument("--snr", type=float, default=15.0)
    a.set_defaults(func=cmd_entropy_analysis)

    b = sub.add_parser("ablation", help="paired with/without pruning reports (CSV)")
    b.add_argument("--checkpoint-a", required=True, help="model trained with P2")
    b.add_argument("--checkpoint-b", required=True, help="model trained without P2")
    b.add_argument("--data-dir", required=True)
    b.add_argument("--snr-list", default="0,5,10,15")
    b.add_argument("--limit", type=int, default=0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_ablation)

    s = sub.add_parser("phy-sim", help="64-QAM BER sweep over AWGN (CSV)")
    s.add_argument("--snr-list", default="0,5,10,15")
    s.add_argument("--symbols", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_phy_sim)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
