"""Command-line entry point: train a generator from two dataset manifests."""

from __future__ import annotations

import argparse
import logging
import sys

from otre.nnforward import GeneratorSpec

from .config import TrainConfig
from .data import ImageStore
from .train import train


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="otre-train", description=__doc__)
    ap.add_argument("--low", required=True, help="low-quality domain manifest (jsonl)")
    ap.add_argument("--high", required=True, help="high-quality domain manifest (jsonl)")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--alpha", type=float, default=60.0)
    ap.add_argument("--beta", type=float, default=20.0)
    ap.add_argument("--lambda-gp", type=float, default=10.0)
    ap.add_argument("--lr-d", type=float, default=1e-4)
    ap.add_argument("--lr-g", type=float, default=5e-5)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--side", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--mode", choices=["low2high", "deg2high"], default="deg2high")
    ap.add_argument("--critic-steps", type=int, default=1)
    ap.add_argument("--depth", type=int, default=4)
    ap.add_argument("--base-channels", type=int, default=32)
    ap.add_argument("--checkpoint-every", type=int, default=0)
    ap.add_argument("--label-matched", action="store_true",
                    help="force label matching (default: auto when grades exist)")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    args = build_parser().parse_args(argv)
    cfg = TrainConfig(
        alpha=args.alpha,
        beta=args.beta,
        lambda_gp=args.lambda_gp,
        lr_d=args.lr_d,
        lr_g=args.lr_g,
        epochs=args.epochs,
        batch=args.batch,
        image_side=args.side,
        seed=args.seed,
        mode=args.mode,
        critic_steps=args.critic_steps,
        label_matched=True if args.label_matched else None,
        generator=GeneratorSpec(depth=args.depth, base_channels=args.base_channels),
        checkpoint_every=args.checkpoint_every,
    )
    low = ImageStore.open(args.low, cfg.image_side)
    high = ImageStore.open(args.high, cfg.image_side)
    final = train(low, high, cfg, args.out)
    print(f"final checkpoint: {final}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
