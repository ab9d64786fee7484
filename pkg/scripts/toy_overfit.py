"""Overfit the reduced model on four fixed patches and report the loss drop.

    python scripts/toy_overfit.py --steps 300 --out runs/overfit
"""

import argparse
import logging
from pathlib import Path

from act_sr.config import ModelConfig, TrainConfig
from act_sr.data import list_images, make_synthetic_corpus, read_png
from act_sr.model import ACT, save_weights
from act_sr.train import PatchSampler, fit


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/overfit")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    corpus = out / "corpus"
    if not corpus.exists():
        make_synthetic_corpus(corpus, 4, 64, seed=args.seed)
    images = [read_png(p) for p in list_images(corpus)]
    tcfg = TrainConfig(lr0=args.lr, total_steps=args.steps, halving_period=args.steps, batch_size=4,
                       patch_size=12, fixed_patches=True, augment=False, seed=args.seed)
    model = ACT(ModelConfig(c=32, n_blocks=2, rcabs_per_block=2, scale=2, seed=args.seed))
    log = out / "metrics.csv"
    log.unlink(missing_ok=True)
    rows = fit(model, PatchSampler(images, 2, tcfg), tcfg, log)
    save_weights(model, out / "weights.bin")
    first, last = rows[0]["loss"], rows[-1]["loss"]
    print(f"step 1 L1 {first:.5f}  step {len(rows)} L1 {last:.5f}  ratio {last / first:.3f}")


if __name__ == "__main__":
    main()
