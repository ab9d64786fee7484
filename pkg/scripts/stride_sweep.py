"""Large-token count, parameters and MACs as the large-token stride shrinks."""

import argparse

from act_sr.complexity import count_flops, stride_sweep
from act_sr.config import ModelConfig


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--strides", default="5,4,3")
    ap.add_argument("--size", type=int, default=48)
    args = ap.parse_args()
    strides = [int(s) for s in args.strides.split(",")]
    cfg = ModelConfig()
    print(f"{'stride':>6} {'n_large':>8} {'params':>12} {'GMACs':>8} {'attn core':>14}")
    for s, nl, params, flops in stride_sweep(cfg, strides, args.size, args.size):
        core = count_flops(cfg.replace(s_large=s), args.size, args.size).attention_terms
        print(f"{s:>6} {nl:>8} {params:>12,} {flops / 1e9:>8.2f} {core.get('csta2', 0):>14,}")


if __name__ == "__main__":
    main()
