"""``act-sr`` command line.

Exit status is 0 only when every output was fully written; on any failure the
partial outputs of that run are deleted.  Each run writes a JSON manifest next
to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import shutil
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .config import ModelConfig, RunManifest, TrainConfig, dump_config, load_config
from .errors import ActError

log = logging.getLogger("act_sr")


def parse_geometry(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*(\d+)\s*[xX×]\s*(\d+)\s*", text)
    if not m or int(m.group(1)) <= 0 or int(m.group(2)) <= 0:
        raise argparse.ArgumentTypeError(f"geometry must look like 48x48, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def parse_int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) <= 0:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return vals


def parse_metrics(text: str) -> tuple[str, ...]:
    vals = tuple(v.strip().lower() for v in text.split(",") if v.strip())
    bad = [v for v in vals if v not in ("psnr", "ssim")]
    if not vals or bad:
        raise argparse.ArgumentTypeError(f"metrics must be drawn from psnr,ssim, got {text!r}")
    return vals


class Run:
    """Tracks outputs of one command; removes them on failure, writes the manifest on success."""

    def __init__(self, command: str, manifest_path: Path, config_path=None, seed=None) -> None:
        self.manifest = RunManifest(command, str(config_path) if config_path else None, seed,
                                    tool_version=__version__)
        self.manifest_path = manifest_path
        self.created: list[Path] = []
        self.start = time.perf_counter()

    def input(self, path) -> None:
        self.manifest.inputs.append(str(path))

    def output(self, path) -> Path:
        path = Path(path)
        self.created.append(path)
        self.manifest.outputs.append(str(path))
        return path

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            for p in reversed(self.created):
                if p.is_dir():
                    shutil.rmtree(p, ignore_errors=True)
                else:
                    p.unlink(missing_ok=True)
            return False
        self.manifest.wall_time = round(time.perf_counter() - self.start, 3)
        self.manifest_path.parent.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(json.dumps(asdict(self.manifest), indent=2) + "\n")
        return False


def _load_model(path, scale: int | None = None):
    from .errors import ConfigMismatchError
    from .model import load_weights

    model = load_weights(path)
    if scale is not None and model.cfg.scale != scale:
        raise ConfigMismatchError(f"{path}: weights are for scale {model.cfg.scale}, "
                                  f"--scale requested {scale}")
    return model


# ---------------------------------------------------------------- commands


def cmd_init(args) -> None:
    from .model import ACT, make_identity_model, save_weights

    cfg = load_config(args.config)[0] if args.config else ModelConfig()
    if args.scale is not None:
        cfg = cfg.replace(scale=args.scale)
    out = Path(args.out)
    with Run("init", out.with_suffix(out.suffix + ".manifest.json"), args.config, cfg.seed) as run:
        if args.kind == "identity":
            model = make_identity_model(cfg)
        else:
            model = ACT(cfg)
            if args.kind == "zero":
                model.zero_()
        save_weights(model, run.output(out))
    print(f"wrote {out} ({model.num_parameters():,} parameters)")


def cmd_forward(args) -> None:
    from .data import read_png, write_png
    from .evaluation import self_ensemble, super_resolve

    out = Path(args.output)
    with Run("forward", out.with_suffix(out.suffix + ".manifest.json")) as run:
        run.input(args.weights)
        run.input(args.input)
        model = _load_model(args.weights, args.scale)
        run.manifest.seed = model.cfg.seed
        lr = read_png(args.input)
        sr = (self_ensemble if args.self_ensemble else super_resolve)(model, lr)
        write_png(run.output(out), sr)
    print(f"wrote {out} ({sr.shape[2]}x{sr.shape[1]})")


def cmd_train_toy(args) -> None:
    from .model import ACT, load_weights, save_weights
    from .train import train_toy

    mcfg, tcfg = load_config(args.config) if args.config else (ModelConfig(), TrainConfig())
    if args.steps is not None:
        tcfg = tcfg.replace(total_steps=args.steps,
                            halving_period=min(tcfg.halving_period, args.steps))
    out = Path(args.out)
    corpus = Path(args.corpus)
    fresh = not out.exists()
    with Run("train-toy", out / "manifest.json", args.config, tcfg.seed) as run:
        if fresh:
            run.output(out)
        out.mkdir(parents=True, exist_ok=True)
        run.input(corpus)
        log_path = out / "metrics.csv"
        log_path.unlink(missing_ok=True)
        run.output(log_path)
        if args.init_weights:
            run.input(args.init_weights)
            model = load_weights(args.init_weights, mcfg)
        else:
            model = ACT(mcfg)
        (out / "config.ini").write_text(dump_config(mcfg, tcfg))
        run.output(out / "config.ini")
        rows = train_toy(model, corpus, tcfg, log_path)
        save_weights(model, run.output(out / "weights.bin"))
    print(f"trained {len(rows)} steps; final loss {rows[-1]['loss']:.6f}; weights in {out / 'weights.bin'}")


def cmd_count(args) -> None:
    from .complexity import count_flops, stride_sweep

    cfg = load_config(args.config)[0] if args.config else ModelConfig()
    h, w = args.geometry
    if args.sweep_stride:
        rows = stride_sweep(cfg, args.sweep_stride, h, w)
        if args.csv:
            writer = csv.writer(sys.stdout, lineterminator="\n")
            writer.writerow(["stride", "n_large", "params", "flops"])
            writer.writerows(rows)
        else:
            print(f"{'stride':>6}{'n_large':>9}{'params':>14}{'FLOPs':>18}")
            for s, nl, p, f in rows:
                print(f"{s:>6}{nl:>9}{p:>14,}{f:>18,}   {f / 1e9:.2f}G")
        return
    rep = count_flops(cfg, h, w)
    print(rep.to_csv() if args.csv else rep.format_table(), end="" if args.csv else "\n")


def cmd_eval(args) -> None:
    from .evaluation import evaluate_dir, mean_score

    model = _load_model(args.weights, args.scale)
    scores = evaluate_dir(model, args.hr_dir, args.scale, args.self_ensemble, args.metrics)
    rows = scores + [mean_score(scores)]
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["image", *args.metrics])
    for s in rows:
        writer.writerow([s.name, *(f"{getattr(s, m):.6f}" for m in args.metrics)])
    if args.csv:
        out = Path(args.csv)
        with Run("eval", out.with_suffix(out.suffix + ".manifest.json")) as run:
            run.input(args.weights)
            run.input(args.hr_dir)
            with open(run.output(out), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["image", *args.metrics])
                for s in rows:
                    w.writerow([s.name, *(repr(getattr(s, m)) for m in args.metrics)])


def cmd_viz_features(args) -> None:
    from .data import read_png, write_png
    from .evaluation import feature_map

    out = Path(args.out)
    fresh = not out.exists()
    with Run("viz-features", out / "manifest.json") as run:
        if fresh:
            run.output(out)
        run.input(args.weights)
        run.input(args.input)
        model = _load_model(args.weights)
        fmap = feature_map(model, read_png(args.input), args.branch, args.block)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{args.branch}_block{args.block}.png"
        write_png(run.output(path), fmap)
    print(f"wrote {path}")


def cmd_make_corpus(args) -> None:
    from .data import make_synthetic_corpus

    out = Path(args.out)
    with Run("make-corpus", out / "manifest.json", seed=args.seed) as run:
        for p in make_synthetic_corpus(out, args.count, args.size, args.seed):
            run.output(p)
    print(f"wrote {args.count} images to {out}")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="act-sr", description="ACT super-resolution toolkit")
    parser.add_argument("--version", action="version", version=f"act-sr {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write random or identity-stub weights")
    p.add_argument("--config")
    p.add_argument("--scale", type=int)
    p.add_argument("--kind", choices=("random", "identity", "zero"), default="random",
                   help="seeded random init, exact nearest-neighbour stub, or all-zero weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("forward", help="super-resolve one PNG")
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--scale", type=int)
    p.add_argument("--self-ensemble", action="store_true")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("train-toy", help="toy-scale training on a PNG directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, help="override total_steps")
    p.add_argument("--init-weights")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("count", help="parameter and FLOP report")
    p.add_argument("--config")
    p.add_argument("--geometry", type=parse_geometry, default=(48, 48))
    p.add_argument("--sweep-stride", type=parse_int_list)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("eval", help="PSNR/SSIM on Y over a directory of HR images")
    p.add_argument("--weights", required=True)
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--metrics", type=parse_metrics, default=("psnr", "ssim"))
    p.add_argument("--self-ensemble", action="store_true")
    p.add_argument("--csv", help="also write the rows to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz-features", help="export a branch feature map as grayscale PNG")
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--branch", choices=("cnn", "transformer"), required=True)
    p.add_argument("--block", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_viz_features)

    p = sub.add_parser("make-corpus", help="write a deterministic synthetic PNG corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_corpus)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ActError, OSError, ValueError) as exc:
        print(f"act-sr {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
