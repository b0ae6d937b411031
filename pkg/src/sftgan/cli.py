"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ConfigError, TrainConfig, load_config
from .datagen import BACKGROUND, compose_scene, nearest_downsample_maps, rng_stream
from .fileio import (FormatError, image_to_uint8, read_ppm, read_tensor, uint8_to_image, write_ppm,
                     write_tensor)
from .gradcheck import SCOPES, format_table, run_scope
from .metrics import compare_images, export_modulation_maps, gamma_spatial_variance, heatmap, write_report
from .models import ConditioningMode, Generator
from .trainer import TrainingAborted, load_state, make_pool, train_gan

log = logging.getLogger("sftgan")


class UsageError(Exception):
    pass


def _config(path) -> TrainConfig:
    return load_config(path) if path else TrainConfig()


def _require(path: str | None, what: str) -> Path:
    # A missing input is a usage problem, not a runtime failure.
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


# ---------------------------------------------------------------------------
# shared helpers


def scene_seed(cfg: TrainConfig, index: int, purpose: str = "synth") -> int:
    return int(rng_stream(cfg.seed, purpose, index).integers(0, 2**31 - 1))


def load_generator(path) -> Generator:
    return load_state(_require(path, "checkpoint")).generator


def prepare_probs(G: Generator, probs: np.ndarray | None, lr_hw: tuple[int, int]) -> np.ndarray:
    """Bring HR-resolution maps (or an all-background request) to the LR grid as 1x(K+1)xhxw."""
    k1 = G.cfg.prob_channels
    h, w = lr_hw
    if probs is None:
        out = np.zeros((1, k1, h, w), dtype=np.float32)
        out[:, k1 - 1] = 1.0
        return out
    if probs.ndim == 4:
        probs = probs[0]
    if probs.ndim != 3 or probs.shape[0] != k1:
        raise ValueError(f"probability maps must be {k1}xHxW, got {probs.shape}")
    s = G.cfg.scale
    if probs.shape[1:] == (h * s, w * s):
        probs = nearest_downsample_maps(probs, s)
    elif probs.shape[1:] != (h, w):
        raise ValueError(f"probability maps {probs.shape[1:]} match neither {h * s}x{w * s} nor {h}x{w}")
    return probs[None].astype(np.float32)


def super_resolve(G: Generator, lr: np.ndarray, probs: np.ndarray | None) -> np.ndarray:
    """3xhxw LR image -> 3x(sh)x(sw) SR image (unclipped)."""
    if lr.shape[1] < 8 or lr.shape[2] < 8:
        raise ValueError(f"input extents must be >= 8, got {lr.shape[1]}x{lr.shape[2]}")
    p = prepare_probs(G, probs, lr.shape[1:]) if G.conditioned else None
    with ad.no_grad():
        out = G(Tensor(lr[None]), Tensor(p) if p is not None else None)
    return out.data[0]


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = _config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(args.count):
        spec = cfg.scene_spec(seed=scene_seed(cfg, i))
        scene = compose_scene(spec)
        stem = f"scene_{i:04d}"
        write_ppm(out / f"{stem}_hr.ppm", image_to_uint8(scene.hr))
        write_ppm(out / f"{stem}_lr.ppm", image_to_uint8(scene.lr))
        write_tensor(out / f"{stem}_probs.sftb", scene.probs)
        classes = ",".join(spec.class_name(c) for c in scene.region_classes)
        lines.append(f"{stem} seed={spec.seed} layout={spec.layout} regions={classes} digest={scene.digest()[:16]}\n")
    (out / "manifest.txt").write_text("".join(lines))
    print(f"wrote {args.count} scenes to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args.config)
    if args.iters is not None:
        cfg = cfg.replace(iters=args.iters)
    ckpt = args.checkpoint or cfg.checkpoint or "sftgan.ckpt"
    log_path = args.log or cfg.log or "train_log.csv"
    state = load_state(_require(args.resume, "resume checkpoint"), cfg) if args.resume else None
    state = train_gan(cfg, state=state, log_path=log_path, checkpoint_path=ckpt)
    print(f"trained to iteration {state.iteration}; checkpoint {ckpt}; log {log_path}")
    return 0


def cmd_infer(args) -> int:
    G = load_generator(args.checkpoint)
    lr = uint8_to_image(read_ppm(_require(args.lr, "LR image")))
    probs = None if args.background_only else read_tensor(_require(args.probmaps, "probability maps"))
    sr = super_resolve(G, lr, probs)
    write_ppm(args.out, image_to_uint8(sr))
    print(f"wrote {sr.shape[2]}x{sr.shape[1]} image to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    rows = run_scope(args.scope, seed=args.seed, tol=args.tol)
    print(format_table(rows))
    return 0 if all(rep.passed for _, rep in rows) else 1


def cmd_dump_maps(args) -> int:
    G = load_generator(args.checkpoint)
    probs = read_tensor(_require(args.probmaps, "probability maps"))
    s = G.cfg.scale
    if probs.ndim == 4:
        probs = probs[0]
    lr_hw = (probs.shape[1] // s, probs.shape[2] // s)
    p = prepare_probs(G, probs, lr_hw)
    layers = [int(v) for v in args.layers.split(",")] if args.layers else None
    maps = export_modulation_maps(G, p, layers=layers, top_k=args.top_k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for m in maps:
        write_ppm(out / f"{m.name}.ppm", heatmap(m.values))
    print(f"wrote {len(maps)} maps to {out}")
    return 0


def cmd_metrics(args) -> int:
    hr = uint8_to_image(read_ppm(_require(args.hr, "HR image")))
    labels = names = None
    if args.probmaps:
        probs = read_tensor(_require(args.probmaps, "probability maps"))
        labels = probs.reshape(probs.shape[-3:]).argmax(axis=0)
        if args.categories:
            names = [c.strip() for c in args.categories.split(",")] + [BACKGROUND]
    rows = []
    for path in args.sr:
        sr = uint8_to_image(read_ppm(_require(path, "SR image")))
        rows += compare_images(Path(args.hr).stem, Path(path).stem, sr, hr, labels, names)
    write_report(args.out if args.out else sys.stdout, rows)
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args.config)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        try:
            ConditioningMode(m)
        except ValueError:
            raise UsageError(f"unknown conditioning mode {m!r}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pool = make_pool(cfg)
    test_spec = dataclasses.replace(cfg.scene_spec(seed=scene_seed(cfg, 0, "ablate-test")), layout="voronoi")
    scene = compose_scene(test_spec)
    write_ppm(out / "test_hr.ppm", image_to_uint8(scene.hr))
    write_ppm(out / "test_lr.ppm", image_to_uint8(scene.lr))
    names = list(cfg.categories) + [BACKGROUND]
    summary, report = [], []
    for mode in modes:
        mcfg = cfg.replace(mode=mode)
        state = train_gan(mcfg, pool=pool, log_path=out / f"{mode}_log.csv", checkpoint_path=out / f"{mode}.ckpt")
        G = state.generator
        sr = super_resolve(G, scene.lr, scene.probs)
        write_ppm(out / f"{mode}_sr.ppm", image_to_uint8(sr))
        sr = np.clip(sr, 0, 1)
        rows = compare_images("test", mode, sr, scene.hr, scene.labels, names)
        report += rows
        lr_probs = prepare_probs(G, scene.probs, scene.lr.shape[1:])
        entry = {"mode": mode, "params": G.num_parameters(),
                 "psnr": compare_images("test", mode, sr, scene.hr)[0]["psnr"],
                 "gamma_spatial_var": gamma_spatial_variance(G, lr_probs)}
        for row in rows:
            entry[f"sigdist_{row['category']}"] = row["signature_distance"]
        summary.append(entry)
    write_report(out / "metrics.csv", report)
    columns = list(dict.fromkeys(k for e in summary for k in e))
    with open(out / "ablation.csv", "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns)
        writer.writeheader()
        writer.writerows(summary)
    for e in summary:
        print(f"{e['mode']:<14} params={e['params']:<8} psnr={e['psnr']:.2f} gamma_var={e['gamma_spatial_var']:.3e}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sftgan", description="Segmentation-conditioned x4 super-resolution.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic scenes")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the GAN")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--log")
    p.add_argument("--resume")
    p.add_argument("--iters", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lr", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--probmaps")
    g.add_argument("--background-only", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--scope", choices=SCOPES, default="ops")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and compare conditioning modes")
    p.add_argument("--config", required=True)
    p.add_argument("--modes", default="sft,input_concat,film,compositional")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-maps", help="export gamma/beta modulation maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--probmaps", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers")
    p.add_argument("--top-k", type=int, default=4)
    p.set_defaults(func=cmd_dump_maps)

    p = sub.add_parser("metrics", help="PSNR and texture-signature report")
    p.add_argument("--hr", required=True)
    p.add_argument("--sr", required=True, action="append")
    p.add_argument("--probmaps")
    p.add_argument("--categories")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        parser.print_usage(sys.stderr)
        print(f"sftgan {args.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, FormatError, TrainingAborted, ValueError, IndexError) as exc:
        print(f"sftgan {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
