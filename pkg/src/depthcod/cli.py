"""Command-line entry point.

Commands: train | eval | predict | visualize | prepare-depth | bench.
Exit codes: 0 success, 2 usage or configuration error, 1 runtime error.

Outputs live under a single run directory with fixed subfolders:
ckpt/ (checkpoints), maps/ (prediction and uncertainty PNGs),
reports/ (metric files).
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import bench as bench_mod
from . import data as data_mod
from . import metrics as metrics_mod
from . import training
from .errors import BadConfig, DepthcodError, VariantUnsupported
from .generator import VARIANTS
from .uncertainty import entropy, mean_prediction, sample_predictions

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

# CLI flag -> TrainConfig field
_TRAIN_FLAGS = {
    "variant": "variant",
    "size": "image_size",
    "batch_size": "batch_size",
    "epochs": "epochs",
    "lr": "lr_gen",
    "lr_dis": "lr_dis",
    "seed": "seed",
    "backbone": "backbone",
    "latent_dim": "latent_dim",
    "t_samples": "sample_count",
    "data_root": "data_root",
    "out": "out_dir",
    "max_steps": "max_steps",
}


def _add_train_flags(parser):
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--variant", choices=VARIANTS)
    parser.add_argument("--size", type=int, help="square training size (multiple of 32)")
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float, help="generator learning rate")
    parser.add_argument("--lr-dis", type=float, help="discriminator learning rate")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--backbone", choices=sorted(training.BACKBONES))
    parser.add_argument("--latent-dim", type=int)
    parser.add_argument("--t-samples", type=int, help="latent samples for confidence maps")
    parser.add_argument("--max-steps", type=int)
    parser.add_argument("--no-hflip", action="store_true", help="disable flip augmentation")
    parser.add_argument("--cache-samples", action="store_true",
                        help="keep decoded samples in memory")
    parser.add_argument("--no-grad-clip", action="store_true")
    parser.add_argument("--freeze-backbone-bn", action="store_true")
    # may come from --config instead of the command line
    parser.add_argument("--data-root")
    parser.add_argument("--out")


def _effective_config(args) -> training.TrainConfig:
    """Merge precedence: flags > config file > defaults."""
    mapping = {}
    if args.config:
        mapping.update(training.parse_config_file(args.config))
    for flag, field in _TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            mapping[field] = value
    if getattr(args, "no_hflip", False):
        mapping["hflip"] = False
    if getattr(args, "cache_samples", False):
        mapping["cache_samples"] = True
    if getattr(args, "no_grad_clip", False):
        mapping["grad_clip"] = None
    if getattr(args, "freeze_backbone_bn", False):
        mapping["freeze_backbone_bn"] = True
    config = training.config_from_mapping(mapping)
    if not config.data_root:
        raise BadConfig("no data root given (--data-root or data_root in --config)")
    if not config.out_dir:
        raise BadConfig("no output directory given (--out or out_dir in --config)")
    return config.validate()


def _write_gray(path, map01):
    arr = np.asarray(map01, dtype=np.float64)
    arr = np.squeeze(arr)
    img = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)


def _load_model(checkpoint_path, device="cpu"):
    path = Path(checkpoint_path)
    if not path.is_file():
        raise BadConfig(f"checkpoint not found: {path}")
    state = training.load_checkpoint(path)
    model, discriminator = training.build_from_checkpoint(state, device=device)
    model.eval()
    return state, model, discriminator


# ----------------------------------------------------------------------


def cmd_train(args) -> int:
    config = _effective_config(args)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(training.format_config(config))
    ckpt, csv_path = training.train(config, resume_from=args.resume)
    print(f"final checkpoint: {ckpt}")
    print(f"loss curves: {csv_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    state, model, _ = _load_model(args.checkpoint)
    size = args.size or state.config["image_size"]
    rng = torch.Generator().manual_seed(args.seed)
    out_dir = Path(args.out) / "reports"
    out_dir.mkdir(parents=True, exist_ok=True)

    named_reports = []
    for root in args.data_root:
        manifest = data_mod.load_manifest(root)
        report = metrics_mod.evaluate(
            model, manifest, size=size,
            sample_count=args.sample_eval, rng=rng)
        name = Path(root).name or str(root)
        named_reports.append((name, report))
        metrics_mod.write_per_image_csv(out_dir / f"{name}_per_image.csv", report)
        print(f"{name}: S={report.s_measure:.4f} F={report.f_measure:.4f} "
              f"E={report.e_measure:.4f} MAE={report.mae:.4f}")

    metrics_mod.write_report_csv(out_dir / "reports.csv", named_reports)
    metrics_mod.write_report_table(out_dir / "reports.txt", named_reports)
    return EXIT_OK


def _predict_inputs(args, state):
    size = args.size or state.config["image_size"]
    if args.image:
        image = data_mod.load_image_tensor(args.image, size)
        depth = data_mod.load_depth_tensor(args.depth, size) if args.depth else None
        yield Path(args.image).stem, image, depth
        return
    manifest = data_mod.load_manifest(args.data_root)
    for index in range(len(manifest)):
        sample = data_mod.load_sample(manifest, index, size)
        yield sample.stem, sample.image, sample.depth


def cmd_predict(args) -> int:
    state, model, _ = _load_model(args.checkpoint)
    maps_dir = Path(args.out) / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)

    count = 0
    with torch.no_grad():
        for stem, image, depth in _predict_inputs(args, state):
            x = image.unsqueeze(0)
            depth_in = depth.unsqueeze(0) if depth is not None else None
            if model.caps.needs_depth_input and depth_in is None:
                raise BadConfig(f"variant {model.variant} needs a depth input "
                                f"(--depth or a dataset root with Depth/)")
            if model.caps.latent:
                zeros = torch.zeros(1, model.latent_dim)
                bundle = model(x, depth_in=depth_in, z=zeros, z_fused=zeros)
            else:
                bundle = model(x, depth_in=depth_in)
            _write_gray(maps_dir / f"{stem}_rgb.png", bundle.rgb_prob[0, 0])
            if bundle.rgbd_logits is not None:
                _write_gray(maps_dir / f"{stem}_rgbd.png", bundle.rgbd_prob[0, 0])
            if bundle.depth is not None:
                _write_gray(maps_dir / f"{stem}_depth.png", bundle.depth[0, 0])
            count += 1
    print(f"wrote prediction maps for {count} image(s) under {maps_dir}")
    return EXIT_OK


def cmd_visualize(args) -> int:
    state, model, _ = _load_model(args.checkpoint)
    if not model.caps.latent:
        raise VariantUnsupported(
            f"uncertainty maps need the stochastic 'full' variant, "
            f"checkpoint holds {model.variant!r}")
    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else None
    size = args.size or state.config["image_size"]
    rng = torch.Generator().manual_seed(args.seed)
    maps_dir = Path(args.out) / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)

    manifest = data_mod.load_manifest(args.data_root)
    with torch.no_grad():
        for index in range(len(manifest)):
            sample = data_mod.load_sample(manifest, index, size)
            x = sample.image.unsqueeze(0)
            probs_rgb, probs_rgbd = sample_predictions(model, x, args.t_samples, rng=rng)
            u_rgb = entropy(mean_prediction(probs_rgb))
            u_rgbd = entropy(mean_prediction(probs_rgbd))
            _write_gray(maps_dir / f"{sample.stem}_u_rgb.png", u_rgb[0, 0])
            _write_gray(maps_dir / f"{sample.stem}_u_rgbd.png", u_rgbd[0, 0])
            if sizes and len(sizes) > 1:
                u_rgb_ms, u_rgbd_ms = _multisize_uncertainty(model, manifest, index, sizes)
                _write_gray(maps_dir / f"{sample.stem}_u_rgb_multisize.png", u_rgb_ms)
                _write_gray(maps_dir / f"{sample.stem}_u_rgbd_multisize.png", u_rgbd_ms)
    print(f"wrote uncertainty maps for {len(manifest)} image(s) under {maps_dir}")
    return EXIT_OK


def _multisize_uncertainty(model, manifest, index, sizes):
    """Entropy of the mean over deterministic predictions at several sizes."""
    import torch.nn.functional as F

    grid = (sizes[0], sizes[0])
    stacks_rgb, stacks_rgbd = [], []
    for s in sizes:
        sample = data_mod.load_sample(manifest, index, s)
        x = sample.image.unsqueeze(0)
        zeros = torch.zeros(1, model.latent_dim)
        bundle = model(x, z=zeros, z_fused=zeros)
        stacks_rgb.append(F.interpolate(bundle.rgb_prob, size=grid, mode="bilinear",
                                        align_corners=False))
        stacks_rgbd.append(F.interpolate(bundle.rgbd_prob, size=grid, mode="bilinear",
                                         align_corners=False))
    u_rgb = entropy(mean_prediction(stacks_rgb))
    u_rgbd = entropy(mean_prediction(stacks_rgbd))
    return u_rgb[0, 0], u_rgbd[0, 0]


def cmd_prepare_depth(args) -> int:
    src = Path(args.src)
    if not src.is_dir():
        raise BadConfig(f"source directory not found: {src}")
    count = data_mod.import_external_depth(src, args.dst)
    print(f"converted {count} depth map(s) into {args.dst}")
    return EXIT_OK


def cmd_bench(args) -> int:
    base = training.TrainConfig(
        variant="base",
        image_size=args.size,
        batch_size=args.batch_size,
        epochs=max(args.steps, 1),
        lr_gen=args.lr,
        lr_dis=args.lr,
        seed=args.seed,
        backbone=args.backbone,
        data_root=args.data_root,
        out_dir=args.out,
        hflip=False,
        checkpoint_every=max(args.steps, 1),
        max_steps=args.steps,
        cache_samples=True,
    )
    cells = bench_mod.make_grid(args.grid, size=args.size, backbone=args.backbone)
    rows, csv_path = bench_mod.run_grid(cells, base, args.out)
    for row in rows:
        print(row.csv())
    print(f"grid report: {csv_path}")
    if any(row.status != "OK" for row in rows):
        return EXIT_RUNTIME
    return EXIT_OK


# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthcod",
        description="Depth-guided camouflaged object detection toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model variant")
    _add_train_flags(p_train)
    p_train.add_argument("--resume", help="checkpoint to resume from")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on dataset roots")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data-root", required=True, action="append",
                        help="dataset root (repeatable)")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--size", type=int)
    p_eval.add_argument("--sample-eval", type=int, default=None,
                        help="average this many sampled predictions instead of z=0")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=cmd_eval)

    p_pred = sub.add_parser("predict", help="write per-image prediction maps")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--data-root", help="dataset root (directory mode)")
    p_pred.add_argument("--image", help="single image mode")
    p_pred.add_argument("--depth", help="depth map for single image mode")
    p_pred.add_argument("--out", required=True)
    p_pred.add_argument("--size", type=int)
    p_pred.set_defaults(func=cmd_predict)

    p_vis = sub.add_parser("visualize", help="write per-image uncertainty maps")
    p_vis.add_argument("--checkpoint", required=True)
    p_vis.add_argument("--data-root", required=True)
    p_vis.add_argument("--out", required=True)
    p_vis.add_argument("--size", type=int)
    p_vis.add_argument("--t-samples", type=int, default=5)
    p_vis.add_argument("--seed", type=int, default=0)
    p_vis.add_argument("--sizes", help="comma list for multi-size stacks, e.g. 352,416,480")
    p_vis.set_defaults(func=cmd_visualize)

    p_dep = sub.add_parser("prepare-depth", help="import external depth maps")
    p_dep.add_argument("--src", required=True)
    p_dep.add_argument("--dst", required=True)
    p_dep.set_defaults(func=cmd_prepare_depth)

    p_bench = sub.add_parser("bench", help="run the ablation or fusion grid")
    p_bench.add_argument("--grid", required=True, choices=("ablation", "fusion"))
    p_bench.add_argument("--data-root", required=True)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--steps", type=int, default=bench_mod.DEFAULT_GRID_STEPS)
    p_bench.add_argument("--size", type=int, default=bench_mod.DEFAULT_GRID_SIZE)
    p_bench.add_argument("--backbone", default=bench_mod.DEFAULT_GRID_BACKBONE,
                         choices=sorted(training.BACKBONES))
    p_bench.add_argument("--batch-size", type=int, default=5)
    p_bench.add_argument("--lr", type=float, default=1e-3)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except BadConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DepthcodError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint():
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
