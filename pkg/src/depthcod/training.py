"""Alternating generator/discriminator optimization with confidence-aware
weighting, per-step loss logging, checkpointing, and deterministic resume."""

import logging
import math
from copy import deepcopy
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import torch
from torch.optim import Adam

from . import data as data_mod
from .archive import load_archive, save_archive
from .errors import BadConfig, EmptyDataset, NonFiniteLoss, VersionMismatch
from .generator import VARIANTS, build_variant
from .losses import (
    LossReport,
    adversarial_loss,
    confidence_weighted_loss,
    depth_loss,
    discriminator_loss,
    generator_loss,
    structure_aware_loss,
)
from .blocks import BACKBONES
from .uncertainty import confidence_from_samples, sample_predictions

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CHECKPOINT_KIND = "depthcod-checkpoint"
CSV_HEADER = "epoch,step,l_rgb,l_rgbd,l_cod,l_depth,l_adv,l_gen,l_dis"


@dataclass
class TrainConfig:
    variant: str = "full"
    image_size: int = 352
    batch_size: int = 6
    epochs: int = 50
    lr_gen: float = 2.5e-5
    lr_dis: float = 2.5e-5
    adv_weight: float = 0.1
    ssim_weight: float = 0.85
    sample_count: int = 5
    latent_dim: int = 32
    seed: int = 0
    backbone: str = "resnet50"
    data_root: str = ""
    out_dir: str = ""
    hflip: bool = True
    freeze_backbone_bn: bool = False
    grad_clip: Optional[float] = 10.0
    checkpoint_every: int = 1
    max_steps: Optional[int] = None
    cache_samples: bool = False
    device: str = "cpu"

    def validate(self):
        if self.variant not in VARIANTS:
            raise BadConfig(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.backbone not in BACKBONES:
            raise BadConfig(f"unknown backbone {self.backbone!r}; choose from {sorted(BACKBONES)}")
        if self.image_size <= 0 or self.image_size % 32 != 0:
            raise BadConfig(f"image_size must be a positive multiple of 32, got {self.image_size}")
        if self.batch_size < 1:
            raise BadConfig("batch_size must be >= 1")
        if self.epochs < 0:
            raise BadConfig("epochs must be >= 0")
        if self.lr_gen <= 0 or self.lr_dis <= 0:
            raise BadConfig("learning rates must be positive")
        if self.sample_count < 1:
            raise BadConfig("sample_count must be >= 1")
        if self.latent_dim < 1:
            raise BadConfig("latent_dim must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise BadConfig("grad_clip must be positive or none")
        if self.checkpoint_every < 1:
            raise BadConfig("checkpoint_every must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise BadConfig("max_steps must be >= 1")
        return self


_OPTIONAL_FIELDS = {"grad_clip": float, "max_steps": int}


def config_from_mapping(mapping) -> TrainConfig:
    """Build a TrainConfig from string-or-typed values (config files, CLI)."""
    known = {f.name for f in fields(TrainConfig)}
    kwargs = {}
    for key, raw in mapping.items():
        if key not in known:
            raise BadConfig(f"unknown config key {key!r}")
        kwargs[key] = _coerce(key, raw)
    return TrainConfig(**kwargs)


def _coerce(key, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if key in _OPTIONAL_FIELDS:
        if text.lower() in ("none", ""):
            return None
        return _OPTIONAL_FIELDS[key](text)
    default = getattr(TrainConfig(), key)
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def format_config(config: TrainConfig) -> str:
    lines = []
    for key, value in sorted(asdict(config).items()):
        lines.append(f"{key}={'' if value is None else value}")
    return "\n".join(lines) + "\n"


def parse_config_file(path) -> dict:
    """Flat key=value file; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadConfig(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        values[key.strip()] = raw.strip()
    return values


# ----------------------------------------------------------------------
# steps


def _ensure_finite(report: LossReport):
    bad = {k: v for k, v in report.as_dict().items()
           if v is not None and not math.isfinite(v)}
    if bad:
        raise NonFiniteLoss(f"non-finite loss components: {bad}; "
                            f"full report: {report.as_dict()}")


def _clip(module, limit):
    if limit is not None:
        torch.nn.utils.clip_grad_norm_(module.parameters(), limit)


def train_step(model, discriminator, batch, opt_gen, opt_dis, config, rng) -> LossReport:
    """One alternating update of the stochastic (full) variant.

    Forward all three heads, derive confidence weights from fresh latent
    samples, update the generator on the weighted total, then update the
    discriminator on detached predictions.
    """
    x, d, y = batch.image, batch.depth, batch.mask
    z = model.sample_latent(x.shape[0], rng=rng, device=x.device, dtype=x.dtype)
    z_fused = model.sample_latent(x.shape[0], rng=rng, device=x.device, dtype=x.dtype)
    bundle = model(x, z=z, z_fused=z_fused)

    probs_rgb, probs_rgbd = sample_predictions(model, x, config.sample_count, rng=rng)
    conf = confidence_from_samples(probs_rgb, probs_rgbd)

    l_rgb, map_rgb = structure_aware_loss(bundle.rgb_logits, y)
    l_rgbd, map_rgbd = structure_aware_loss(bundle.rgbd_logits, y)
    l_cod = confidence_weighted_loss(map_rgb, map_rgbd, conf.weight_rgb, conf.weight_rgbd)
    l_depth = depth_loss(bundle.depth, d, config.ssim_weight)

    pred_rgb = bundle.rgb_prob
    pred_rgbd = bundle.rgbd_prob
    l_adv = adversarial_loss(discriminator(x, pred_rgb), discriminator(x, pred_rgbd))
    l_gen = generator_loss(l_cod, l_depth, l_adv, config.adv_weight)

    opt_gen.zero_grad(set_to_none=True)
    l_gen.backward()
    _clip(model, config.grad_clip)
    opt_gen.step()

    l_dis = discriminator_loss(
        discriminator(x, y),
        discriminator(x, pred_rgb.detach()),
        discriminator(x, pred_rgbd.detach()),
    )
    opt_dis.zero_grad(set_to_none=True)
    l_dis.backward()
    _clip(discriminator, config.grad_clip)
    opt_dis.step()

    report = LossReport(
        rgb=l_rgb.item(), rgbd=l_rgbd.item(), cod=l_cod.item(),
        depth=l_depth.item(), adv=l_adv.item(), gen=l_gen.item(),
        dis=l_dis.item(),
    )
    _ensure_finite(report)
    return report


def reduced_step(model, batch, opt, config) -> LossReport:
    """One update of a deterministic variant (no latents, no adversary)."""
    x, d, y = batch.image, batch.depth, batch.mask
    variant = model.variant
    depth_in = d if model.caps.needs_depth_input else None
    bundle = model(x, depth_in=depth_in)

    report = LossReport()
    if variant in ("base", "early"):
        l_rgb, _ = structure_aware_loss(bundle.rgb_logits, y)
        total = l_rgb
        report.rgb = l_rgb.item()
    elif variant == "late":
        l_fused, _ = structure_aware_loss(bundle.rgbd_logits, y)
        total = l_fused
        report.rgbd = l_fused.item()
    elif variant == "ade":
        l_rgb, _ = structure_aware_loss(bundle.rgb_logits, y)
        l_depth = depth_loss(bundle.depth, d, config.ssim_weight)
        total = l_rgb + l_depth
        report.rgb, report.depth = l_rgb.item(), l_depth.item()
    elif variant == "a_d":
        l_rgb, _ = structure_aware_loss(bundle.rgb_logits, y)
        l_rgbd, _ = structure_aware_loss(bundle.rgbd_logits, y)
        l_depth = depth_loss(bundle.depth, d, config.ssim_weight)
        total = l_rgb + l_rgbd + l_depth
        report.rgb, report.rgbd, report.depth = l_rgb.item(), l_rgbd.item(), l_depth.item()
    elif variant == "cross":
        # the second branch predicts camouflage from depth input; its
        # structure loss occupies the depth slot of the report
        l_rgb, _ = structure_aware_loss(bundle.rgb_logits, y)
        l_rgbd, _ = structure_aware_loss(bundle.rgbd_logits, y)
        l_branch, _ = structure_aware_loss(bundle.depth_cod_logits, y)
        total = l_rgb + l_rgbd + l_branch
        report.rgb, report.rgbd, report.depth = l_rgb.item(), l_rgbd.item(), l_branch.item()
    else:
        raise BadConfig(f"reduced_step does not handle variant {variant!r}")

    opt.zero_grad(set_to_none=True)
    total.backward()
    _clip(model, config.grad_clip)
    opt.step()

    report.gen = total.item()
    _ensure_finite(report)
    return report


# ----------------------------------------------------------------------
# checkpoints


@dataclass
class CheckpointState:
    tensors: dict
    meta: dict

    @property
    def epoch(self) -> int:
        return int(self.meta["epoch"])

    @property
    def config(self) -> dict:
        return self.meta["config"]

    def _sub(self, prefix):
        return {k[len(prefix):]: v for k, v in self.tensors.items()
                if k.startswith(prefix)}

    def model_state(self):
        return self._sub("model/")

    def discriminator_state(self):
        return self._sub("disc/")

    def optimizer_state(self, name):
        prefix = f"opt/{name}/state/"
        scalars = {tuple(entry) for entry in self.meta.get("opt_scalars", [])}
        state = {}
        for key, tensor in self.tensors.items():
            if not key.startswith(prefix):
                continue
            idx_s, field = key[len(prefix):].split("/", 1)
            value = tensor.item() if (name, idx_s, field) in scalars else tensor
            state.setdefault(int(idx_s), {})[field] = value
        groups = deepcopy(self.meta["opt_groups"][name])
        return {"state": state, "param_groups": groups}

    def rng_state(self):
        return self.tensors["rng/stream"]


def save_checkpoint(path, *, config, epoch, model, discriminator=None,
                    opt_gen=None, opt_dis=None, rng=None):
    tensors = {}
    for key, value in model.state_dict().items():
        tensors[f"model/{key}"] = value
    if discriminator is not None:
        for key, value in discriminator.state_dict().items():
            tensors[f"disc/{key}"] = value

    groups, scalars = {}, []
    for name, opt in (("gen", opt_gen), ("dis", opt_dis)):
        if opt is None:
            continue
        sd = opt.state_dict()
        groups[name] = sd["param_groups"]
        for idx, entry in sd["state"].items():
            for field, value in entry.items():
                key = f"opt/{name}/state/{idx}/{field}"
                if torch.is_tensor(value):
                    tensors[key] = value
                else:
                    tensors[key] = torch.tensor(float(value), dtype=torch.float64)
                    scalars.append([name, str(idx), field])
    if rng is not None:
        tensors["rng/stream"] = rng.get_state()

    meta = {
        "kind": CHECKPOINT_KIND,
        "version": CHECKPOINT_VERSION,
        "epoch": int(epoch),
        "config": asdict(config),
        "opt_groups": groups,
        "opt_scalars": scalars,
    }
    save_archive(path, tensors, meta)


def load_checkpoint(path) -> CheckpointState:
    tensors, meta = load_archive(path)
    if meta.get("kind") != CHECKPOINT_KIND or meta.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"{path}: expected {CHECKPOINT_KIND} v{CHECKPOINT_VERSION}, "
            f"found {meta.get('kind')!r} v{meta.get('version')!r}")
    return CheckpointState(tensors=tensors, meta=meta)


def build_from_checkpoint(state: CheckpointState, device="cpu"):
    """Reconstruct the generator (and discriminator, if any) from a checkpoint."""
    cfg = state.config
    model, discriminator = build_variant(
        cfg["variant"], backbone=cfg["backbone"], latent_dim=cfg["latent_dim"],
        freeze_backbone_bn=cfg.get("freeze_backbone_bn", False),
    )
    model.load_state_dict(state.model_state())
    model.to(device)
    if discriminator is not None and state.discriminator_state():
        discriminator.load_state_dict(state.discriminator_state())
        discriminator.to(device)
    return model, discriminator


# ----------------------------------------------------------------------
# the loop


def _format_cell(value):
    return "" if value is None else repr(value)


def _csv_row(epoch, step, report: LossReport) -> str:
    parts = [str(epoch), str(step)]
    values = report.as_dict()
    parts += [_format_cell(values[k]) for k in
              ("l_rgb", "l_rgbd", "l_cod", "l_depth", "l_adv", "l_gen", "l_dis")]
    return ",".join(parts)


def train(config: TrainConfig, resume_from=None):
    """Run the training loop; returns (final checkpoint path, loss CSV path).

    With a fixed seed the loss CSV is bit-identical across runs, and resuming
    from an epoch checkpoint reproduces the uninterrupted run exactly.
    """
    config.validate()
    manifest = data_mod.load_manifest(config.data_root)
    if len(manifest) == 0:
        raise EmptyDataset(f"no samples under {config.data_root}")

    device = torch.device(config.device)
    torch.manual_seed(config.seed)
    model, discriminator = build_variant(
        config.variant, backbone=config.backbone, latent_dim=config.latent_dim,
        freeze_backbone_bn=config.freeze_backbone_bn,
    )
    model.to(device).train()
    opt_gen = Adam(model.parameters(), lr=config.lr_gen)
    opt_dis = None
    if discriminator is not None:
        discriminator.to(device).train()
        opt_dis = Adam(discriminator.parameters(), lr=config.lr_dis)

    stream = torch.Generator().manual_seed(config.seed)
    start_epoch = 0
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if state.config["variant"] != config.variant:
            raise BadConfig(
                f"checkpoint variant {state.config['variant']!r} does not match "
                f"configured variant {config.variant!r}")
        model.load_state_dict(state.model_state())
        opt_gen.load_state_dict(state.optimizer_state("gen"))
        if discriminator is not None:
            discriminator.load_state_dict(state.discriminator_state())
            opt_dis.load_state_dict(state.optimizer_state("dis"))
        stream.set_state(state.rng_state())
        start_epoch = state.epoch

    out_dir = Path(config.out_dir)
    ckpt_dir = out_dir / "ckpt"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "losses.csv"

    cache = None
    if config.cache_samples:
        cache = [data_mod.load_sample(manifest, i, config.image_size)
                 for i in range(len(manifest))]

    def get_sample(i):
        return cache[i] if cache is not None else data_mod.load_sample(
            manifest, i, config.image_size)

    def checkpoint_path(epoch):
        return ckpt_dir / f"epoch_{epoch:04d}.ckpt"

    def write_checkpoint(epoch):
        path = checkpoint_path(epoch)
        save_checkpoint(path, config=config, epoch=epoch, model=model,
                        discriminator=discriminator, opt_gen=opt_gen,
                        opt_dis=opt_dis, rng=stream)
        return path

    rows = []
    steps_done = 0
    last_ckpt = None
    stop = False
    for epoch in range(start_epoch, config.epochs):
        order = torch.randperm(len(manifest), generator=stream).tolist()
        for step, first in enumerate(range(0, len(order), config.batch_size)):
            indices = order[first:first + config.batch_size]
            samples = [get_sample(i) for i in indices]
            if config.hflip:
                samples = [data_mod.augment(s, stream) for s in samples]
            batch = data_mod.collate(samples)
            batch.image = batch.image.to(device)
            batch.depth = batch.depth.to(device)
            batch.mask = batch.mask.to(device)

            if model.caps.latent:
                report = train_step(model, discriminator, batch, opt_gen,
                                    opt_dis, config, stream)
            else:
                report = reduced_step(model, batch, opt_gen, config)
            rows.append(_csv_row(epoch, step, report))
            steps_done += 1
            if config.max_steps is not None and steps_done >= config.max_steps:
                stop = True
                break
        done = epoch + 1
        if stop or done % config.checkpoint_every == 0 or done == config.epochs:
            last_ckpt = write_checkpoint(done)
            log.info("epoch %d: wrote %s", done, last_ckpt)
        if stop:
            break

    if last_ckpt is None:
        last_ckpt = write_checkpoint(start_epoch)

    new_file = not (resume_from is not None and csv_path.exists())
    with open(csv_path, "w" if new_file else "a") as fh:
        if new_file:
            fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")

    return last_ckpt, csv_path
