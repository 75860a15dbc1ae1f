"""Three-headed camouflage generator and its ablation/fusion variants.

Variant map:
  base   RGB branch only.
  ade    base plus an auxiliary depth-regression branch (no interaction).
  a_d    ade plus a mid-level fusion module with its own decoder.
  full   a_d plus latent codes on both camouflage heads and a discriminator.
  early  image and depth concatenated at the input, single RGB-style net.
  cross  the second branch consumes the depth map and predicts camouflage;
         fusion module kept.
  late   two RGB-style nets on image and depth; predictions combined by a
         final 3x3 convolution.
"""

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from .blocks import (
    DilatedReduction,
    LatentInjector,
    PatchDiscriminator,
    PyramidDecoder,
    REDUCED_CHANNELS,
    build_backbone,
)
from .errors import BadConfig, VariantUnsupported

VARIANTS = ("base", "ade", "a_d", "full", "early", "cross", "late")


@dataclass(frozen=True)
class VariantCaps:
    depth_head: bool       # a second branch exists and emits its own map
    fusion_head: bool      # mid-level fusion convs + dedicated decoder
    latent: bool           # stochastic latent codes + adversarial training
    needs_depth_input: bool  # forward() consumes the depth map directly
    depth_regression: bool   # the second branch regresses depth (vs camouflage)


VARIANT_CAPS = {
    "base":  VariantCaps(False, False, False, False, False),
    "ade":   VariantCaps(True, False, False, False, True),
    "a_d":   VariantCaps(True, True, False, False, True),
    "full":  VariantCaps(True, True, True, False, True),
    "early": VariantCaps(False, False, False, True, False),
    "cross": VariantCaps(True, True, False, True, False),
    "late":  VariantCaps(False, False, False, True, False),
}


@dataclass
class PredictionBundle:
    """Per-forward outputs; heads a variant lacks stay None.

    rgbd_logits carries the multi-modal head for every fusion style
    (mid-level for a_d/full/cross, prediction-level for late).
    """

    rgb_logits: torch.Tensor
    rgbd_logits: Optional[torch.Tensor] = None
    depth: Optional[torch.Tensor] = None
    depth_cod_logits: Optional[torch.Tensor] = None

    @property
    def rgb_prob(self):
        return torch.sigmoid(self.rgb_logits)

    @property
    def rgbd_prob(self):
        return None if self.rgbd_logits is None else torch.sigmoid(self.rgbd_logits)

    @property
    def primary_logits(self):
        return self.rgb_logits if self.rgbd_logits is None else self.rgbd_logits


class _EncoderBranch(nn.Module):
    """Backbone plus per-stage dilated reduction to 32 channels."""

    def __init__(self, backbone_name, freeze_bn=False):
        super().__init__()
        self.backbone = build_backbone(backbone_name, freeze_bn=freeze_bn)
        self.reduce = nn.ModuleList(
            DilatedReduction(c) for c in self.backbone.stage_channels
        )

    def forward(self, x):
        feats = self.backbone(x)
        return [reduce(feat) for reduce, feat in zip(self.reduce, feats)]


class CamouflageGenerator(nn.Module):
    def __init__(self, variant, backbone="resnet50", latent_dim=32, freeze_backbone_bn=False):
        super().__init__()
        if variant not in VARIANT_CAPS:
            raise BadConfig(f"unknown variant {variant!r}; choose from {VARIANTS}")
        self.variant = variant
        self.caps = VARIANT_CAPS[variant]
        self.latent_dim = latent_dim

        self.rgb_encoder = _EncoderBranch(backbone, freeze_backbone_bn)
        self.rgb_decoder = PyramidDecoder()

        if variant == "early":
            self.input_fuse = nn.Conv2d(4, 3, 3, padding=1)

        if self.caps.depth_head or variant == "late":
            self.depth_encoder = _EncoderBranch(backbone, freeze_backbone_bn)
            self.depth_decoder = PyramidDecoder()

        if self.caps.fusion_head:
            self.fusion_convs = nn.ModuleList(
                nn.Conv2d(2 * REDUCED_CHANNELS, REDUCED_CHANNELS, 3, padding=1)
                for _ in range(4)
            )
            self.fusion_decoder = PyramidDecoder()

        if variant == "late":
            self.late_head = nn.Conv2d(2, 1, 3, padding=1)

        if self.caps.latent:
            self.rgb_latent = LatentInjector(REDUCED_CHANNELS, latent_dim)
            self.fusion_latent = LatentInjector(REDUCED_CHANNELS, latent_dim)

    # ------------------------------------------------------------------
    def sample_latent(self, batch_size, rng=None, device=None, dtype=None):
        # drawn on CPU so a shared torch.Generator stays usable on any device
        z = torch.randn(batch_size, self.latent_dim, generator=rng, dtype=dtype)
        return z if device is None else z.to(device)

    def _latent_or_sample(self, z, x):
        if z is None:
            z = self.sample_latent(x.shape[0], device=x.device, dtype=x.dtype)
        return z

    def _rgb_pyramid(self, x, z):
        feats = self.rgb_encoder(x)
        if self.caps.latent:
            feats[3] = self.rgb_latent(feats[3], z)
        return feats

    # ------------------------------------------------------------------
    def forward_rgb(self, x, z=None):
        """Camouflage logits from the RGB branch alone."""
        if self.variant == "early":
            raise VariantUnsupported("early fusion consumes image+depth; use forward()")
        if z is not None and not self.caps.latent:
            raise VariantUnsupported(f"{self.variant} is deterministic; no latent input")
        if self.caps.latent:
            z = self._latent_or_sample(z, x)
        feats = self._rgb_pyramid(x, z)
        return self.rgb_decoder(feats, x.shape[-2:])

    def forward_depth(self, x):
        """Regressed depth in [0, 1] from the auxiliary branch."""
        if not self.caps.depth_regression:
            raise VariantUnsupported(f"{self.variant} has no depth-regression head")
        feats = self.depth_encoder(x)
        return torch.sigmoid(self.depth_decoder(feats, x.shape[-2:]))

    def forward_fusion(self, x, z=None, z_fused=None, depth_in=None):
        """Run all heads of a fusion-capable variant; returns the full bundle."""
        if not self.caps.fusion_head:
            raise VariantUnsupported(f"{self.variant} has no fusion head")
        return self.forward(x, depth_in=depth_in, z=z, z_fused=z_fused)

    def forward(self, x, depth_in=None, z=None, z_fused=None) -> PredictionBundle:
        if self.caps.needs_depth_input and depth_in is None:
            raise BadConfig(f"variant {self.variant} requires the depth map as input")
        out_size = x.shape[-2:]

        if self.variant == "early":
            fused_input = self.input_fuse(torch.cat([x, depth_in], dim=1))
            feats = self._rgb_pyramid(fused_input, None)
            return PredictionBundle(rgb_logits=self.rgb_decoder(feats, out_size))

        if self.variant == "late":
            rgb_logits = self.rgb_decoder(self._rgb_pyramid(x, None), out_size)
            depth_rgb = depth_in.expand(-1, 3, -1, -1)
            aux_logits = self.depth_decoder(self.depth_encoder(depth_rgb), out_size)
            combined = self.late_head(
                torch.cat([torch.sigmoid(rgb_logits), torch.sigmoid(aux_logits)], dim=1)
            )
            return PredictionBundle(rgb_logits=rgb_logits, rgbd_logits=combined)

        if self.caps.latent:
            z = self._latent_or_sample(z, x)
            z_fused = self._latent_or_sample(z_fused, x)

        rgb_feats = self._rgb_pyramid(x, z)
        rgb_logits = self.rgb_decoder(rgb_feats, out_size)
        if self.variant == "base":
            return PredictionBundle(rgb_logits=rgb_logits)

        branch_input = x if self.caps.depth_regression else depth_in.expand(-1, 3, -1, -1)
        depth_feats = self.depth_encoder(branch_input)
        branch_logits = self.depth_decoder(depth_feats, out_size)
        depth = torch.sigmoid(branch_logits) if self.caps.depth_regression else None
        depth_cod = None if self.caps.depth_regression else branch_logits

        if not self.caps.fusion_head:
            return PredictionBundle(rgb_logits=rgb_logits, depth=depth)

        fused = [
            conv(torch.cat([rf, df], dim=1))
            for conv, rf, df in zip(self.fusion_convs, rgb_feats, depth_feats)
        ]
        if self.caps.latent:
            fused[3] = self.fusion_latent(fused[3], z_fused)
        rgbd_logits = self.fusion_decoder(fused, out_size)
        return PredictionBundle(
            rgb_logits=rgb_logits,
            rgbd_logits=rgbd_logits,
            depth=depth,
            depth_cod_logits=depth_cod,
        )

    def sample_probability_maps(self, x, count, rng=None):
        """Probability maps of both camouflage heads for `count` independent
        latent draws. Encoder features do not depend on the latent codes, so
        they are computed once and reused; the results match `count` separate
        forward passes draw for draw."""
        if not self.caps.latent:
            raise VariantUnsupported(f"{self.variant} has no latent codes to sample")
        out_size = x.shape[-2:]
        with torch.no_grad():
            rgb_feats = self.rgb_encoder(x)
            depth_feats = self.depth_encoder(x)
            fused_pre = [
                conv(torch.cat([rf, df], dim=1))
                for conv, rf, df in zip(self.fusion_convs[:3], rgb_feats[:3], depth_feats[:3])
            ]
            probs_rgb, probs_rgbd = [], []
            for _ in range(count):
                z = self.sample_latent(x.shape[0], rng=rng, device=x.device, dtype=x.dtype)
                z_fused = self.sample_latent(x.shape[0], rng=rng, device=x.device, dtype=x.dtype)
                top = self.rgb_latent(rgb_feats[3], z)
                rgb_logits = self.rgb_decoder(
                    [rgb_feats[0], rgb_feats[1], rgb_feats[2], top], out_size)
                fused_top = self.fusion_convs[3](torch.cat([top, depth_feats[3]], dim=1))
                fused_top = self.fusion_latent(fused_top, z_fused)
                rgbd_logits = self.fusion_decoder([*fused_pre, fused_top], out_size)
                probs_rgb.append(torch.sigmoid(rgb_logits))
                probs_rgbd.append(torch.sigmoid(rgbd_logits))
        return probs_rgb, probs_rgbd

    # ------------------------------------------------------------------
    def param_groups(self) -> dict:
        """Disjoint named parameter groups, independently serializable."""
        groups = {
            "rgb_encoder": list(self.rgb_encoder.parameters()),
            "rgb_decoder": list(self.rgb_decoder.parameters()),
        }
        if hasattr(self, "input_fuse"):
            groups["rgb_encoder"] += list(self.input_fuse.parameters())
        if hasattr(self, "depth_encoder"):
            groups["depth_encoder"] = list(self.depth_encoder.parameters())
            groups["depth_decoder"] = list(self.depth_decoder.parameters())
        if self.caps.fusion_head:
            groups["fusion"] = list(self.fusion_convs.parameters())
            groups["fusion"] += list(self.fusion_decoder.parameters())
        if self.variant == "late":
            groups["fusion"] = list(self.late_head.parameters())
        if self.caps.latent:
            groups["latent"] = list(self.rgb_latent.parameters())
            groups["latent"] += list(self.fusion_latent.parameters())
        return groups


def build_variant(variant, *, backbone="resnet50", latent_dim=32,
                  freeze_backbone_bn=False):
    """Construct the generator for a variant plus its discriminator (full only)."""
    model = CamouflageGenerator(
        variant, backbone=backbone, latent_dim=latent_dim,
        freeze_backbone_bn=freeze_backbone_bn,
    )
    discriminator = PatchDiscriminator() if model.caps.latent else None
    return model, discriminator
