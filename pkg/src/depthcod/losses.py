"""Training objectives: structure-aware segmentation loss, depth regression
loss, adversarial loss, confidence-weighted combination, and the generator
and discriminator totals."""

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from .errors import ShapeMismatch

ADV_WEIGHT = 0.1      # weight of the adversarial term in the generator total
SSIM_WEIGHT = 0.85    # weight of the SSIM term in the depth loss

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class LossReport:
    """Scalar loss components of one step; None marks an absent component."""

    rgb: Optional[float] = None
    rgbd: Optional[float] = None
    cod: Optional[float] = None
    depth: Optional[float] = None
    adv: Optional[float] = None
    gen: Optional[float] = None
    dis: Optional[float] = None

    def as_dict(self):
        return {
            "l_rgb": self.rgb, "l_rgbd": self.rgbd, "l_cod": self.cod,
            "l_depth": self.depth, "l_adv": self.adv, "l_gen": self.gen,
            "l_dis": self.dis,
        }


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def structure_aware_loss(logits, target):
    """Boundary-weighted BCE plus weighted IoU over [B,1,H,W] maps.

    Pixels near mask boundaries get weight 1 + 5*|avgpool31(y) - y|. Returns
    (scalar, per_pixel_map); the map is the normalized weighted-BCE map plus
    the per-image weighted-IoU value broadcast uniformly, so its global mean
    equals the scalar and it can feed pixel-wise reweighting.
    """
    _check_same_shape(logits, target)
    weight = 1.0 + 5.0 * (F.avg_pool2d(target, 31, stride=1, padding=15) - target).abs()
    bce = F.binary_cross_entropy_with_logits(logits, target, reduction="none")
    weight_sum = weight.sum(dim=(2, 3), keepdim=True)
    bce_per_image = (weight * bce).sum(dim=(2, 3), keepdim=True) / weight_sum

    prob = torch.sigmoid(logits)
    inter = (prob * target * weight).sum(dim=(2, 3), keepdim=True)
    union = ((prob + target) * weight).sum(dim=(2, 3), keepdim=True)
    iou_per_image = 1.0 - (inter + 1.0) / (union - inter + 1.0)

    scalar = (bce_per_image + iou_per_image).mean()
    n_pix = logits.shape[-2] * logits.shape[-1]
    per_pixel = weight * bce * (n_pix / weight_sum) + iou_per_image
    return scalar, per_pixel


def _gaussian_kernel(window, sigma, dtype, device):
    half = (window - 1) / 2.0
    coords = torch.arange(window, dtype=dtype, device=device) - half
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    kernel = torch.outer(g, g)
    return (kernel / kernel.sum()).view(1, 1, window, window)


def _to_nchw(x):
    if x.dim() == 2:
        return x.unsqueeze(0).unsqueeze(0)
    if x.dim() == 3:
        return x.unsqueeze(0)
    return x


def ssim(a, b, window=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Single-scale SSIM with a Gaussian window, averaged over valid positions.

    The window shrinks to the largest odd size that fits when the input is
    smaller than 11x11. The mean is clamped to [0, 1], the range the depth
    loss expects.
    """
    _check_same_shape(a, b)
    a, b = _to_nchw(a), _to_nchw(b)
    win = min(window, a.shape[-2], a.shape[-1])
    if win % 2 == 0:
        win -= 1
    kernel = _gaussian_kernel(win, sigma, a.dtype, a.device)

    mu_a = F.conv2d(a, kernel)
    mu_b = F.conv2d(b, kernel)
    var_a = F.conv2d(a * a, kernel) - mu_a ** 2
    var_b = F.conv2d(b * b, kernel) - mu_b ** 2
    cov = F.conv2d(a * b, kernel) - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return (num / den).mean().clamp(0.0, 1.0)


def depth_loss(pred, target, ssim_weight=SSIM_WEIGHT):
    """Weighted sum of pointwise L1 and the SSIM dissimilarity, both in [0,1]."""
    _check_same_shape(pred, target)
    l1 = (pred - target).abs().mean()
    return (1.0 - ssim_weight) * l1 + ssim_weight * (1.0 - ssim(pred, target)) / 2.0


def adversarial_loss(score_rgb, score_rgbd):
    """Push both heads' discriminator scores toward the all-real target."""
    loss = F.binary_cross_entropy_with_logits(score_rgb, torch.ones_like(score_rgb))
    loss = loss + F.binary_cross_entropy_with_logits(score_rgbd, torch.ones_like(score_rgbd))
    return loss


def confidence_weighted_loss(map_rgb, map_rgbd, weight_rgb, weight_rgbd):
    """Pixel-wise convex combination of the two modal loss maps.

    The weights are treated as constants: no gradient flows through them.
    """
    _check_same_shape(map_rgb, map_rgbd)
    _check_same_shape(map_rgb, weight_rgb)
    _check_same_shape(map_rgb, weight_rgbd)
    return (weight_rgb.detach() * map_rgb + weight_rgbd.detach() * map_rgbd).mean()


def generator_loss(cod, depth, adv, adv_weight=ADV_WEIGHT):
    return cod + depth + adv_weight * adv


def discriminator_loss(score_real, score_fake_rgb, score_fake_rgbd):
    """Real scored against ones, both detached fakes against zeros."""
    loss = F.binary_cross_entropy_with_logits(score_real, torch.ones_like(score_real))
    loss = loss + F.binary_cross_entropy_with_logits(
        score_fake_rgb, torch.zeros_like(score_fake_rgb))
    loss = loss + F.binary_cross_entropy_with_logits(
        score_fake_rgbd, torch.zeros_like(score_fake_rgbd))
    return loss
