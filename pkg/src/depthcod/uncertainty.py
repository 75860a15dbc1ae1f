"""Monte-Carlo latent sampling, predictive entropy, confidence maps, and the
pixel-wise modal weights used by the confidence-aware loss."""

from dataclasses import dataclass

import torch

from .errors import EmptyList, VariantUnsupported

PROB_EPS = 1e-8


@dataclass
class ConfidenceMaps:
    """Per-pixel confidence of each modal prediction and the derived weights.

    All maps live in [0, 1]; weight_rgb + weight_rgbd == 1 per pixel.
    """

    confidence_rgb: torch.Tensor
    confidence_rgbd: torch.Tensor
    weight_rgb: torch.Tensor
    weight_rgbd: torch.Tensor

    @property
    def uncertainty_rgb(self):
        return 1.0 - self.confidence_rgb

    @property
    def uncertainty_rgbd(self):
        return 1.0 - self.confidence_rgbd


def sample_predictions(model, x, num_samples, rng=None, depth_in=None):
    """Draw latent codes num_samples times and collect both heads' probability
    maps. The depth head is deterministic and not re-evaluated here."""
    if not model.caps.latent:
        raise VariantUnsupported(f"{model.variant} has no latent codes to sample")
    if num_samples < 1:
        raise EmptyList("need at least one sample")
    del depth_in  # the stochastic variant regresses depth; none is consumed
    return model.sample_probability_maps(x, num_samples, rng=rng)


def mean_prediction(maps):
    """Pixel-wise arithmetic mean of same-shape probability maps."""
    if len(maps) == 0:
        raise EmptyList("cannot average zero prediction maps")
    return torch.stack(list(maps), dim=0).mean(dim=0)


def entropy(p):
    """Binary entropy in bits, so the result lies in [0, 1].

    The boundary clamp widens to the dtype epsilon when 1 - 1e-8 is not
    representable (float32), else saturated probabilities would hit log2(0).
    """
    eps = max(PROB_EPS, torch.finfo(p.dtype).eps)
    p = p.clamp(eps, 1.0 - eps)
    return -(p * torch.log2(p) + (1.0 - p) * torch.log2(1.0 - p))


def confidence(p_mean):
    """One minus the predictive entropy of the mean prediction."""
    return 1.0 - entropy(p_mean)


def modal_weights(confidence_rgb, confidence_rgbd):
    """Pixel-wise normalized confidences; (0, 0) pixels fall back to (0.5, 0.5)."""
    total = confidence_rgb + confidence_rgbd
    safe_total = torch.where(total > 0, total, torch.ones_like(total))
    half = torch.full_like(total, 0.5)
    weight_rgb = torch.where(total > 0, confidence_rgb / safe_total, half)
    weight_rgbd = torch.where(total > 0, confidence_rgbd / safe_total, half)
    return weight_rgb, weight_rgbd


def confidence_from_samples(probs_rgb, probs_rgbd) -> ConfidenceMaps:
    """Confidence maps and modal weights from two stacks of sampled maps."""
    c_rgb = confidence(mean_prediction(probs_rgb))
    c_rgbd = confidence(mean_prediction(probs_rgbd))
    w_rgb, w_rgbd = modal_weights(c_rgb, c_rgbd)
    return ConfidenceMaps(
        confidence_rgb=c_rgb, confidence_rgbd=c_rgbd,
        weight_rgb=w_rgb, weight_rgbd=w_rgbd,
    )
