"""Benchmark metrics for binary-map evaluation (MAE, mean F, S, mean E) and a
dataset-level evaluator.

Conventions, fixed here as the binding contract:
  * threshold sweeps use t = k/255 for k = 1..255 with `pred >= t`;
  * F uses beta^2 = 0.3 and is 0 where precision + recall is 0; an image with
    empty ground truth scores 1 at thresholds where the binarized prediction
    is also empty, else 0;
  * S uses alpha = 0.5, sample statistics (N-1), half-up centroid rounding,
    and the all-background/all-foreground special cases 1 - mean(p)/mean(p);
  * E normalizes the enhanced-alignment map by the pixel count, scoring 1 on
    exact constant matches and 0 on constant mismatches;
  * all four results are clipped to [0, 1].
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import EmptyDataset, ShapeMismatch

FBETA_SQ = 0.3
SMEASURE_ALPHA = 0.5
THRESHOLDS = np.arange(1, 256, dtype=np.float64) / 255.0
_EPS = float(np.finfo(np.float64).eps)
_CHUNK = 64  # thresholds processed per block to bound memory


@dataclass
class ImageScores:
    stem: str
    s_measure: float
    f_measure: float
    e_measure: float
    mae: float


@dataclass
class MetricReport:
    s_measure: float
    f_measure: float
    e_measure: float
    mae: float
    per_image: list

    def row(self):
        return [self.s_measure, self.f_measure, self.e_measure, self.mae]


def _as_map(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    arr = np.asarray(x, dtype=np.float64)
    arr = np.squeeze(arr)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected a single 2D map, got shape {arr.shape}")
    return arr


def _pair(pred, target):
    p, y = _as_map(pred), _as_map(target)
    if p.shape != y.shape:
        raise ShapeMismatch(f"shape mismatch: {p.shape} vs {y.shape}")
    return p, y >= 0.5


def mae(pred, target) -> float:
    p, y = _pair(pred, target)
    return float(np.abs(p - y.astype(np.float64)).mean())


def f_measure_mean(pred, target) -> float:
    p, y = _pair(pred, target)
    gt_pos = int(y.sum())
    scores = np.empty(THRESHOLDS.size)
    for start in range(0, THRESHOLDS.size, _CHUNK):
        thr = THRESHOLDS[start:start + _CHUNK]
        bins = p[None, :, :] >= thr[:, None, None]
        pred_pos = bins.sum(axis=(1, 2))
        if gt_pos == 0:
            scores[start:start + thr.size] = (pred_pos == 0).astype(np.float64)
            continue
        tp = (bins & y[None, :, :]).sum(axis=(1, 2))
        precision = np.divide(tp, pred_pos, out=np.zeros(thr.size), where=pred_pos > 0)
        recall = tp / gt_pos
        denom = FBETA_SQ * precision + recall
        f = np.divide((1.0 + FBETA_SQ) * precision * recall, denom,
                      out=np.zeros(thr.size), where=denom > 0)
        scores[start:start + thr.size] = f
    return float(np.clip(scores.mean(), 0.0, 1.0))


def e_measure_mean(pred, target) -> float:
    p, y = _pair(pred, target)
    scores = np.empty(THRESHOLDS.size)
    all_bg = not y.any()
    all_fg = bool(y.all())
    phi_y = y.astype(np.float64) - y.mean()
    for start in range(0, THRESHOLDS.size, _CHUNK):
        thr = THRESHOLDS[start:start + _CHUNK]
        bins = (p[None, :, :] >= thr[:, None, None]).astype(np.float64)
        if all_bg:
            block = (1.0 - bins).mean(axis=(1, 2))
        elif all_fg:
            block = bins.mean(axis=(1, 2))
        else:
            phi_p = bins - bins.mean(axis=(1, 2), keepdims=True)
            align = 2.0 * phi_y[None] * phi_p / (phi_y[None] ** 2 + phi_p ** 2 + _EPS)
            block = ((align + 1.0) ** 2 / 4.0).mean(axis=(1, 2))
        scores[start:start + thr.size] = block
    return float(np.clip(scores.mean(), 0.0, 1.0))


def _round_half_up(v) -> int:
    return int(np.floor(v + 0.5))


def _centroid(y) -> tuple:
    """Half-up-rounded center of mass, 1-based like the reference definition."""
    h, w = y.shape
    total = y.sum()
    if total == 0:
        return _round_half_up(w / 2.0), _round_half_up(h / 2.0)
    cols = np.arange(1, w + 1, dtype=np.float64)
    rows = np.arange(1, h + 1, dtype=np.float64)
    cx = _round_half_up(float((y.sum(axis=0) * cols).sum() / total))
    cy = _round_half_up(float((y.sum(axis=1) * rows).sum() / total))
    return cx, cy


def _object_score(values) -> float:
    if values.size == 0:
        return 0.0
    m = float(values.mean())
    sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return 2.0 * m / (m * m + 1.0 + sd + _EPS)


def _region_similarity(p, y) -> float:
    n = p.size
    if n == 0:
        return 0.0
    mp, my = float(p.mean()), float(y.mean())
    var_p = float(((p - mp) ** 2).sum()) / (n - 1 + _EPS)
    var_y = float(((y - my) ** 2).sum()) / (n - 1 + _EPS)
    cov = float(((p - mp) * (y - my)).sum()) / (n - 1 + _EPS)
    num = 4.0 * mp * my * cov
    den = (mp * mp + my * my) * (var_p + var_y)
    if num != 0.0:
        return num / (den + _EPS)
    return 1.0 if den == 0.0 else 0.0


def s_measure(pred, target, alpha=SMEASURE_ALPHA) -> float:
    p, ybin = _pair(pred, target)
    y = ybin.astype(np.float64)
    mean_y = y.mean()
    if mean_y == 0.0:
        return float(np.clip(1.0 - p.mean(), 0.0, 1.0))
    if mean_y == 1.0:
        return float(np.clip(p.mean(), 0.0, 1.0))

    s_object = mean_y * _object_score(p[ybin]) \
        + (1.0 - mean_y) * _object_score(1.0 - p[~ybin])

    h, w = y.shape
    cx, cy = _centroid(y)
    area = float(h * w)
    quads = (
        (np.s_[:cy, :cx], cx * cy / area),
        (np.s_[:cy, cx:], (w - cx) * cy / area),
        (np.s_[cy:, :cx], cx * (h - cy) / area),
    )
    s_region = 0.0
    weight_rest = 1.0
    for sl, weight in quads:
        s_region += weight * _region_similarity(p[sl], y[sl])
        weight_rest -= weight
    s_region += weight_rest * _region_similarity(p[cy:, cx:], y[cy:, cx:])

    score = alpha * s_object + (1.0 - alpha) * s_region
    return float(np.clip(score, 0.0, 1.0))


def score_image(pred, target, stem="") -> ImageScores:
    return ImageScores(
        stem=stem,
        s_measure=s_measure(pred, target),
        f_measure=f_measure_mean(pred, target),
        e_measure=e_measure_mean(pred, target),
        mae=mae(pred, target),
    )


def evaluate(model, manifest, *, size, sample_count=None, rng=None,
             device="cpu", mean=None, std=None) -> MetricReport:
    """Score every manifest entry with the model's multi-modal head (RGB head
    for variants without one). Deterministic by default: latent codes are
    fixed at zero; pass sample_count to average that many sampled predictions
    instead."""
    from . import data as _data

    if len(manifest) == 0:
        raise EmptyDataset("cannot evaluate an empty manifest")
    kwargs = {}
    if mean is not None:
        kwargs["mean"] = mean
    if std is not None:
        kwargs["std"] = std

    was_training = model.training
    model.eval()
    per_image = []
    try:
        with torch.no_grad():
            for index in range(len(manifest)):
                sample = _data.load_sample(manifest, index, size, **kwargs)
                prob = predict_probability(
                    model, sample.image.unsqueeze(0).to(device),
                    depth_in=sample.depth.unsqueeze(0).to(device),
                    sample_count=sample_count, rng=rng,
                )
                per_image.append(score_image(prob[0, 0], sample.mask[0], stem=sample.stem))
    finally:
        if was_training:
            model.train()

    return MetricReport(
        s_measure=float(np.mean([r.s_measure for r in per_image])),
        f_measure=float(np.mean([r.f_measure for r in per_image])),
        e_measure=float(np.mean([r.e_measure for r in per_image])),
        mae=float(np.mean([r.mae for r in per_image])),
        per_image=per_image,
    )


def predict_probability(model, image, depth_in=None, sample_count=None, rng=None):
    """Probability map of the evaluation head for one batch."""
    from .uncertainty import mean_prediction, sample_predictions

    depth_arg = depth_in if model.caps.needs_depth_input else None
    if sample_count and model.caps.latent:
        probs_rgb, probs_rgbd = sample_predictions(
            model, image, sample_count, rng=rng, depth_in=depth_arg)
        maps = probs_rgbd if probs_rgbd[0] is not None else probs_rgb
        return mean_prediction(maps)
    if model.caps.latent:
        zeros = torch.zeros(image.shape[0], model.latent_dim,
                            device=image.device, dtype=image.dtype)
        bundle = model(image, depth_in=depth_arg, z=zeros, z_fused=zeros)
    else:
        bundle = model(image, depth_in=depth_arg)
    return torch.sigmoid(bundle.primary_logits)


REPORT_HEADER = "dataset,s,f,e,mae"


def write_report_csv(path, named_reports):
    lines = [REPORT_HEADER]
    for name, report in named_reports:
        lines.append(f"{name},{report.s_measure!r},{report.f_measure!r},"
                     f"{report.e_measure!r},{report.mae!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_report_table(path, named_reports):
    """Aligned plain-text table; column order S, F, E, MAE."""
    header = f"{'dataset':<20} {'S':>8} {'F':>8} {'E':>8} {'MAE':>8}"
    lines = [header, "-" * len(header)]
    for name, report in named_reports:
        lines.append(
            f"{name:<20} {report.s_measure:>8.4f} {report.f_measure:>8.4f} "
            f"{report.e_measure:>8.4f} {report.mae:>8.4f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_per_image_csv(path, report):
    lines = ["stem,s,f,e,mae"]
    for r in report.per_image:
        lines.append(f"{r.stem},{r.s_measure!r},{r.f_measure!r},{r.e_measure!r},{r.mae!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
