"""Depth-guided camouflaged object detection toolkit.

A two-branch generator (RGB camouflage + auxiliary depth estimation) with
mid-level multi-modal fusion, an adversarial discriminator, entropy-based
confidence weighting of the modal losses, an alternating training loop, and
the four standard segmentation metrics. All ablation and fusion-baseline
variants are reproducible from configuration.
"""

__version__ = "0.1.0"

from .data import (
    Batch,
    DatasetManifest,
    Sample,
    augment,
    collate,
    import_external_depth,
    load_manifest,
    load_sample,
)
from .generator import (
    VARIANT_CAPS,
    VARIANTS,
    CamouflageGenerator,
    PredictionBundle,
    build_variant,
)
from .losses import (
    LossReport,
    adversarial_loss,
    confidence_weighted_loss,
    depth_loss,
    discriminator_loss,
    generator_loss,
    ssim,
    structure_aware_loss,
)
from .metrics import (
    MetricReport,
    e_measure_mean,
    evaluate,
    f_measure_mean,
    mae,
    s_measure,
)
from .training import (
    TrainConfig,
    load_checkpoint,
    reduced_step,
    save_checkpoint,
    train,
    train_step,
)
from .uncertainty import (
    ConfidenceMaps,
    confidence,
    confidence_from_samples,
    entropy,
    mean_prediction,
    modal_weights,
    sample_predictions,
)
