"""Exception types shared across the toolkit."""


class DepthcodError(Exception):
    """Base class for all toolkit errors."""


class MissingDirectory(DepthcodError):
    """A required dataset subdirectory is absent."""


class StemMismatch(DepthcodError):
    """An image stem has no matching depth and/or mask file."""

    def __init__(self, missing_depth, missing_mask):
        self.missing_depth = sorted(missing_depth)
        self.missing_mask = sorted(missing_mask)
        parts = []
        if self.missing_depth:
            parts.append(f"missing in Depth/: {', '.join(self.missing_depth)}")
        if self.missing_mask:
            parts.append(f"missing in GT/: {', '.join(self.missing_mask)}")
        super().__init__("; ".join(parts))


class DecodeError(DepthcodError):
    """A file could not be read or decoded."""


class BadShape(DepthcodError):
    """Input spatial size violates a network precondition."""


class ShapeMismatch(DepthcodError):
    """Two maps that must share a shape do not."""


class BadConfig(DepthcodError):
    """Invalid configuration value or combination."""


class VariantUnsupported(DepthcodError):
    """The requested operation is not available for this model variant."""


class EmptyList(DepthcodError):
    """An aggregation was asked to reduce zero elements."""


class EmptyDataset(DepthcodError):
    """Training or evaluation requested on an empty manifest."""


class NonFiniteLoss(DepthcodError):
    """A loss component became NaN or infinite during training."""


class VersionMismatch(DepthcodError):
    """Checkpoint was written by an incompatible format version."""


class CorruptArchive(DepthcodError):
    """Checkpoint file is truncated or malformed."""
