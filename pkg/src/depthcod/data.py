"""Dataset ingestion for (image, inverse-depth, mask) triplets.

Expected directory layout::

    root/
      Images/   RGB images (png/jpg/jpeg)
      Depth/    single-channel inverse-depth maps (nearer = brighter)
      GT/       binary masks

File stems must match across the three subdirectories.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import DecodeError, MissingDirectory, StemMismatch

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")

# Default per-channel standardization constants for RGB input (the usual
# ImageNet statistics); callers may override both via load_sample.
DEFAULT_MEAN = (0.485, 0.456, 0.406)
DEFAULT_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class ManifestEntry:
    stem: str
    image_path: Path
    depth_path: Path
    mask_path: Path


@dataclass(frozen=True)
class DatasetManifest:
    """Validated, lexicographically ordered index of a dataset root."""

    root: Path
    entries: tuple

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, index) -> ManifestEntry:
        return self.entries[index]

    def __iter__(self):
        return iter(self.entries)


@dataclass
class Sample:
    """One aligned triplet at a common square resolution.

    image: [3, S, S] standardized reals; depth: [1, S, S] in [0, 1];
    mask: [1, S, S] with values exactly 0 or 1.
    """

    image: torch.Tensor
    depth: torch.Tensor
    mask: torch.Tensor
    stem: str


@dataclass
class Batch:
    image: torch.Tensor
    depth: torch.Tensor
    mask: torch.Tensor
    stems: list

    def __len__(self):
        return self.image.shape[0]


def _scan_stems(directory: Path) -> dict:
    found = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() in IMAGE_EXTENSIONS and path.stem not in found:
            found[path.stem] = path
    return found


def load_manifest(root) -> DatasetManifest:
    """Index a dataset root, pairing files across Images/, Depth/ and GT/."""
    root = Path(root)
    dirs = {}
    for name in ("Images", "Depth", "GT"):
        sub = root / name
        if not sub.is_dir():
            raise MissingDirectory(f"{sub} does not exist")
        dirs[name] = _scan_stems(sub)

    images, depths, masks = dirs["Images"], dirs["Depth"], dirs["GT"]
    missing_depth = [s for s in images if s not in depths]
    missing_mask = [s for s in images if s not in masks]
    if missing_depth or missing_mask:
        raise StemMismatch(missing_depth, missing_mask)

    entries = tuple(
        ManifestEntry(stem, images[stem], depths[stem], masks[stem])
        for stem in sorted(images)
    )
    return DatasetManifest(root=root, entries=entries)


def _open_image(path: Path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
        return img
    except Exception as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc


def load_image_tensor(path, size: int, mean=DEFAULT_MEAN, std=DEFAULT_STD) -> torch.Tensor:
    """RGB image bilinearly resized to size x size and standardized per channel."""
    img = _open_image(path).convert("RGB")
    img = img.resize((size, size), Image.Resampling.BILINEAR)
    image = np.asarray(img, dtype=np.float32) / 255.0
    image = (image - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return torch.from_numpy(image.transpose(2, 0, 1).copy())


def load_depth_tensor(path, size: int) -> torch.Tensor:
    """Depth map bilinearly resized then min-max normalized to [0, 1].

    Constant maps degenerate to all zeros (warned, not fatal)."""
    dep = _open_image(path)
    if dep.mode not in ("L", "I", "I;16", "F"):
        dep = dep.convert("L")
    dep = dep.resize((size, size), Image.Resampling.BILINEAR)
    depth = np.asarray(dep, dtype=np.float32)
    lo, hi = float(depth.min()), float(depth.max())
    if hi > lo:
        depth = (depth - lo) / (hi - lo)
    else:
        log.warning("constant depth map %s; using all zeros", path)
        depth = np.zeros_like(depth)
    return torch.from_numpy(depth).unsqueeze(0)


def load_mask_tensor(path, size: int) -> torch.Tensor:
    """Mask nearest-neighbor resized and binarized at 0.5 to exact {0, 1}."""
    msk = _open_image(path).convert("L")
    msk = msk.resize((size, size), Image.Resampling.NEAREST)
    mask = (np.asarray(msk, dtype=np.float32) / 255.0 >= 0.5).astype(np.float32)
    return torch.from_numpy(mask).unsqueeze(0)


def load_sample(manifest: DatasetManifest, index: int, size: int,
                mean=DEFAULT_MEAN, std=DEFAULT_STD) -> Sample:
    """Load one triplet resized to size x size."""
    entry = manifest[index]
    return Sample(
        image=load_image_tensor(entry.image_path, size, mean, std),
        depth=load_depth_tensor(entry.depth_path, size),
        mask=load_mask_tensor(entry.mask_path, size),
        stem=entry.stem,
    )


def augment(sample: Sample, rng: torch.Generator) -> Sample:
    """Horizontal flip of all three tensors together with probability 0.5."""
    if torch.rand((), generator=rng).item() < 0.5:
        return Sample(
            image=torch.flip(sample.image, dims=(-1,)),
            depth=torch.flip(sample.depth, dims=(-1,)),
            mask=torch.flip(sample.mask, dims=(-1,)),
            stem=sample.stem,
        )
    return sample


def collate(samples) -> Batch:
    return Batch(
        image=torch.stack([s.image for s in samples]),
        depth=torch.stack([s.depth for s in samples]),
        mask=torch.stack([s.mask for s in samples]),
        stems=[s.stem for s in samples],
    )


def import_external_depth(src_dir, dst_dir) -> int:
    """Convert externally generated depth maps into the dataset format.

    Each readable file becomes a single-channel 8-bit grayscale PNG spanning
    [0, 255] after per-file min-max normalization, written under the same
    stem. Unreadable files are skipped and logged. Returns the number
    converted.
    """
    src_dir, dst_dir = Path(src_dir), Path(dst_dir)
    dst_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for path in sorted(src_dir.iterdir()):
        if path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        try:
            img = _open_image(path)
        except DecodeError as exc:
            log.warning("skipping %s: %s", path.name, exc)
            continue
        if img.mode not in ("L", "I", "I;16", "F"):
            img = img.convert("L")
        arr = np.asarray(img, dtype=np.float64)
        lo, hi = arr.min(), arr.max()
        if hi > lo:
            arr = (arr - lo) / (hi - lo) * 255.0
        else:
            arr = np.zeros_like(arr)
        out = Image.fromarray(np.round(arr).astype(np.uint8), mode="L")
        out.save(dst_dir / f"{path.stem}.png")
        count += 1
    return count
