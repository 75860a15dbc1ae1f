import numpy as np
import pytest
import torch
from PIL import Image

from depthcod.training import TrainConfig


def make_toy_dataset(root, n=10, size=64, seed=0):
    """Synthetic camouflage-style triplets: a textured rectangle whose mask
    and (inverse) depth follow it, over a textured background."""
    rng = np.random.default_rng(seed)
    for sub in ("Images", "Depth", "GT"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i in range(n):
        h = int(rng.integers(size // 4, size // 2))
        w = int(rng.integers(size // 4, size // 2))
        top = int(rng.integers(1, size - h - 1))
        left = int(rng.integers(1, size - w - 1))

        mask = np.zeros((size, size), dtype=np.uint8)
        mask[top:top + h, left:left + w] = 255

        base = rng.integers(40, 90)
        image = rng.normal(base, 12, size=(size, size, 3))
        color = rng.integers(150, 230, size=3)
        image[top:top + h, left:left + w] = color + rng.normal(0, 8, size=(h, w, 3))
        image = np.clip(image, 0, 255).astype(np.uint8)

        depth = rng.normal(60, 10, size=(size, size))
        depth[top:top + h, left:left + w] += 120
        depth = np.clip(depth, 0, 255).astype(np.uint8)

        stem = f"toy_{i:03d}"
        Image.fromarray(image).save(root / "Images" / f"{stem}.png")
        Image.fromarray(depth, mode="L").save(root / "Depth" / f"{stem}.png")
        Image.fromarray(mask, mode="L").save(root / "GT" / f"{stem}.png")
    return root


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toyset")
    return make_toy_dataset(root, n=10, size=64, seed=0)


def tiny_config(data_root, out_dir, **overrides) -> TrainConfig:
    defaults = dict(
        variant="full",
        image_size=64,
        batch_size=5,
        epochs=2,
        lr_gen=1e-3,
        lr_dis=1e-3,
        seed=0,
        backbone="tiny",
        data_root=str(data_root),
        out_dir=str(out_dir),
        hflip=False,
        cache_samples=True,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture
def rng64():
    return torch.Generator().manual_seed(64)
