from __future__ import annotations

import numpy as np
import pytest

from dronewatch.augment import ForegroundAsset
from dronewatch.imaging import ImageBuffer


def gradient_background(width: int = 320, height: int = 240, seed: int = 0) -> ImageBuffer:
    """Smooth background: enough structure for alignment, no NCC decoys."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width]
    base = 90 + 60 * np.sin(xs / 97.0) + 50 * np.cos(ys / 71.0)
    px = np.stack([base + 10, base, base - 10], axis=2)
    px += rng.normal(0, 1.5, px.shape)
    return ImageBuffer(np.clip(px, 0, 255).astype(np.uint8))


def blocky_sprite(size: int = 40, seed: int = 3) -> ForegroundAsset:
    """Fully opaque high-contrast sprite; textured so residuals stay solid."""
    rng = np.random.default_rng(seed)
    blocks = rng.integers(0, 256, (size // 4, size // 4, 3))
    rgb = np.kron(blocks, np.ones((4, 4, 1))).astype(np.uint8)
    px = np.dstack([rgb, np.full((size, size), 255, np.uint8)])
    return ForegroundAsset(ImageBuffer(px), source_id=f"sprite{seed}")


def flat_image(width: int, height: int, value=(0, 0, 0)) -> ImageBuffer:
    px = np.empty((height, width, 3), np.uint8)
    px[:] = value
    return ImageBuffer(px)


@pytest.fixture
def background() -> ImageBuffer:
    return gradient_background()


@pytest.fixture
def sprite() -> ForegroundAsset:
    return blocky_sprite()
