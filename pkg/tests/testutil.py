"""Shared helpers for the test suite."""

from pathlib import Path

import numpy as np

DATA = Path(__file__).parent / "data"


def smooth_image(seed: int, side: int = 64, channels: int = 3, lo: float = 0.1, hi: float = 0.9):
    """Seeded smooth test image: low-frequency noise upsampled bilinearly."""
    from otre.imagekit import _bilinear_axis

    rng = np.random.default_rng(seed)
    coarse = rng.uniform(lo, hi, (channels, 4, 4))
    img = _bilinear_axis(coarse, side, axis=1)
    img = _bilinear_axis(img, side, axis=2)
    return np.clip(img, 0.0, 1.0)
