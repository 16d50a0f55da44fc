"""Synthetic training pairs built with the bicubic degradation."""

from __future__ import annotations

import numpy as np

from .imaging import ImagePlane, augment, bicubic_resize


def smooth_image(size: int, rng: np.random.Generator, waves: int = 4) -> np.ndarray:
    """Random band-limited RGB image in [0.1, 0.9]: a sum of low-frequency plane waves."""
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img = np.zeros((size, size, 3))
    for c in range(3):
        for _ in range(waves):
            fy, fx = rng.uniform(-2.5, 2.5, 2) / size
            phase = rng.uniform(0, 2 * np.pi)
            img[:, :, c] += rng.uniform(0.5, 1.0) * np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
    lo, hi = img.min(), img.max()
    return 0.1 + 0.8 * (img - lo) / (hi - lo)


def degrade(hr: np.ndarray, scale: int) -> np.ndarray:
    h, w = hr.shape[:2]
    return bicubic_resize(ImagePlane(hr, "RGB", 1.0), h // scale, w // scale).data


def synthetic_pairs(n: int, lr_size: int = 16, scale: int = 2, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """``n`` fixed (LR, HR) pairs; LR is the bicubic downscale of HR."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        hr = smooth_image(lr_size * scale, rng)
        pairs.append((degrade(hr, scale), hr))
    return pairs


def random_augmented(pairs, rng: np.random.Generator):
    """Apply one random dihedral transform to every pair."""
    return [augment(p, bool(rng.integers(2)), int(rng.integers(4))) for p in pairs]
