"""Synthetic data: oriented-texture image corpora and clustered descriptors."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import write_pgm

DEFAULT_ORIENTATIONS = (0.0, 60.0, 120.0)


def oriented_texture(size: tuple[int, int], angle_deg: float, rng, noise: float = 0.05) -> np.ndarray:
    """Sinusoidal grating at ``angle_deg`` with random frequency and phase."""
    rows, cols = size
    yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    theta = np.deg2rad(angle_deg + rng.uniform(-8.0, 8.0))
    freq = rng.uniform(1 / 14, 1 / 6)
    phase = rng.uniform(0, 2 * np.pi)
    contrast = rng.uniform(0.2, 0.35)
    img = 0.5 + contrast * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    img += noise * rng.standard_normal(size)
    return np.clip(img, 0.0, 1.0)


def write_texture_corpus(root, per_class: int = 30, size: tuple[int, int] = (96, 96),
                         orientations=DEFAULT_ORIENTATIONS, seed: int = 0) -> Path:
    """Write a class-per-directory PGM corpus, one class per grating angle."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for angle in orientations:
        d = root / f"angle_{int(round(angle)):03d}"
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            write_pgm(d / f"img_{i:03d}.pgm", oriented_texture(size, angle, rng))
    return root


def clustered_descriptors(n: int, dim: int = 200, prototypes: int = 1000, noise: float = 0.15,
                          seed: int = 0, dtype=np.float32) -> np.ndarray:
    """``n`` rows drawn around ``prototypes`` uniform-random centres with
    isotropic Gaussian noise."""
    rng = np.random.default_rng(seed)
    protos = rng.random((prototypes, dim), dtype=np.float32)
    out = np.empty((n, dim), dtype=dtype)
    for start in range(0, n, 200_000):
        m = min(200_000, n - start)
        block = protos[rng.integers(0, prototypes, m)]
        block += noise * rng.standard_normal((m, dim), dtype=np.float32)
        out[start : start + m] = block
    return out
