"""Per-image feature extraction and the encode/train/evaluate glue."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .codebook import Codebook, MiniBatchConfig, minibatch_fit
from .dataset import load_image
from .descriptors import DaisyParams, DescriptorError, HogParams, daisy_grid, hog
from .encoding import encode_features

FEATURE_MODES = ("hog_only", "daisy_only", "hybrid")


@dataclass(frozen=True)
class FeatureParams:
    hog: HogParams = field(default_factory=HogParams)
    daisy: DaisyParams = field(default_factory=DaisyParams)
    # HOG is a whole-image vector, so images of different sizes need a
    # common HOG raster; None keeps the native size
    hog_image_size: tuple[int, int] | None = None

    def to_dict(self) -> dict:
        return {
            "hog": self.hog.to_dict(),
            "daisy": self.daisy.to_dict(),
            "hog_image_size": list(self.hog_image_size) if self.hog_image_size else None,
        }


@dataclass
class CorpusFeatures:
    """DAISY matrices (one per image) and stacked HOG rows, float32."""
    daisy: list[np.ndarray]
    hog: np.ndarray

    def __len__(self) -> int:
        return len(self.daisy)

    def subset(self, index) -> "CorpusFeatures":
        index = list(index)
        return CorpusFeatures([self.daisy[i] for i in index], self.hog[index])

    @property
    def image_counts(self) -> list[int]:
        return [int(d.shape[0]) for d in self.daisy]

    def stacked_daisy(self) -> np.ndarray:
        dim = self.daisy[0].shape[1] if self.daisy else 0
        if not self.daisy:
            return np.zeros((0, dim), dtype=np.float32)
        return np.concatenate(self.daisy)


def resize(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a float image to (rows, cols)."""
    if image.shape == tuple(size):
        return image
    im = Image.fromarray(np.asarray(image, dtype=np.float32))
    out = im.resize((size[1], size[0]), Image.BILINEAR)
    return np.clip(np.asarray(out, dtype=np.float64), 0.0, 1.0)


def extract_image(image: np.ndarray, params: FeatureParams):
    _, daisy = daisy_grid(image, params.daisy)
    hog_src = resize(image, params.hog_image_size) if params.hog_image_size else image
    return daisy.astype(np.float32), hog(hog_src, params.hog).astype(np.float32)


def _extract_path(args):
    path, params = args
    image = load_image(path)
    try:
        return extract_image(image, params)
    except DescriptorError as exc:
        raise DescriptorError(f"{path}: {exc}") from exc


def extract_paths(paths, params: FeatureParams, workers: int = 1) -> CorpusFeatures:
    """Extract features for every path, keeping input order."""
    paths = list(paths)
    jobs = [(p, params) for p in paths]
    workers = workers or os.cpu_count() or 1
    if workers > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_extract_path, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        out = [_extract_path(j) for j in jobs]
    if not out:
        return CorpusFeatures([], np.zeros((0, 0), dtype=np.float32))
    lengths = {h.shape[0] for _, h in out}
    if len(lengths) > 1:
        raise ValueError(
            f"HOG lengths differ across images {sorted(lengths)}; images have different "
            "sizes, set hog_image_size to give HOG a common raster"
        )
    return CorpusFeatures([d for d, _ in out], np.stack([h for _, h in out]))


def fit_codebook(features: CorpusFeatures, config: MiniBatchConfig) -> Codebook:
    """Mini-Batch K-Means over all DAISY rows, centres rounded to float32
    so the in-memory codebook equals its saved form."""
    cb = minibatch_fit(features.stacked_daisy(), config)
    return Codebook(cb.centers.astype(np.float32), cb.train_meta)


def encode(mode: str, codebook: Codebook | None, features: CorpusFeatures) -> np.ndarray:
    if mode not in FEATURE_MODES:
        raise ValueError(f"feature mode must be one of {FEATURE_MODES}")
    return encode_features(mode, codebook, features.daisy, features.hog)
