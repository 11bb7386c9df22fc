"""Bag-of-visual-words pooling and the hybrid DAISY + HOG feature."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebook import Codebook


@dataclass(frozen=True)
class BovwHistogram:
    values: np.ndarray
    normalized: bool = False

    @property
    def k(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class HybridFeature:
    values: np.ndarray
    k: int
    hog_len: int

    @property
    def daisy_part(self) -> np.ndarray:
        return self.values[: self.k]

    @property
    def hog_part(self) -> np.ndarray:
        return self.values[self.k :]


def bovw_histogram(codebook: Codebook, descriptors) -> BovwHistogram:
    """Sum-pool hard assignments: one vote per descriptor for its nearest word."""
    d = np.asarray(descriptors, dtype=np.float64)
    if d.size == 0:
        return BovwHistogram(np.zeros(codebook.k))
    if d.ndim == 1:
        d = d[None, :]
    if d.shape[1] != codebook.dim:
        raise ValueError(f"descriptor dim {d.shape[1]} != codebook dim {codebook.dim}")
    words = codebook.assign_batch(d)
    return BovwHistogram(np.bincount(words, minlength=codebook.k).astype(np.float64))


def l2_normalize(v) -> np.ndarray:
    """``v / |v|``; the zero vector is returned unchanged."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot normalise a vector with non-finite entries")
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v.copy()


def hybrid_feature(hist: BovwHistogram, hog) -> HybridFeature:
    """Concatenate the normalised word histogram with the normalised HOG vector.

    ``hog`` is a raw HOG vector, or a ``(kind, values)`` pair whose kind must
    be ``"hog"``.  The result is not renormalised, so each half keeps unit norm.
    """
    if isinstance(hog, tuple):
        kind, hog = hog
        if kind != "hog":
            raise ValueError(f"expected a hog descriptor, got kind {kind!r}")
    hog = np.asarray(hog, dtype=np.float64)
    if hog.ndim != 1:
        raise ValueError("hog descriptor must be a 1-D vector")
    values = np.concatenate([l2_normalize(hist.values), l2_normalize(hog)])
    return HybridFeature(values, hist.k, hog.shape[0])


def encode_features(mode: str, codebook: Codebook | None, daisy_sets, hog_matrix) -> np.ndarray:
    """Build the per-image feature matrix for one of the three feature modes.

    ``daisy_sets`` is a sequence of per-image DAISY matrices (ignored for
    ``hog_only``); ``hog_matrix`` holds one HOG row per image (ignored for
    ``daisy_only``).
    """
    if mode == "hog_only":
        return np.stack([l2_normalize(h) for h in hog_matrix])
    if codebook is None:
        raise ValueError(f"feature mode {mode!r} needs a codebook")
    hists = [bovw_histogram(codebook, d) for d in daisy_sets]
    if mode == "daisy_only":
        return np.stack([l2_normalize(h.values) for h in hists])
    if mode == "hybrid":
        return np.stack([hybrid_feature(h, g).values for h, g in zip(hists, hog_matrix)])
    raise ValueError(f"unknown feature mode {mode!r}")
