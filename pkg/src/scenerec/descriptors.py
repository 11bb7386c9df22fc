"""Global HOG and dense DAISY descriptors on grayscale images."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.ndimage import correlate1d


class DescriptorError(ValueError):
    """Raised when an image is too small for the requested geometry."""


@dataclass(frozen=True)
class HogParams:
    orientations: int = 9
    pixels_per_cell: tuple[int, int] = (8, 8)
    cells_per_block: tuple[int, int] = (2, 2)
    block_norm_clip: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "pixels_per_cell", tuple(int(v) for v in self.pixels_per_cell))
        object.__setattr__(self, "cells_per_block", tuple(int(v) for v in self.cells_per_block))
        if self.orientations < 2:
            raise ValueError("HOG needs at least 2 orientation bins")
        if min(self.pixels_per_cell) < 1 or min(self.cells_per_block) < 1:
            raise ValueError("cell and block dimensions must be >= 1")
        if not 0.0 < self.block_norm_clip <= 1.0:
            raise ValueError("block_norm_clip must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    def descriptor_length(self, shape: tuple[int, int]) -> int:
        """Length of the HOG vector for an image of ``shape`` (rows, cols)."""
        ncy = shape[0] // self.pixels_per_cell[0]
        ncx = shape[1] // self.pixels_per_cell[1]
        by, bx = self.cells_per_block
        if ncy < by or ncx < bx:
            return 0
        return (ncy - by + 1) * (ncx - bx + 1) * by * bx * self.orientations


@dataclass(frozen=True)
class DaisyParams:
    radius: int = 15
    rings: int = 3
    histograms_per_ring: int = 8
    orientation_bins: int = 8
    step: int = 8
    base_sigma: float = 1.6

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if min(self.rings, self.histograms_per_ring, self.orientation_bins, self.step) < 1:
            raise ValueError("rings, histograms_per_ring, orientation_bins and step must be >= 1")
        if self.base_sigma <= 0:
            raise ValueError("base_sigma must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def descriptor_length(self) -> int:
        return (self.rings * self.histograms_per_ring + 1) * self.orientation_bins

    def ring_sigmas(self) -> list[float]:
        return [self.base_sigma * (j + 1) for j in range(self.rings)]

    def sample_offsets(self) -> np.ndarray:
        """Integer (drow, dcol) offsets of every histogram, centre first.

        Ring ``j`` sits at distance ``radius * (j + 1) / rings``; offsets are
        rounded half-away-from-zero to the nearest pixel.
        """
        offs = [(0, 0)]
        for j in range(self.rings):
            r = self.radius * (j + 1) / self.rings
            for t in range(self.histograms_per_ring):
                phi = 2.0 * np.pi * t / self.histograms_per_ring
                dx, dy = r * np.cos(phi), r * np.sin(phi)
                offs.append((_round_half_away(dy), _round_half_away(dx)))
        return np.array(offs, dtype=np.int64)


def _round_half_away(v: float) -> int:
    # snap trig noise like 1e-15 before rounding so 7.5 - eps stays 8
    v = round(v, 9)
    return int(np.sign(v) * np.floor(abs(v) + 0.5))


def gradient(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Image derivatives with the [-1, 0, 1] kernel.

    Interior pixels use ``I[x+1] - I[x-1]``; the first and last pixel along
    each axis use the one-sided difference to their neighbour.  A length-1
    axis has zero derivative.  ``gx`` runs along columns, ``gy`` along rows.
    """
    img = np.asarray(image, dtype=np.float64)
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    if img.shape[1] > 1:
        gx[:, 1:-1] = img[:, 2:] - img[:, :-2]
        gx[:, 0] = img[:, 1] - img[:, 0]
        gx[:, -1] = img[:, -1] - img[:, -2]
    if img.shape[0] > 1:
        gy[1:-1, :] = img[2:, :] - img[:-2, :]
        gy[0, :] = img[1, :] - img[0, :]
        gy[-1, :] = img[-1, :] - img[-2, :]
    return gx, gy


# --------------------------------------------------------------------- HOG

def _l2_hys(block: np.ndarray, clip: float) -> np.ndarray:
    """L2-normalise the last axis, clip at ``clip`` and renormalise."""
    norm = np.linalg.norm(block, axis=-1, keepdims=True)
    out = np.divide(block, norm, out=np.zeros_like(block), where=norm > 0)
    np.minimum(out, clip, out=out)
    norm = np.linalg.norm(out, axis=-1, keepdims=True)
    return np.divide(out, norm, out=np.zeros_like(out), where=norm > 0)


def cell_histograms(image: np.ndarray, params: HogParams) -> np.ndarray:
    """Per-cell magnitude-weighted orientation histograms, shape (ncy, ncx, bins)."""
    gx, gy = gradient(image)
    cy, cx = params.pixels_per_cell
    ncy, ncx = gx.shape[0] // cy, gx.shape[1] // cx
    gx, gy = gx[: ncy * cy, : ncx * cx], gy[: ncy * cy, : ncx * cx]
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    nb = params.orientations
    bins = np.minimum((theta * (nb / np.pi)).astype(np.int64), nb - 1)
    cell_id = (np.arange(ncy * cy) // cy)[:, None] * ncx + (np.arange(ncx * cx) // cx)[None, :]
    flat = (cell_id * nb + bins).ravel()
    hist = np.bincount(flat, weights=mag.ravel(), minlength=ncy * ncx * nb)
    return hist.reshape(ncy, ncx, nb)


def hog(image: np.ndarray, params: HogParams | None = None) -> np.ndarray:
    """Whole-image HOG with hard orientation binning and L2-Hys blocks.

    Blocks are every ``cells_per_block`` window of cells at a stride of one
    cell, concatenated in row-major block order.
    """
    params = params or HogParams()
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DescriptorError("HOG expects a 2-D grayscale image")
    by, bx = params.cells_per_block
    cy, cx = params.pixels_per_cell
    if img.shape[0] < by * cy or img.shape[1] < bx * cx:
        raise DescriptorError(
            f"image {img.shape} smaller than one HOG block ({by * cy}x{bx * cx} pixels)"
        )
    cells = cell_histograms(img, params)
    ncy, ncx, nb = cells.shape
    nby, nbx = ncy - by + 1, ncx - bx + 1
    blocks = np.empty((nby, nbx, by, bx, nb))
    for i in range(by):
        for j in range(bx):
            blocks[:, :, i, j, :] = cells[i : i + nby, j : j + nbx, :]
    blocks = _l2_hys(blocks.reshape(nby, nbx, by * bx * nb), params.block_norm_clip)
    return blocks.ravel()


# ------------------------------------------------------------------- DAISY

def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalised sampled Gaussian truncated at 4 sigma."""
    radius = int(np.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth(field: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with mirror ("reflect") boundaries."""
    k = gaussian_kernel(sigma)
    out = correlate1d(field, k, axis=0, mode="reflect")
    return correlate1d(out, k, axis=1, mode="reflect")


def orientation_maps(image: np.ndarray, n_bins: int) -> np.ndarray:
    """Rectified directional derivatives, shape (n_bins, rows, cols)."""
    gx, gy = gradient(image)
    theta = 2.0 * np.pi * np.arange(n_bins) / n_bins
    maps = np.cos(theta)[:, None, None] * gx + np.sin(theta)[:, None, None] * gy
    return np.maximum(maps, 0.0)


def daisy_positions(shape: tuple[int, int], params: DaisyParams) -> np.ndarray:
    """Dense grid sample points (row, col) with a ``radius`` margin."""
    r = params.radius
    if shape[0] <= 2 * r or shape[1] <= 2 * r:
        raise DescriptorError(
            f"image {shape} too small for DAISY radius {r} (need > {2 * r} in both dims)"
        )
    rows = np.arange(r, shape[0] - r, params.step)
    cols = np.arange(r, shape[1] - r, params.step)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def daisy_grid(image: np.ndarray, params: DaisyParams | None = None):
    """Dense DAISY descriptors.

    Returns ``(positions, descriptors)``: an (n, 2) integer array of
    (row, col) sample points and an (n, (Q*T+1)*H) array.  The centre
    histogram and ring 0 read the smallest-sigma maps; ring ``j`` reads maps
    smoothed with ``base_sigma * (j + 1)``.  Each H-bin histogram is
    L2-normalised on its own.
    """
    params = params or DaisyParams()
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DescriptorError("DAISY expects a 2-D grayscale image")
    pos = daisy_positions(img.shape, params)
    maps = orientation_maps(img, params.orientation_bins)
    smoothed = [np.stack([smooth(m, s) for m in maps]) for s in params.ring_sigmas()]
    offsets = params.sample_offsets()
    T, H = params.histograms_per_ring, params.orientation_bins
    hists = np.empty((pos.shape[0], offsets.shape[0], H))
    for h, (dy, dx) in enumerate(offsets):
        level = 0 if h == 0 else (h - 1) // T
        layer = smoothed[level]
        hists[:, h, :] = layer[:, pos[:, 0] + dy, pos[:, 1] + dx].T
    norm = np.linalg.norm(hists, axis=-1, keepdims=True)
    hists = np.divide(hists, norm, out=np.zeros_like(hists), where=norm > 0)
    return pos, hists.reshape(pos.shape[0], -1)
