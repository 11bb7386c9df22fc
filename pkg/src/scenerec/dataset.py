"""Image loading, corpus scanning and reproducible train/test splits.

Images are handled as 2-D ``float64`` numpy arrays (rows x columns) with
values in ``[0, 1]``.  Colour inputs are reduced to luminance with the
BT.601 weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

IMAGE_SUFFIXES = (".pgm", ".png", ".jpg", ".jpeg")
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class ImageFormatError(ValueError):
    """Raised when a file exists but cannot be decoded as an image."""


class CorpusError(ValueError):
    """Raised for a malformed class-per-directory corpus."""


class SplitError(ValueError):
    """Raised when a corpus cannot be split as requested."""


def as_gray_image(pixels) -> np.ndarray:
    """Validate and return ``pixels`` as a float64 grayscale image."""
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image pixels must be finite and lie in [0, 1]")
    return img


# --------------------------------------------------------------------- PGM

def _pgm_tokens(data: bytes, count: int, pos: int = 2):
    """Read ``count`` whitespace separated header tokens, skipping comments."""
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def _decode_pgm(data: bytes, path) -> np.ndarray:
    magic = data[:2]
    try:
        (w, h, maxval), pos = _pgm_tokens(data, 3)
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: bad PGM header") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: bad PGM header values")
    if magic == b"P5":
        pos += 1  # exactly one whitespace byte precedes the raster
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        nbytes = width * height * dtype.itemsize
        raster = data[pos : pos + nbytes]
        if len(raster) != nbytes:
            raise ImageFormatError(f"{path}: truncated PGM raster")
        values = np.frombuffer(raster, dtype=dtype).astype(np.float64)
    else:
        try:
            values = np.array(data[pos:].split()[: width * height], dtype=np.float64)
        except ValueError as exc:
            raise ImageFormatError(f"{path}: bad P2 raster") from exc
        if values.size != width * height:
            raise ImageFormatError(f"{path}: truncated PGM raster")
    values = values.reshape(height, width)
    if values.max() > maxval:
        raise ImageFormatError(f"{path}: sample exceeds maxval {maxval}")
    return values / maxval


def write_pgm(path, image) -> None:
    """Write ``image`` (values in [0, 1]) as an 8-bit binary PGM (P5)."""
    img = as_gray_image(image)
    raster = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(raster.tobytes())


# ------------------------------------------------------------------ images

def load_image(path) -> np.ndarray:
    """Load an image file as a grayscale float image in ``[0, 1]``.

    PGM (P2/P5) is decoded directly; PNG and JPEG go through Pillow.  RGB is
    converted with Y = 0.299 R + 0.587 G + 0.114 B before scaling.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] in (b"P2", b"P5"):
        return _decode_pgm(data, path)
    try:
        with Image.open(path) as im:
            im.load()
            return _pil_to_gray(im)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc


def _pil_to_gray(im: Image.Image) -> np.ndarray:
    mode = im.mode
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(im, dtype=np.float64)
        return np.clip(arr / 65535.0, 0.0, 1.0)
    if mode == "F":
        return np.clip(np.asarray(im, dtype=np.float64), 0.0, 1.0)
    if mode not in ("L", "RGB"):
        im = im.convert("RGBA" if "A" in mode or mode == "P" else "RGB")
        if im.mode == "RGBA":
            im = im.convert("RGB")
    arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 3:
        arr = arr[..., :3] @ LUMA_WEIGHTS
    return np.clip(arr, 0.0, 1.0)


# ------------------------------------------------------------------ corpus

@dataclass(frozen=True)
class LabeledCorpus:
    classes: tuple[str, ...]
    items: tuple[tuple[str, int], ...]

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes) or not all(self.classes):
            raise CorpusError("class names must be unique and non-empty")
        for p, label in self.items:
            if not 0 <= label < len(self.classes):
                raise CorpusError(f"class index {label} out of range for {p}")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def paths(self) -> list[str]:
        return [p for p, _ in self.items]

    @property
    def labels(self) -> np.ndarray:
        return np.array([c for _, c in self.items], dtype=np.int64)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.4
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def scan_corpus(root) -> LabeledCorpus:
    """Enumerate ``<root>/<class>/<image>`` files, classes sorted by name."""
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"{root}: corpus root is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise CorpusError(f"{root}: no class directories found")
    items = []
    for label, d in enumerate(class_dirs):
        files = sorted(
            f for f in d.iterdir() if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES
        )
        if not files:
            raise CorpusError(f"{d}: class directory contains no images")
        items.extend((str(f), label) for f in files)
    return LabeledCorpus(tuple(d.name for d in class_dirs), tuple(items))


def _n_train(n: int, fraction: float) -> int:
    # guard against 0.29 * 100 == 28.999999999999996
    k = math.floor(fraction * n + 1e-9)
    return min(max(k, 1), n - 1)


def split(corpus: LabeledCorpus, spec: SplitSpec) -> tuple[LabeledCorpus, LabeledCorpus]:
    """Partition a corpus into train and test parts.

    Stratified splits draw ``floor(train_fraction * n_c)`` (at least one)
    items of every class for training.  Both parts keep corpus order.
    """
    labels = corpus.labels
    rng = np.random.default_rng(spec.seed)
    in_train = np.zeros(len(corpus), dtype=bool)
    if spec.stratified:
        for c, name in enumerate(corpus.classes):
            idx = np.flatnonzero(labels == c)
            if idx.size < 2:
                raise SplitError(f"class {name!r} has {idx.size} item(s); need at least 2")
            chosen = rng.permutation(idx)[: _n_train(idx.size, spec.train_fraction)]
            in_train[chosen] = True
    else:
        if len(corpus) < 2:
            raise SplitError("need at least 2 items to split")
        chosen = rng.permutation(len(corpus))[: _n_train(len(corpus), spec.train_fraction)]
        in_train[chosen] = True
    train = tuple(it for it, t in zip(corpus.items, in_train) if t)
    test = tuple(it for it, t in zip(corpus.items, in_train) if not t)
    return LabeledCorpus(corpus.classes, train), LabeledCorpus(corpus.classes, test)


# --------------------------------------------------------------- manifests

def save_manifest(path, spec: SplitSpec, train: LabeledCorpus, test: LabeledCorpus) -> None:
    doc = {
        "seed": spec.seed,
        "train_fraction": spec.train_fraction,
        "stratified": spec.stratified,
        "classes": list(train.classes),
        "train": train.paths,
        "test": test.paths,
        "train_labels": train.labels.tolist(),
        "test_labels": test.labels.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_manifest(path) -> tuple[SplitSpec, LabeledCorpus, LabeledCorpus]:
    with open(path) as fh:
        doc = json.load(fh)
    spec = SplitSpec(doc["train_fraction"], doc["seed"], doc.get("stratified", True))
    classes = tuple(doc["classes"])
    train = LabeledCorpus(classes, tuple(zip(doc["train"], doc["train_labels"])))
    test = LabeledCorpus(classes, tuple(zip(doc["test"], doc["test_labels"])))
    return spec, train, test


def merge(parts: Sequence[LabeledCorpus]) -> LabeledCorpus:
    """Recombine disjoint parts of one corpus, restoring path order."""
    classes = parts[0].classes
    items = sorted((it for p in parts for it in p.items), key=lambda it: (it[1], it[0]))
    return LabeledCorpus(classes, tuple(items))

