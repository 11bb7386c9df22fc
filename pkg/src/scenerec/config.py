"""Pipeline configuration: one TOML document, overridable from the CLI."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, replace

from .codebook import MiniBatchConfig
from .dataset import SplitSpec
from .descriptors import DaisyParams, HogParams
from .pipeline import FEATURE_MODES, FeatureParams
from .svm import KernelSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_SWEEP_KS = (100, 200, 300, 400, 500, 600, 700, 800, 900, 1000)


@dataclass(frozen=True)
class GridConfig:
    logc: tuple[float, float] = (-3.0, 3.0)
    loggamma: tuple[float, float] = (-3.0, 2.0)
    step: float = 0.5
    refine: bool = True
    validation_fraction: float = 0.25


@dataclass(frozen=True)
class PipelineConfig:
    dataset_root: str | None = None
    output_dir: str = "run"
    seed: int = 0
    feature_mode: str = "hybrid"
    workers: int = 0
    split: SplitSpec = field(default_factory=SplitSpec)
    features: FeatureParams = field(default_factory=FeatureParams)
    kmeans: MiniBatchConfig = field(default_factory=MiniBatchConfig)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    c: float = 1.0
    svm_tol: float = 1e-3
    grid: GridConfig = field(default_factory=GridConfig)
    k_values: tuple[int, ...] = DEFAULT_SWEEP_KS
    repeats: int = 3

    def __post_init__(self):
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"feature_mode must be one of {FEATURE_MODES}")
        if self.c <= 0 or self.svm_tol <= 0:
            raise ValueError("c and svm_tol must be positive")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not 0 < self.grid.validation_fraction < 1:
            raise ValueError("grid validation_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "dataset_root": self.dataset_root,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "feature_mode": self.feature_mode,
            "workers": self.workers,
            "split": asdict(self.split),
            "features": self.features.to_dict(),
            "kmeans": asdict(self.kmeans),
            "svm": {"kernel": self.kernel.kind, "gamma": self.kernel.gamma, "c": self.c,
                    "tol": self.svm_tol},
            "grid": asdict(self.grid),
            "k_values": list(self.k_values),
            "repeats": self.repeats,
        }


def _pair(v):
    return None if v is None else tuple(v)


def from_mapping(doc: dict) -> PipelineConfig:
    """Build a config from the TOML layout (top-level keys plus tables
    ``split``, ``hog``, ``daisy``, ``kmeans``, ``svm``, ``grid``, ``sweep``)."""
    known = {"dataset_root", "output_dir", "seed", "feature_mode", "workers",
             "split", "hog", "daisy", "kmeans", "svm", "grid", "sweep"}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    seed = int(doc.get("seed", 0))
    split = dict(doc.get("split", {}))
    split.setdefault("seed", seed)
    hog = dict(doc.get("hog", {}))
    hog_size = _pair(hog.pop("image_size", None))
    for key in ("pixels_per_cell", "cells_per_block"):
        if key in hog:
            hog[key] = tuple(hog[key])
    kmeans = dict(doc.get("kmeans", {}))
    kmeans.setdefault("seed", seed)
    svm = dict(doc.get("svm", {}))
    grid = dict(doc.get("grid", {}))
    for key in ("logc", "loggamma"):
        if key in grid:
            grid[key] = tuple(grid[key])
    sweep = dict(doc.get("sweep", {}))
    kw = {k: doc[k] for k in ("dataset_root", "output_dir", "feature_mode", "workers") if k in doc}
    return PipelineConfig(
        seed=seed,
        split=SplitSpec(**split),
        features=FeatureParams(HogParams(**hog), DaisyParams(**doc.get("daisy", {})), hog_size),
        kmeans=MiniBatchConfig(**kmeans),
        kernel=KernelSpec(svm.get("kernel", "linear"), svm.get("gamma")),
        c=float(svm.get("c", 1.0)),
        svm_tol=float(svm.get("tol", 1e-3)),
        grid=GridConfig(**grid),
        k_values=tuple(int(k) for k in sweep.get("k_values", DEFAULT_SWEEP_KS)),
        repeats=int(sweep.get("repeats", 3)),
        **kw,
    )


def features_from_dict(d: dict) -> FeatureParams:
    """Inverse of :meth:`FeatureParams.to_dict`."""
    hog = dict(d["hog"])
    for key in ("pixels_per_cell", "cells_per_block"):
        hog[key] = tuple(hog[key])
    return FeatureParams(HogParams(**hog), DaisyParams(**d["daisy"]), _pair(d.get("hog_image_size")))


def load_config(path) -> PipelineConfig:
    with open(path, "rb") as fh:
        return from_mapping(tomllib.load(fh))


def with_overrides(cfg: PipelineConfig, **flags) -> PipelineConfig:
    """Apply CLI overrides; ``None`` means "not given"."""
    f = {k: v for k, v in flags.items() if v is not None}
    top = {k: f[k] for k in ("dataset_root", "output_dir", "feature_mode", "workers", "c",
                             "svm_tol", "repeats", "k_values") if k in f}
    split, kmeans = cfg.split, cfg.kmeans
    if "seed" in f:
        top["seed"] = f["seed"]
        split = replace(split, seed=f["seed"])
        kmeans = replace(kmeans, seed=f["seed"])
    split_kw = {k: f[k] for k in ("train_fraction", "stratified") if k in f}
    hog_kw = {dst: f[src] for src, dst in (("hog_orientations", "orientations"),
                                            ("hog_cell", "pixels_per_cell"),
                                            ("hog_block", "cells_per_block")) if src in f}
    daisy_kw = {dst: f[src] for src, dst in (("daisy_radius", "radius"), ("daisy_rings", "rings"),
                                              ("daisy_histograms", "histograms_per_ring"),
                                              ("daisy_orientations", "orientation_bins"),
                                              ("daisy_step", "step"),
                                              ("daisy_sigma", "base_sigma")) if src in f}
    km_kw = {dst: f[src] for src, dst in (("k", "k"), ("batch_size", "batch_size"),
                                           ("max_iters", "max_iterations"),
                                           ("tol", "shift_tolerance")) if src in f}
    features = cfg.features
    if hog_kw or daisy_kw or "hog_image_size" in f:
        features = FeatureParams(
            replace(features.hog, **hog_kw),
            replace(features.daisy, **daisy_kw),
            f.get("hog_image_size", features.hog_image_size),
        )
    kernel = cfg.kernel
    if "kernel" in f or "gamma" in f:
        kind = f.get("kernel", kernel.kind)
        gamma = f.get("gamma", kernel.gamma)
        kernel = KernelSpec(kind, gamma if kind == "rbf" else None)
    grid_kw = {dst: f[src] for src, dst in (("grid_logc", "logc"), ("grid_loggamma", "loggamma"),
                                             ("grid_step", "step"), ("refine", "refine")) if src in f}
    return replace(
        cfg,
        split=replace(split, **split_kw),
        features=features,
        kmeans=replace(kmeans, **km_kw),
        kernel=kernel,
        grid=replace(cfg.grid, **grid_kw),
        **top,
    )
