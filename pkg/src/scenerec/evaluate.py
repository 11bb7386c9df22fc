"""Evaluation metrics, the vocabulary-size sweep and the RBF grid search."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .codebook import MiniBatchConfig
from .dataset import split
from .pipeline import FeatureParams, encode, extract_paths, fit_codebook
from .svm import KernelCache, KernelSpec, SvmModel, ovr_train

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    classes: tuple[str, ...]
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.total)

    @property
    def macro_precision(self) -> float:
        return float(self.precision.mean())

    @property
    def macro_recall(self) -> float:
        return float(self.recall.mean())

    @property
    def macro_f1(self) -> float:
        return float(self.f1.mean())

    def weighted(self, values: np.ndarray) -> float:
        return float((values * self.support).sum() / self.support.sum())

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "accuracy": self.accuracy,
            "total": self.total,
            "confusion": self.confusion.tolist(),
            "per_class": {
                name: {
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                    "support": int(self.support[i]),
                }
                for i, name in enumerate(self.classes)
            },
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "weighted_precision": self.weighted(self.precision),
            "weighted_recall": self.weighted(self.recall),
            "weighted_f1": self.weighted(self.f1),
            "meta": self.meta,
        }


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def report_from_predictions(y_true, y_pred, classes, meta: dict | None = None) -> EvalReport:
    """Confusion matrix (rows = true class) and per-class P/R/F1."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    n = len(classes)
    if y_true.size == 0:
        raise ValueError("cannot evaluate an empty set")
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    for name, arr in (("true", y_true), ("predicted", y_pred)):
        if arr.min() < 0 or arr.max() >= n:
            raise ValueError(f"unknown {name} class index outside [0, {n})")
    confusion = np.bincount(y_true * n + y_pred, minlength=n * n).reshape(n, n)
    tp = np.diag(confusion).astype(np.float64)
    precision = _safe_ratio(tp, confusion.sum(axis=0).astype(np.float64))
    recall = _safe_ratio(tp, confusion.sum(axis=1).astype(np.float64))
    f1 = _safe_ratio(2 * precision * recall, precision + recall)
    return EvalReport(tuple(classes), confusion, precision, recall, f1,
                      confusion.sum(axis=1), dict(meta or {}))


def evaluate_model(model: SvmModel, features, labels, meta: dict | None = None) -> EvalReport:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] != labels.shape[0]:
        raise ValueError("features and labels differ in length")
    if labels.size and (labels.min() < 0 or labels.max() >= len(model.classes)):
        raise ValueError("label index not among the model's classes")
    pred = model.predict(features)
    return report_from_predictions(labels, pred, model.classes, meta)


def write_report_json(path, report: EvalReport) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")


def write_confusion_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true/predicted", *report.classes])
        for name, row in zip(report.classes, report.confusion):
            w.writerow([name, *row.tolist()])


def read_confusion_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    classes = rows[0][1:]
    return classes, np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)


# ------------------------------------------------------------ grid search

@dataclass
class GridSearchResult:
    grid: list[tuple[float, float, float]]
    best: tuple[float, float, float]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["logC", "logGamma", "accuracy"])
            for lc, lg, acc in self.grid:
                w.writerow([f"{lc:.6g}", f"{lg:.6g}", f"{acc:.6f}"])

    def to_dict(self) -> dict:
        return {
            "best": {"logC": self.best[0], "logGamma": self.best[1], "accuracy": self.best[2]},
            "grid": [{"logC": a, "logGamma": b, "accuracy": c} for a, b, c in self.grid],
        }


def log_grid(lo: float, hi: float, step: float) -> list[float]:
    """Points ``lo, lo + step, ...`` up to ``hi`` inclusive (log10 units)."""
    if hi < lo:
        raise ValueError(f"empty range [{lo}, {hi}]")
    if step <= 0:
        raise ValueError("grid step must be positive")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 10) for i in range(n)]


def _best(grid):
    # highest accuracy, then lexicographically smallest (logC, logGamma)
    return min(grid, key=lambda r: (-r[2], r[0], r[1]))


def grid_search(train_x, train_y, val_x, val_y, classes,
                logc_range=(-3.0, 3.0), loggamma_range=(-3.0, 2.0), step: float = 0.5,
                refine: bool = False, tol: float = 1e-3, max_passes: int = 100) -> GridSearchResult:
    """Train an RBF one-vs-rest model per (log10 C, log10 gamma) and score it
    on the validation rows.

    With ``refine`` a 5 x 5 grid at spacing ``step / 4`` is centred on the
    best coarse point; points outside the ranges or already visited are
    skipped.  Each gamma's Gram matrix is computed once and shared by all C.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    val_x = np.asarray(val_x, dtype=np.float64)
    val_y = np.asarray(val_y, dtype=np.int64)
    log_cs = log_grid(*logc_range, step)
    log_gs = log_grid(*loggamma_range, step)
    results: dict[tuple[float, float], float] = {}

    def run(points):
        by_gamma: dict[float, list[float]] = {}
        for lc, lg in points:
            by_gamma.setdefault(lg, []).append(lc)
        for lg, cs in by_gamma.items():
            kernel = KernelSpec("rbf", 10.0 ** lg)
            cache = KernelCache(train_x, kernel)
            for lc in cs:
                try:
                    model = ovr_train(train_x, train_y, classes, 10.0 ** lc, kernel,
                                      tol=tol, max_passes=max_passes, cache=cache)
                except Exception as exc:
                    raise RuntimeError(f"grid point logC={lc}, logGamma={lg}: {exc}") from exc
                acc = float(np.mean(model.predict(val_x) == val_y))
                results[(lc, lg)] = acc
                log.info("grid logC=%.3f logGamma=%.3f acc=%.4f", lc, lg, acc)

    run([(lc, lg) for lc in log_cs for lg in log_gs])
    if refine:
        blc, blg, _ = _best([(a, b, v) for (a, b), v in results.items()])
        fine = step / 4.0
        pts = []
        for i in range(-2, 3):
            for j in range(-2, 3):
                lc, lg = round(blc + i * fine, 10), round(blg + j * fine, 10)
                inside = (logc_range[0] - 1e-9 <= lc <= logc_range[1] + 1e-9
                          and loggamma_range[0] - 1e-9 <= lg <= loggamma_range[1] + 1e-9)
                if inside and (lc, lg) not in results:
                    pts.append((lc, lg))
        run(pts)
    grid = sorted((lc, lg, acc) for (lc, lg), acc in results.items())
    best = _best(grid)
    assert all(best[2] >= g[2] for g in grid)
    return GridSearchResult(grid, best)


# ---------------------------------------------------------------- K sweep

@dataclass
class SweepRow:
    k: int
    mean_accuracy: float
    accuracies: list[float]
    fit_seconds: list[float]


def k_sweep(corpus, split_spec, k_values, repeats: int = 3, *, feature_params=None,
            minibatch=None, c: float = 1.0, svm_tol: float = 1e-3, mode: str = "hybrid",
            features=None, workers: int = 1) -> list[SweepRow]:
    """Mean linear-SVM test accuracy per vocabulary size.

    Run ``r`` uses split seed ``split_spec.seed + r`` and the same seed for
    the codebook.  ``features`` may hold precomputed per-image features in
    corpus order; otherwise they are extracted once here.
    """
    k_values = list(k_values)
    if not k_values:
        raise ValueError("k_values must be non-empty")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    minibatch = minibatch or MiniBatchConfig()
    if features is None:
        features = extract_paths(corpus.paths, feature_params or FeatureParams(), workers)
    index = {p: i for i, p in enumerate(corpus.paths)}
    runs = []
    for r in range(repeats):
        spec = replace(split_spec, seed=split_spec.seed + r)
        train, test = split(corpus, spec)
        runs.append((spec.seed, train, test))
    rows = []
    for k in k_values:
        accs, secs = [], []
        for seed, train, test in runs:
            tr = features.subset(index[p] for p in train.paths)
            te = features.subset(index[p] for p in test.paths)
            try:
                t0 = time.perf_counter()
                cb = fit_codebook(tr, replace(minibatch, k=k, seed=seed))
                secs.append(time.perf_counter() - t0)
                model = ovr_train(encode(mode, cb, tr), train.labels, corpus.classes, c,
                                  KernelSpec("linear"), tol=svm_tol)
                rep = evaluate_model(model, encode(mode, cb, te), test.labels)
            except Exception as exc:
                raise RuntimeError(f"K={k}, seed={seed}: {exc}") from exc
            accs.append(rep.accuracy)
            log.info("K=%d seed=%d accuracy=%.4f", k, seed, rep.accuracy)
        rows.append(SweepRow(k, float(np.mean(accs)), accs, secs))
    return rows
