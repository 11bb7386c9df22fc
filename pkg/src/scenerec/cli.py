"""Command-line entry point.

Stages talk through files in the output directory::

    extract      manifest.json, {daisy,hog}_{train,test}.skdesc, labels_{train,test}.json
    train        codebook.skcbk (not in hog_only mode), model.sksvm, features_train.skdesc,
                 train_report.json
    evaluate     features_test.skdesc, eval_report.json, confusion.csv
    sweep-k      sweep_k.csv, sweep_k.json
    grid-search  grid.csv, grid.json
    bench-kmeans bench_kmeans.csv

Exit codes: 0 success, 1 usage error, 2 data error, 3 missing stage artifact.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import codebook as cbk
from .codebook import load_codebook, save_codebook
from .config import PipelineConfig, features_from_dict, load_config, with_overrides
from .containers import ContainerError, load_descriptors, save_descriptors
from .dataset import (CorpusError, ImageFormatError, SplitError, SplitSpec, load_image,
                      load_manifest, merge, save_manifest, scan_corpus, split)
from .descriptors import DescriptorError
from .evaluate import (evaluate_model, grid_search, k_sweep, write_confusion_csv,
                       write_report_json)
from .pipeline import CorpusFeatures, encode, extract_image, extract_paths, fit_codebook
from .svm import load_model, ovr_train, predict, save_model
from .synthetic import clustered_descriptors

log = logging.getLogger("scenerec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_STAGE = 0, 1, 2, 3

MANIFEST = "manifest.json"
CODEBOOK = "codebook.skcbk"
MODEL = "model.sksvm"
TRAIN_REPORT = "train_report.json"
FEATURE_KIND = {"hybrid": "hybrid", "daisy_only": "daisy_histogram", "hog_only": "hog"}


class UsageError(Exception):
    pass


class StageMissingError(Exception):
    pass


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise StageMissingError(f"missing {path}; run `scenerec {stage}` first")
    return path


def _dump_json(path: Path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


# ----------------------------------------------------------------- stages

def save_split_features(out: Path, part: str, feats: CorpusFeatures, labels, cfg) -> None:
    fp = cfg.features.to_dict()
    daisy = feats.stacked_daisy()
    if daisy.shape[1] == 0:
        daisy = daisy.reshape(0, cfg.features.daisy.descriptor_length)
    save_descriptors(out / f"daisy_{part}.skdesc", "daisy", daisy, fp["daisy"],
                     image_counts=feats.image_counts)
    save_descriptors(out / f"hog_{part}.skdesc", "hog", feats.hog, fp["hog"],
                     hog_image_size=fp["hog_image_size"])
    _dump_json(out / f"labels_{part}.json", [int(v) for v in labels])


def load_split_features(out: Path, part: str, need_daisy: bool = True,
                        need_hog: bool = True) -> tuple[CorpusFeatures, np.ndarray]:
    labels = np.array(json.loads(_require(out / f"labels_{part}.json", "extract").read_text()),
                      dtype=np.int64)
    daisy_sets: list = [None] * labels.size
    hog = np.zeros((labels.size, 0))
    if need_daisy:
        header, daisy = load_descriptors(_require(out / f"daisy_{part}.skdesc", "extract"))
        if header["kind"] != "daisy":
            raise ContainerError(f"daisy_{part}.skdesc holds kind {header['kind']!r}")
        bounds = np.cumsum([0, *header["image_counts"]])
        daisy_sets = [daisy[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    if need_hog:
        header, hog = load_descriptors(_require(out / f"hog_{part}.skdesc", "extract"))
        if header["kind"] != "hog":
            raise ContainerError(f"hog_{part}.skdesc holds kind {header['kind']!r}")
    if len(daisy_sets) != labels.size or hog.shape[0] != labels.size:
        raise ContainerError(f"{part} split: label and descriptor counts disagree")
    return CorpusFeatures(daisy_sets, hog), labels


def cmd_extract(cfg: PipelineConfig) -> dict:
    if not cfg.dataset_root:
        raise UsageError("no dataset root given (--data or dataset_root in the config)")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = scan_corpus(cfg.dataset_root)
    train, test = split(corpus, cfg.split)
    save_manifest(out / MANIFEST, cfg.split, train, test)
    summary = {"classes": len(corpus.classes), "images": len(corpus)}
    for part, sub in (("train", train), ("test", test)):
        t0 = time.perf_counter()
        feats = extract_paths(sub.paths, cfg.features, cfg.workers)
        save_split_features(out, part, feats, sub.labels, cfg)
        n = int(sum(feats.image_counts))
        summary[f"{part}_daisy_descriptors"] = n
        log.info("extract %s: %d images, %d DAISY descriptors, %.1fs",
                 part, len(sub), n, time.perf_counter() - t0)
    return summary


def _train_features(out: Path, cfg: PipelineConfig):
    mode = cfg.feature_mode
    feats, labels = load_split_features(out, "train", need_daisy=mode != "hog_only",
                                        need_hog=mode != "daisy_only")
    _, train, _ = load_manifest(_require(out / MANIFEST, "extract"))
    return feats, labels, train.classes


def cmd_train(cfg: PipelineConfig) -> dict:
    out = Path(cfg.output_dir)
    feats, labels, classes = _train_features(out, cfg)
    timings = {}
    codebook = None
    if cfg.feature_mode != "hog_only":
        t0 = time.perf_counter()
        codebook = fit_codebook(feats, cfg.kmeans)
        timings["codebook_fit_seconds"] = time.perf_counter() - t0
        save_codebook(out / CODEBOOK, codebook)
    elif (out / CODEBOOK).exists():
        (out / CODEBOOK).unlink()
    t0 = time.perf_counter()
    x = encode(cfg.feature_mode, codebook, feats)
    timings["encode_seconds"] = time.perf_counter() - t0
    save_descriptors(out / "features_train.skdesc", FEATURE_KIND[cfg.feature_mode], x,
                     {"feature_mode": cfg.feature_mode})
    t0 = time.perf_counter()
    model = ovr_train(x, labels, classes, cfg.c, cfg.kernel, tol=cfg.svm_tol)
    timings["svm_seconds"] = time.perf_counter() - t0
    save_model(out / MODEL, model, feature_mode=cfg.feature_mode)
    report = {
        "config": cfg.to_dict(),
        "feature_mode": cfg.feature_mode,
        "feature_dim": int(x.shape[1]),
        "k": codebook.k if codebook else 0,
        "hog_len": int(feats.hog.shape[1]) if cfg.feature_mode != "daisy_only" else 0,
        "n_train": int(labels.size),
        "timings": timings,
        "codebook_meta": codebook.train_meta if codebook else None,
        "support_vectors": [int(b.support_vectors.shape[0]) for b in model.binaries],
    }
    _dump_json(out / TRAIN_REPORT, report)
    return report


def cmd_evaluate(cfg: PipelineConfig) -> dict:
    out = Path(cfg.output_dir)
    model = load_model(_require(out / MODEL, "train"))
    train_report = json.loads(_require(out / TRAIN_REPORT, "train").read_text())
    mode = train_report["feature_mode"]
    codebook = load_codebook(_require(out / CODEBOOK, "train")) if mode != "hog_only" else None
    feats, labels = load_split_features(out, "test", need_daisy=mode != "hog_only",
                                        need_hog=mode != "daisy_only")
    x = encode(mode, codebook, feats)
    save_descriptors(out / "features_test.skdesc", FEATURE_KIND[mode], x, {"feature_mode": mode})
    trained = train_report["config"]
    meta = {
        "seed": trained["seed"],
        "split": trained["split"],
        "feature_mode": mode,
        "kernel": model.kernel.to_dict(),
        "c": model.c,
        "k": train_report["k"],
    }
    report = evaluate_model(model, x, labels, meta)
    write_report_json(out / "eval_report.json", report)
    write_confusion_csv(out / "confusion.csv", report)
    return report.to_dict()


def _whole_corpus(out: Path):
    """Recombine the extracted train and test splits into corpus order."""
    _, train, test = load_manifest(_require(out / MANIFEST, "extract"))
    ftr, _ = load_split_features(out, "train")
    fte, _ = load_split_features(out, "test")
    corpus = merge([train, test])
    lookup = {p: ("train", i) for i, p in enumerate(train.paths)}
    lookup.update({p: ("test", i) for i, p in enumerate(test.paths)})
    daisy, hog = [], []
    for p in corpus.paths:
        part, i = lookup[p]
        src = ftr if part == "train" else fte
        daisy.append(src.daisy[i])
        hog.append(src.hog[i])
    return corpus, CorpusFeatures(daisy, np.stack(hog))


def cmd_sweep_k(cfg: PipelineConfig) -> list[dict]:
    out = Path(cfg.output_dir)
    corpus, feats = _whole_corpus(out)
    rows = k_sweep(corpus, cfg.split, cfg.k_values, cfg.repeats, minibatch=cfg.kmeans,
                   c=cfg.c, svm_tol=cfg.svm_tol, mode=cfg.feature_mode, features=feats)
    with open(out / "sweep_k.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "mean_accuracy", *[f"run{r}" for r in range(cfg.repeats)],
                    "mean_fit_seconds"])
        for r in rows:
            w.writerow([r.k, f"{r.mean_accuracy:.6f}", *[f"{a:.6f}" for a in r.accuracies],
                        f"{np.mean(r.fit_seconds):.3f}"])
    doc = [{"k": r.k, "mean_accuracy": r.mean_accuracy, "accuracies": r.accuracies,
            "fit_seconds": r.fit_seconds} for r in rows]
    _dump_json(out / "sweep_k.json", doc)
    return doc


def cmd_grid_search(cfg: PipelineConfig) -> dict:
    out = Path(cfg.output_dir)
    _, train, _ = load_manifest(_require(out / MANIFEST, "extract"))
    feats, labels = load_split_features(out, "train")
    inner = SplitSpec(1.0 - cfg.grid.validation_fraction, cfg.seed, cfg.split.stratified)
    fit_part, val_part = split(train, inner)
    index = {p: i for i, p in enumerate(train.paths)}
    f_fit = feats.subset(index[p] for p in fit_part.paths)
    f_val = feats.subset(index[p] for p in val_part.paths)
    mode = cfg.feature_mode
    codebook = fit_codebook(f_fit, cfg.kmeans) if mode != "hog_only" else None
    result = grid_search(encode(mode, codebook, f_fit), fit_part.labels,
                         encode(mode, codebook, f_val), val_part.labels, train.classes,
                         cfg.grid.logc, cfg.grid.loggamma, cfg.grid.step,
                         refine=cfg.grid.refine, tol=cfg.svm_tol)
    result.write_csv(out / "grid.csv")
    doc = result.to_dict()
    doc["meta"] = {"validation_fraction": cfg.grid.validation_fraction, "seed": cfg.seed,
                   "n_fit": len(fit_part), "n_validation": len(val_part),
                   "k": codebook.k if codebook else 0, "feature_mode": mode}
    _dump_json(out / "grid.json", doc)
    return doc


def cmd_predict(model_path, image_path) -> tuple[str, dict]:
    model_path = Path(model_path)
    model = load_model(_require(model_path, "train"))
    run_dir = model_path.parent
    train_report = json.loads(_require(run_dir / TRAIN_REPORT, "train").read_text())
    feat_cfg = features_from_dict(train_report["config"]["features"])
    mode = train_report["feature_mode"]
    codebook = load_codebook(_require(run_dir / CODEBOOK, "train")) if mode != "hog_only" else None
    daisy, hog_vec = extract_image(load_image(image_path), feat_cfg)
    x = encode(mode, codebook, CorpusFeatures([daisy], hog_vec[None, :]))[0]
    idx, values = predict(model, x)
    return model.classes[idx], dict(zip(model.classes, values.tolist()))


def cmd_bench_kmeans(ks, n: int, dim: int, repeats: int, seed: int, source_dir=None,
                     out=None, batch_size: int = 1024, max_iters: int = 300) -> list[dict]:
    if source_dir:
        feats, _ = load_split_features(Path(source_dir), "train", need_hog=False)
        data = feats.stacked_daisy()
    else:
        data = clustered_descriptors(n, dim, seed=seed)
    rows = []
    for k in ks:
        secs = []
        for r in range(repeats):
            cfg = cbk.MiniBatchConfig(k=k, batch_size=batch_size, max_iterations=max_iters,
                                      seed=seed + r)
            t0 = time.perf_counter()
            cbk.minibatch_fit(data, cfg)
            secs.append(time.perf_counter() - t0)
        rows.append({"k": k, "mean_seconds": float(np.mean(secs)), "runs": secs})
        print(f"K={k:5d}  {np.mean(secs):9.3f} s  ({data.shape[0]} x {data.shape[1]})")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        with open(Path(out) / "bench_kmeans.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "mean_seconds"])
            for row in rows:
                w.writerow([row["k"], f"{row['mean_seconds']:.6f}"])
    return rows


# -------------------------------------------------------------- arguments

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dims(text: str) -> tuple[int, int]:
    parts = text.lower().replace(",", "x").split("x")
    try:
        vals = [int(p) for p in parts]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected N or RxC, got {text!r}") from exc
    if len(vals) == 1:
        vals *= 2
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected N or RxC, got {text!r}")
    return tuple(vals)


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from exc
    return lo, hi


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("pipeline")
    g.add_argument("--config", help="TOML config file")
    g.add_argument("--data", dest="dataset_root", help="corpus root (<root>/<class>/<images>)")
    g.add_argument("--out", dest="output_dir", help="run directory for stage artifacts")
    g.add_argument("--seed", type=int)
    g.add_argument("--train-fraction", type=float)
    g.add_argument("--no-stratify", dest="stratified", action="store_const", const=False)
    g.add_argument("--feature-mode", choices=("hog_only", "daisy_only", "hybrid"))
    g.add_argument("--workers", type=int, help="extraction processes (0 = all cores)")
    g = p.add_argument_group("descriptors")
    g.add_argument("--hog-orientations", type=int)
    g.add_argument("--hog-cell", type=_dims, metavar="RxC")
    g.add_argument("--hog-block", type=_dims, metavar="RxC")
    g.add_argument("--hog-image-size", type=_dims, metavar="RxC",
                   help="common raster for the whole-image HOG")
    g.add_argument("--daisy-radius", type=int)
    g.add_argument("--daisy-rings", type=int)
    g.add_argument("--daisy-histograms", type=int)
    g.add_argument("--daisy-orientations", type=int)
    g.add_argument("--daisy-step", type=int)
    g.add_argument("--daisy-sigma", type=float)
    g = p.add_argument_group("codebook")
    g.add_argument("--k", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--max-iters", type=int)
    g.add_argument("--tol", type=float, help="mini-batch centre shift tolerance")
    g = p.add_argument_group("svm")
    g.add_argument("--kernel", choices=("linear", "rbf"))
    g.add_argument("--c", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--svm-tol", type=float)
    g = p.add_argument_group("experiments")
    g.add_argument("--grid-logc", type=_range, metavar="LO:HI")
    g.add_argument("--grid-loggamma", type=_range, metavar="LO:HI")
    g.add_argument("--grid-step", type=float)
    g.add_argument("--no-refine", dest="refine", action="store_const", const=False)
    g.add_argument("--repeats", type=int)
    g.add_argument("--k-values", type=_int_list, metavar="K1,K2,...")
    return p


CONFIG_FLAGS = (
    "dataset_root", "output_dir", "seed", "train_fraction", "stratified", "feature_mode",
    "workers", "hog_orientations", "hog_cell", "hog_block", "hog_image_size", "daisy_radius",
    "daisy_rings", "daisy_histograms", "daisy_orientations", "daisy_step", "daisy_sigma", "k",
    "batch_size", "max_iters", "tol", "kernel", "c", "gamma", "svm_tol", "grid_logc",
    "grid_loggamma", "grid_step", "refine", "repeats", "k_values",
)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scenerec", description="DAISY + HOG scene recognition pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common()
    for name, help_ in (("extract", "extract DAISY and HOG descriptors for both splits"),
                        ("train", "build the codebook, encode and train the SVM"),
                        ("evaluate", "score the trained model on the test split"),
                        ("sweep-k", "vocabulary-size sweep with a linear SVM"),
                        ("grid-search", "RBF log10(C) x log10(gamma) grid search")):
        sub.add_parser(name, parents=[common], help=help_)
    p = sub.add_parser("predict", help="classify one image with a trained model")
    p.add_argument("model", help="path to model.sksvm inside a trained run directory")
    p.add_argument("image")
    p = sub.add_parser("bench-kmeans", help="time Mini-Batch K-Means for several K")
    p.add_argument("--ks", type=_int_list, default=(100, 200, 300, 400, 500, 600, 700, 800, 900, 1000))
    p.add_argument("--n", type=int, default=1_000_000, help="synthetic descriptor count")
    p.add_argument("--dim", type=int, default=200)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--from-run", help="use train DAISY descriptors of an extracted run instead")
    p.add_argument("--out", help="directory for bench_kmeans.csv")
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    return with_overrides(cfg, **{k: getattr(args, k, None) for k in CONFIG_FLAGS})


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "predict":
            name, values = cmd_predict(args.model, args.image)
            print(name)
            for cls, v in values.items():
                print(f"  {cls}\t{v:+.6f}")
            return EXIT_OK
        if args.command == "bench-kmeans":
            cmd_bench_kmeans(args.ks, args.n, args.dim, args.repeats, args.seed,
                             args.from_run, args.out, args.batch_size, args.max_iters)
            return EXIT_OK
        try:
            cfg = resolve_config(args)
        except (OSError, ValueError, TypeError) as exc:
            raise UsageError(f"bad configuration: {exc}") from exc
        handler = {"extract": cmd_extract, "train": cmd_train, "evaluate": cmd_evaluate,
                   "sweep-k": cmd_sweep_k, "grid-search": cmd_grid_search}[args.command]
        result = handler(cfg)
        if args.command == "evaluate":
            print(f"accuracy {result['accuracy']:.4f}  macro P/R/F1 "
                  f"{result['macro_precision']:.4f}/{result['macro_recall']:.4f}/"
                  f"{result['macro_f1']:.4f}")
        elif args.command == "grid-search":
            b = result["best"]
            print(f"best logC={b['logC']:.3f} logGamma={b['logGamma']:.3f} "
                  f"accuracy={b['accuracy']:.4f}")
        elif args.command == "sweep-k":
            for row in result:
                print(f"K={row['k']:5d}  mean accuracy {row['mean_accuracy']:.4f}")
        return EXIT_OK
    except UsageError as exc:
        print(f"scenerec: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageMissingError as exc:
        print(f"scenerec: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (CorpusError, SplitError, ImageFormatError, DescriptorError, ContainerError,
            cbk.InsufficientDataError, OSError, ValueError) as exc:
        print(f"scenerec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
