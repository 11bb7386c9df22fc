"""Visual vocabulary construction.

Mini-Batch K-Means (Sculley, "Web-scale k-means clustering") with
k-means++ seeding, plus a full-batch Lloyd solver used as the exact
reference.  Nearest-centre search uses the expanded distance
``|x|^2 - 2 x.c + |c|^2`` with cached centre norms; rows whose two best
candidates are too close to call in that form are re-ranked with direct
differences so the result agrees with a linear scan.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .containers import CODEBOOK_MAGIC, read_container, take_array, write_container

log = logging.getLogger(__name__)

CHUNK_ROWS = 16384


class InsufficientDataError(ValueError):
    """Raised when fewer data points than clusters are supplied."""


@dataclass(frozen=True)
class MiniBatchConfig:
    k: int = 600
    batch_size: int = 1024
    max_iterations: int = 300
    shift_tolerance: float = 1e-4
    seed: int = 0
    init_size: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.batch_size < 1 or self.max_iterations < 1:
            raise ValueError("batch_size and max_iterations must be >= 1")
        if self.shift_tolerance < 0:
            raise ValueError("shift_tolerance must be >= 0")
        if self.init_size is not None and self.init_size < self.k:
            raise ValueError("init_size must be >= k")


@dataclass
class Codebook:
    centers: np.ndarray
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.centers = np.ascontiguousarray(self.centers, dtype=np.float64)
        if self.centers.ndim != 2 or min(self.centers.shape) < 1:
            raise ValueError("centers must be a non-empty K x D matrix")
        if not np.all(np.isfinite(self.centers)):
            raise ValueError("centers must be finite")
        self._norms = np.einsum("ij,ij->i", self.centers, self.centers)

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def assign(self, x) -> int:
        return assign(self, x)

    def assign_batch(self, data) -> np.ndarray:
        return nearest_centers(self.centers, data, self._norms)[0]


# ---------------------------------------------------------------- distance

def _check_dims(data: np.ndarray, dim: int) -> None:
    if data.ndim != 2 or data.shape[1] != dim:
        raise ValueError(f"expected descriptors of dimension {dim}, got shape {data.shape}")


def nearest_centers(centers: np.ndarray, data, center_norms=None):
    """Index of and squared distance to the nearest centre for every row.

    Ties resolve to the lowest centre index.
    """
    data = np.asarray(data)
    _check_dims(data, centers.shape[1])
    if center_norms is None:
        center_norms = np.einsum("ij,ij->i", centers, centers)
    n = data.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    k = centers.shape[0]
    for start in range(0, n, CHUNK_ROWS):
        x = np.asarray(data[start : start + CHUNK_ROWS], dtype=np.float64)
        xn = np.einsum("ij,ij->i", x, x)
        d = xn[:, None] - 2.0 * (x @ centers.T) + center_norms[None, :]
        if k == 1:
            lab = np.zeros(x.shape[0], dtype=np.int64)
            ambiguous = np.zeros(x.shape[0], dtype=bool)
        else:
            two = np.partition(d, 1, axis=1)[:, :2]
            lab = np.argmin(d, axis=1)
            # cancellation error of the expanded form scales with |x|^2 + |c|^2
            scale = xn + center_norms.max()
            ambiguous = (two[:, 1] - two[:, 0]) <= 1e-9 * scale + 1e-300
        if ambiguous.any():
            rows = np.flatnonzero(ambiguous)
            for r in rows:
                exact = ((centers - x[r]) ** 2).sum(axis=1)
                lab[r] = int(np.argmin(exact))
        labels[start : start + x.shape[0]] = lab
        diff = x - centers[lab]
        dists[start : start + x.shape[0]] = np.einsum("ij,ij->i", diff, diff)
    return labels, dists


def assign(codebook: Codebook, x) -> int:
    """Nearest visual word of one descriptor (lowest index on ties)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != codebook.dim:
        raise ValueError(f"descriptor dimension {x.shape} does not match codebook dim {codebook.dim}")
    return int(np.argmin(((codebook.centers - x) ** 2).sum(axis=1)))


def inertia(codebook: Codebook, data) -> float:
    """Sum over rows of the squared distance to the nearest centre."""
    return float(nearest_centers(codebook.centers, data, codebook._norms)[1].sum())


# ---------------------------------------------------------- initialisation

def kmeanspp_init(data, k: int, seed: int = 0) -> np.ndarray:
    """k-means++ seeding.

    The first centre is drawn uniformly; each further centre is drawn with
    probability proportional to its squared distance from the nearest centre
    chosen so far.  If every remaining point coincides with a chosen centre,
    the draw falls back to uniform over unchosen rows.
    """
    data = np.asarray(data)
    n = data.shape[0]
    if data.ndim != 2:
        raise ValueError("data must be a 2-D array")
    if n < k:
        raise InsufficientDataError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    x_norms = np.einsum("ij,ij->i", data, data, dtype=np.float64)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    taken = np.zeros(n, dtype=bool)
    taken[chosen[0]] = True
    closest = np.full(n, np.inf)
    for i in range(1, k):
        c = data[chosen[i - 1]]
        d = x_norms - 2.0 * (data @ c).astype(np.float64) + x_norms[chosen[i - 1]]
        np.maximum(d, 0.0, out=d)
        np.minimum(closest, d, out=closest)
        closest[taken] = 0.0
        total = closest.sum()
        if total > 0:
            cum = np.cumsum(closest)
            idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
            idx = min(idx, n - 1)
            if closest[idx] == 0.0:  # landed on a zero-width bin through rounding
                idx = int(np.flatnonzero(closest > 0)[0])
        else:
            idx = int(rng.choice(np.flatnonzero(~taken)))
        chosen[i] = idx
        taken[idx] = True
    return np.array(data[chosen], dtype=np.float64)


# --------------------------------------------------------------- fitting

def _dedupe_centers(centers: np.ndarray, data, rng) -> int:
    """Replace exact duplicate centres with unused data rows; returns count.

    A few random draws usually suffice; otherwise the rows are scanned in a
    random order.  Raises :class:`InsufficientDataError` when the data holds
    fewer distinct rows than there are centres.
    """
    _, first = np.unique(centers, axis=0, return_index=True)
    dupes = np.setdiff1d(np.arange(centers.shape[0]), first)
    if dupes.size == 0:
        return 0
    used = {c.tobytes() for c in centers}
    n = data.shape[0]
    candidates = itertools.chain(rng.integers(0, n, 100), rng.permutation(n))
    for j in dupes:
        for idx in candidates:
            cand = np.asarray(data[idx], dtype=np.float64)
            if cand.tobytes() not in used:
                used.add(cand.tobytes())
                centers[j] = cand
                break
        else:
            raise InsufficientDataError(
                f"data has fewer than {centers.shape[0]} distinct rows; cannot keep centres distinct"
            )
    return int(dupes.size)


def _cluster_sums(labels: np.ndarray, x: np.ndarray):
    """Occupied labels, their member counts and row sums (label order)."""
    order = np.argsort(labels, kind="stable")
    hit, starts, hits = np.unique(labels[order], return_index=True, return_counts=True)
    sums = np.add.reduceat(x[order], starts, axis=0)
    return hit, hits, sums


def minibatch_step(centers: np.ndarray, counts: np.ndarray, batch: np.ndarray) -> float:
    """One Mini-Batch K-Means iteration, updating ``centers`` and ``counts`` in place.

    Returns the largest centre displacement (L2) of the iteration.
    """
    labels, _ = nearest_centers(centers, batch)
    hit, hits, sums = _cluster_sums(labels, batch)
    prior = counts[hit]
    updated = (prior[:, None] * centers[hit] + sums) / (prior + hits)[:, None]
    shift = float(np.sqrt(((updated - centers[hit]) ** 2).sum(axis=1)).max())
    centers[hit] = updated
    counts[hit] += hits
    return shift


def minibatch_fit(data, config: MiniBatchConfig) -> Codebook:
    """Mini-Batch K-Means.

    Each iteration samples ``batch_size`` rows with replacement, caches
    every sample's nearest centre against the centres at the start of the
    iteration, then applies ``c <- (1 - eta) c + eta x`` with
    ``eta = 1 / count[c]`` for each sample in order.  The per-sample loop is
    evaluated in closed form: for a centre with prior count ``v`` that
    receives samples summing to ``s`` over ``m`` hits, the sequential
    updates telescope to ``(v c + s) / (v + m)``.

    Seeds come from k-means++ on a random sample of ``init_size`` rows
    (default ``max(3 * batch_size, 10 * k)``).
    """
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError("data must be a 2-D array")
    n, dim = data.shape
    k = config.k
    if n < k:
        raise InsufficientDataError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(config.seed)
    init_size = config.init_size or max(3 * config.batch_size, 10 * k)
    if init_size < n:
        sub = np.sort(rng.choice(n, size=init_size, replace=False))
        centers = kmeanspp_init(data[sub], k, config.seed)
    else:
        init_size = n
        centers = kmeanspp_init(data, k, config.seed)
    counts = np.zeros(k, dtype=np.float64)
    shift = np.inf
    stop = "max_iterations"
    it = 0
    for it in range(1, config.max_iterations + 1):
        batch = np.asarray(data[rng.integers(0, n, size=config.batch_size)], dtype=np.float64)
        shift = minibatch_step(centers, counts, batch)
        if shift < config.shift_tolerance:
            stop = "converged"
            break
    replaced = _dedupe_centers(centers, data, rng)
    log.debug("minibatch k=%d stopped after %d iterations (%s)", k, it, stop)
    meta = {
        "method": "minibatch",
        "iterations": it,
        "batch_size": config.batch_size,
        "seed": config.seed,
        "final_shift": shift,
        "stop_reason": stop,
        "init_size": init_size,
        "never_assigned": int((counts == 0).sum()),
        "reseeded_duplicates": replaced,
    }
    return Codebook(centers, meta)


def lloyd_exact(data, k: int, seed: int = 0, max_iterations: int = 300) -> Codebook:
    """Full-batch Lloyd iterations from k-means++ seeds.

    Runs until assignments stop changing or ``max_iterations``.  An empty
    cluster is moved onto the point currently farthest from its own centre.
    ``train_meta["inertia_history"]`` records the objective after every
    assignment step.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("data must be a 2-D array")
    n = data.shape[0]
    if n < k:
        raise InsufficientDataError(f"need at least k={k} points, got {n}")
    centers = kmeanspp_init(data, k, seed)
    labels = None
    history = []
    stop = "max_iterations"
    it = 0
    for it in range(1, max_iterations + 1):
        new_labels, dists = nearest_centers(centers, data)
        history.append(float(dists.sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            stop = "converged"
            break
        labels = new_labels
        hit, hits, sums = _cluster_sums(labels, data)
        centers[hit] = sums / hits[:, None]
        empty = np.setdiff1d(np.arange(k), hit)
        if empty.size:
            far = np.argsort(-dists, kind="stable")
            for j, idx in zip(empty, far):
                centers[j] = data[idx]
                labels[idx] = -1  # force another assignment pass
    meta = {
        "method": "lloyd",
        "iterations": it,
        "seed": seed,
        "stop_reason": stop,
        "inertia_history": history,
        "final_shift": 0.0 if stop == "converged" else None,
    }
    return Codebook(centers, meta)


# ------------------------------------------------------------- persistence

def save_codebook(path, codebook: Codebook) -> None:
    header = {"k": codebook.k, "dim": codebook.dim, "train_meta": codebook.train_meta}
    write_container(path, CODEBOOK_MAGIC, header, codebook.centers.astype("<f4").tobytes())


def load_codebook(path) -> Codebook:
    header, payload = read_container(path, CODEBOOK_MAGIC)
    k, dim = header["k"], header["dim"]
    arr, _ = take_array(payload, 0, "<f4", k * dim, path)
    return Codebook(arr.reshape(k, dim).astype(np.float64), header.get("train_meta", {}))
