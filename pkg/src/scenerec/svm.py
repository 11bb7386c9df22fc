"""Kernel SVMs trained with SMO, combined one-vs-rest for multi-class.

The binary solver minimises the dual

    f(a) = 1/2 a'Qa - sum(a),   Q_ij = y_i y_j K(x_i, x_j)
    s.t.  0 <= a_i <= C,  sum(y_i a_i) = 0

by repeatedly picking the maximal violating pair (i, j) and solving the
two-variable subproblem in closed form.  It stops once the violation gap
``max_{I_up} -y G - min_{I_low} -y G`` drops below ``tol``, which bounds
every margin KKT residual by ``tol``.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .containers import SVM_MAGIC, read_container, take_array, write_container

log = logging.getLogger(__name__)

SV_THRESHOLD = 1e-8
DEFAULT_CACHE_BYTES = 1 << 30


class DegenerateTrainingError(ValueError):
    """Raised when a binary problem has only one label present."""


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "linear"
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and (self.gamma is None or not self.gamma > 0):
            raise ValueError("rbf kernel needs gamma > 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "gamma": self.gamma}

    def matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Kernel matrix between the rows of ``a`` and ``b``."""
        dot = a @ b.T
        if self.kind == "linear":
            return dot
        an = np.einsum("ij,ij->i", a, a)
        bn = np.einsum("ij,ij->i", b, b)
        sq = np.maximum(an[:, None] + bn[None, :] - 2.0 * dot, 0.0)
        return np.exp(-self.gamma * sq)


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"kernel arguments must be equal-length vectors, got {x.shape} and {y.shape}")
    if spec.kind == "linear":
        return float(x @ y)
    d = x - y
    return float(np.exp(-spec.gamma * (d @ d)))


class KernelCache:
    """Rows of the training Gram matrix, LRU-evicted under a byte budget.

    When the full matrix fits in the budget it is computed once up front.
    One cache can be shared by every binary problem over the same rows.
    """

    def __init__(self, features: np.ndarray, kernel: KernelSpec,
                 cache_bytes: int = DEFAULT_CACHE_BYTES):
        self.x = np.ascontiguousarray(features, dtype=np.float64)
        self.kernel = kernel
        n = self.x.shape[0]
        self.capacity = max(2, cache_bytes // max(1, 8 * n))
        self.full = None
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        if self.capacity >= n:
            self.full = kernel.matrix(self.x, self.x)
            self.diag = self.full.diagonal().copy()
        elif kernel.kind == "rbf":
            self.diag = np.ones(n)
        else:
            self.diag = np.einsum("ij,ij->i", self.x, self.x)

    def __len__(self) -> int:
        return self.x.shape[0]

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        r = self._rows.get(i)
        if r is not None:
            self._rows.move_to_end(i)
            return r
        r = self.kernel.matrix(self.x[i : i + 1], self.x)[0]
        self._rows[i] = r
        if len(self._rows) > self.capacity:
            self._rows.popitem(last=False)
        return r


@dataclass
class BinarySvm:
    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    kernel: KernelSpec
    c: float
    meta: dict = field(default_factory=dict)

    def decision_function(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.support_vectors.shape[0] == 0:
            return np.full(x.shape[0], self.bias)
        return self.kernel.matrix(x, self.support_vectors) @ self.dual_coefs + self.bias


def dual_objective(alpha: np.ndarray, labels: np.ndarray, gram: np.ndarray) -> float:
    """Dual value ``sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij`` (to maximise)."""
    ay = alpha * labels
    return float(alpha.sum() - 0.5 * ay @ gram @ ay)


def _solve_dual(cache: KernelCache, y: np.ndarray, c: float, tol: float, max_iter: int):
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    pos = y > 0
    diag = cache.diag
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        score = -y * grad
        up = np.where(pos, alpha < c, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < c)
        i = int(np.argmax(np.where(up, score, -np.inf)))
        j = int(np.argmin(np.where(low, score, np.inf)))
        gap = score[i] - score[j]
        if gap < tol:
            break
        ki, kj = cache.row(i), cache.row(j)
        eta = max(diag[i] + diag[j] - 2.0 * ki[j], 1e-12)
        # step t moves alpha_i by y_i t and alpha_j by -y_j t
        t_i = c - alpha[i] if pos[i] else alpha[i]
        t_j = alpha[j] if pos[j] else c - alpha[j]
        t = min(gap / eta, t_i, t_j)
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        # land exactly on the box when the step is bound-limited
        if t == t_i:
            alpha[i] = c if pos[i] else 0.0
        if t == t_j:
            alpha[j] = 0.0 if pos[j] else c
        grad += t * y * (ki - kj)
    else:
        it = max_iter
    converged = gap < tol
    score = -y * grad
    free = (alpha > 0) & (alpha < c)
    if free.any():
        bias = float(score[free].mean())
    else:
        up = np.where(pos, alpha < c, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < c)
        hi = score[up].max() if up.any() else 0.0
        lo = score[low].min() if low.any() else 0.0
        bias = float(0.5 * (hi + lo))
    return alpha, bias, {"iterations": it, "converged": bool(converged), "final_gap": float(gap)}


def smo_train_binary(features, labels, c: float = 1.0, kernel: KernelSpec | None = None,
                     tol: float = 1e-3, max_passes: int = 100,
                     cache: KernelCache | None = None, return_alpha: bool = False):
    """Train one soft-margin SVM on labels in {-1, +1}.

    ``max_passes`` caps the number of pair updates at ``max_passes * N``.
    Pass a shared ``cache`` to reuse kernel rows across problems on the same
    feature matrix.  With ``return_alpha`` the full dual vector is returned
    alongside the machine.
    """
    kernel = kernel or KernelSpec()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError("features must be N x D with one label per row")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("binary labels must be -1 or +1")
    if not (y > 0).any() or not (y < 0).any():
        raise DegenerateTrainingError("both +1 and -1 labels are required")
    if not c > 0:
        raise ValueError("C must be positive")
    if cache is None:
        cache = KernelCache(x, kernel)
    elif len(cache) != x.shape[0]:
        raise ValueError("kernel cache does not match the feature matrix")
    alpha, bias, meta = _solve_dual(cache, y, c, tol, max_passes * x.shape[0])
    if not meta["converged"]:
        log.warning("SMO stopped at %d iterations with gap %.3g > tol %.3g",
                    meta["iterations"], meta["final_gap"], tol)
    sv = alpha > SV_THRESHOLD
    meta["n_support"] = int(sv.sum())
    model = BinarySvm(x[sv].copy(), (alpha * y)[sv], bias, kernel, float(c), meta)
    return (model, alpha) if return_alpha else model


@dataclass
class SvmModel:
    classes: tuple[str, ...]
    binaries: list[BinarySvm]
    feature_dim: int

    def __post_init__(self):
        self.classes = tuple(self.classes)
        if len(self.binaries) != len(self.classes):
            raise ValueError("need one binary machine per class")
        self._stacked = None

    @property
    def kernel(self) -> KernelSpec:
        return self.binaries[0].kernel

    @property
    def c(self) -> float:
        return self.binaries[0].c

    def _compile(self):
        """Merge the per-class support vectors into one deduplicated set."""
        if self._stacked is None:
            sv = np.concatenate([b.support_vectors for b in self.binaries])
            coefs = np.zeros((len(self.binaries), 0))
            if sv.shape[0]:
                uniq, inv = np.unique(sv, axis=0, return_inverse=True)
                inv = inv.ravel()
                coefs = np.zeros((len(self.binaries), uniq.shape[0]))
                start = 0
                for r, b in enumerate(self.binaries):
                    m = b.support_vectors.shape[0]
                    np.add.at(coefs[r], inv[start : start + m], b.dual_coefs)
                    start += m
            else:
                uniq = np.zeros((0, self.feature_dim))
            biases = np.array([b.bias for b in self.binaries])
            if self.kernel.kind == "linear":
                # w_c = sum_j coef_cj sv_j
                self._stacked = ("linear", coefs @ uniq, biases)
            else:
                self._stacked = ("rbf", (uniq, coefs), biases)
        return self._stacked

    def decision_values(self, x) -> np.ndarray:
        """(N, n_classes) matrix of one-vs-rest decision values."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.feature_dim:
            raise ValueError(f"feature dim {x.shape[1]} != model dim {self.feature_dim}")
        kind, params, biases = self._compile()
        if kind == "linear":
            return x @ params.T + biases
        uniq, coefs = params
        out = np.empty((x.shape[0], len(self.classes)))
        for start in range(0, x.shape[0], 1024):
            xs = x[start : start + 1024]
            out[start : start + xs.shape[0]] = self.kernel.matrix(xs, uniq) @ coefs.T + biases
        return out

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.decision_values(x), axis=1)


def ovr_train(features, labels, classes, c: float = 1.0, kernel: KernelSpec | None = None,
              tol: float = 1e-3, max_passes: int = 100, cache: KernelCache | None = None,
              cache_bytes: int = DEFAULT_CACHE_BYTES) -> SvmModel:
    """One binary machine per class: that class +1, every other class -1."""
    kernel = kernel or KernelSpec()
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = tuple(classes)
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    counts = np.bincount(labels, minlength=len(classes))
    if counts.shape[0] > len(classes) or labels.min() < 0:
        raise ValueError("label outside the class list")
    missing = [classes[i] for i in np.flatnonzero(counts == 0)]
    if missing:
        raise ValueError(f"classes without training samples: {missing}")
    if cache is None:
        cache = KernelCache(x, kernel, cache_bytes)
    binaries = []
    for ci in range(len(classes)):
        y = np.where(labels == ci, 1.0, -1.0)
        binaries.append(smo_train_binary(x, y, c, kernel, tol, max_passes, cache=cache))
    return SvmModel(classes, binaries, x.shape[1])


def predict(model: SvmModel, x):
    """Class index and per-class decision values for one feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict expects a single feature vector")
    values = model.decision_values(x[None, :])[0]
    return int(np.argmax(values)), values


# ------------------------------------------------------------- persistence

def save_model(path, model: SvmModel, **extra) -> None:
    kernel = model.kernel
    header = {
        "classes": list(model.classes),
        "kernel": kernel.kind,
        "c": model.c,
        "gamma": kernel.gamma,
        "dims": model.feature_dim,
        "sv_counts": [int(b.support_vectors.shape[0]) for b in model.binaries],
        "binary_meta": [b.meta for b in model.binaries],
    }
    header.update(extra)
    payload = b"".join(
        [np.ascontiguousarray(b.support_vectors, dtype="<f8").tobytes() for b in model.binaries]
        + [np.asarray(b.dual_coefs, dtype="<f8").tobytes() for b in model.binaries]
        + [np.array([b.bias for b in model.binaries], dtype="<f8").tobytes()]
    )
    write_container(path, SVM_MAGIC, header, payload)


def load_model(path) -> SvmModel:
    header, payload = read_container(path, SVM_MAGIC)
    kernel = KernelSpec(header["kernel"], header.get("gamma"))
    dim, counts = header["dims"], header["sv_counts"]
    metas = header.get("binary_meta") or [{} for _ in counts]
    off = 0
    svs, coefs = [], []
    for m in counts:
        arr, off = take_array(payload, off, "<f8", m * dim, path)
        svs.append(arr.reshape(m, dim).copy())
    for m in counts:
        arr, off = take_array(payload, off, "<f8", m, path)
        coefs.append(arr.copy())
    biases, _ = take_array(payload, off, "<f8", len(counts), path)
    binaries = [
        BinarySvm(sv, co, float(b), kernel, float(header["c"]), meta)
        for sv, co, b, meta in zip(svs, coefs, biases, metas)
    ]
    return SvmModel(tuple(header["classes"]), binaries, dim)
