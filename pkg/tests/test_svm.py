import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import three_blobs
from scenerec.containers import ContainerVersionError
from scenerec.svm import (BinarySvm, DegenerateTrainingError, KernelCache, KernelSpec, SvmModel,
                          dual_objective, kernel_eval, load_model, ovr_train, predict,
                          save_model, smo_train_binary)


def qp_oracle(gram, y, c):
    """Maximise the dual by enumerating which variables sit at 0, at C or strictly between.

    For each pattern the free variables solve the equality-constrained
    stationarity system; the best feasible candidate is the optimum of the
    concave problem.
    """
    n = len(y)
    q = np.outer(y, y) * gram
    best, best_alpha = -np.inf, None
    for pattern in itertools.product((0, 1, 2), repeat=n):
        pattern = np.array(pattern)
        free = pattern == 2
        alpha = np.where(pattern == 1, c, 0.0)
        f = np.flatnonzero(free)
        if f.size:
            b = np.flatnonzero(~free)
            m = np.zeros((f.size + 1, f.size + 1))
            m[:f.size, :f.size] = q[np.ix_(f, f)]
            m[:f.size, f.size] = y[f]
            m[f.size, :f.size] = y[f]
            rhs = np.concatenate([1.0 - q[np.ix_(f, b)] @ alpha[b], [-y[b] @ alpha[b]]])
            sol, *_ = np.linalg.lstsq(m, rhs, rcond=None)
            if not np.allclose(m @ sol, rhs, atol=1e-9):
                continue
            alpha[f] = sol[:f.size]
        if abs(alpha @ y) > 1e-9 or alpha.min() < -1e-12 or alpha.max() > c + 1e-12:
            continue
        val = alpha.sum() - 0.5 * alpha @ q @ alpha
        if val > best:
            best, best_alpha = val, alpha
    return best, best_alpha


def kkt_residual(alpha, y, gram, bias, c):
    f = (alpha * y) @ gram + bias
    margin = y * f
    worst = 0.0
    for a, m in zip(alpha, margin):
        if a <= 1e-8:
            worst = max(worst, 1 - m)
        elif a >= c - 1e-8:
            worst = max(worst, m - 1)
        else:
            worst = max(worst, abs(m - 1))
    return worst


def separable_toy(seed=0, n=20, margin=0.5):
    r = np.random.default_rng(seed)
    x = r.uniform(-3, 3, (4 * n, 2))
    x = x[np.abs(x[:, 0] + x[:, 1]) > margin][:n]
    return x, np.where(x[:, 0] + x[:, 1] > 0, 1.0, -1.0)


class TestKernel:
    def test_examples(self):
        rbf = KernelSpec("rbf", 1.0)
        assert kernel_eval(rbf, [0.3, 0.2], [0.3, 0.2]) == 1.0
        assert kernel_eval(rbf, [0.0, 0.0], [1.0, 0.0]) == pytest.approx(0.367879, abs=1e-6)
        assert kernel_eval(KernelSpec(), [1, 2], [3, 4]) == 11.0

    def test_errors(self):
        with pytest.raises(ValueError):
            kernel_eval(KernelSpec(), [1, 2], [1, 2, 3])
        with pytest.raises(ValueError):
            KernelSpec("rbf")
        with pytest.raises(ValueError):
            KernelSpec("poly", 1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.01, 10))
    def test_rbf_matrix_properties(self, seed, gamma):
        x = np.random.default_rng(seed).random((12, 4))
        k = KernelSpec("rbf", gamma).matrix(x, x)
        np.testing.assert_allclose(k, k.T, atol=1e-12)
        np.testing.assert_allclose(np.diag(k), 1.0)
        assert np.all((k > 0) & (k <= 1.0))
        assert k[2, 5] == pytest.approx(kernel_eval(KernelSpec("rbf", gamma), x[2], x[5]))


class TestSmo:
    def test_two_point_analytic(self):
        x = np.array([[0.0, 0.0], [2.0, 0.0]])
        m, alpha = smo_train_binary(x, np.array([-1.0, 1.0]), c=10.0, return_alpha=True)
        np.testing.assert_allclose(alpha, [0.5, 0.5], atol=1e-9)
        assert m.bias == pytest.approx(-1.0, abs=1e-9)
        w = m.dual_coefs @ m.support_vectors
        np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(m.decision_function(x), [-1.0, 1.0], atol=1e-9)

    def test_separable_toy_accuracy(self):
        x, y = separable_toy()
        m = smo_train_binary(x, y, c=100.0)
        assert np.all(np.sign(m.decision_function(x)) == y)

    @pytest.mark.parametrize("seed", range(4))
    def test_six_point_qp_oracle(self, seed):
        r = np.random.default_rng(seed)
        x = r.normal(size=(6, 2))
        y = np.array([1.0, 1.0, 1.0, -1.0, -1.0, -1.0])
        kernel = KernelSpec("rbf", 0.5)
        gram = kernel.matrix(x, x)
        want, _ = qp_oracle(gram, y, 1.0)
        _, alpha = smo_train_binary(x, y, c=1.0, kernel=kernel, tol=1e-6, return_alpha=True)
        assert dual_objective(alpha, y, gram) == pytest.approx(want, abs=1e-4)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from([0.1, 1.0, 10.0]),
           st.sampled_from(["linear", "rbf"]))
    def test_constraints_and_kkt(self, seed, c, kind):
        r = np.random.default_rng(seed)
        x = r.normal(size=(30, 3))
        y = np.where(x[:, 0] + 0.5 * r.normal(size=30) > 0, 1.0, -1.0)
        if abs(y.sum()) == 30:
            y[0] = -y[0]
        kernel = KernelSpec(kind, 0.7 if kind == "rbf" else None)
        tol = 1e-3
        m, alpha = smo_train_binary(x, y, c=c, kernel=kernel, tol=tol, return_alpha=True)
        assert m.meta["converged"]
        assert abs(m.dual_coefs.sum()) < 1e-6
        assert np.all(np.abs(m.dual_coefs) <= c + 1e-9)
        assert np.all(np.abs(m.dual_coefs) > 0)
        assert np.all((alpha >= 0) & (alpha <= c))
        gram = kernel.matrix(x, x)
        assert kkt_residual(alpha, y, gram, m.bias, c) <= tol + 1e-9

    def test_single_class(self):
        with pytest.raises(DegenerateTrainingError):
            smo_train_binary(np.zeros((3, 2)), np.ones(3))

    def test_bad_labels(self):
        with pytest.raises(ValueError):
            smo_train_binary(np.zeros((2, 2)), np.array([0.0, 1.0]))

    def test_small_lru_cache_matches_full(self, rng):
        x = rng.normal(size=(60, 4))
        y = np.where(x[:, 1] > 0, 1.0, -1.0)
        kernel = KernelSpec("rbf", 0.3)
        full = smo_train_binary(x, y, 1.0, kernel, cache=KernelCache(x, kernel))
        tiny_cache = KernelCache(x, kernel, cache_bytes=8 * 60 * 5)
        assert tiny_cache.full is None and tiny_cache.capacity == 5
        tiny = smo_train_binary(x, y, 1.0, kernel, cache=tiny_cache)
        assert len(tiny_cache._rows) <= 5
        np.testing.assert_allclose(tiny.dual_coefs, full.dual_coefs, atol=1e-12)
        assert tiny.bias == pytest.approx(full.bias, abs=1e-12)

    def test_iteration_cap(self, rng):
        x = rng.normal(size=(40, 2))
        y = np.where(rng.random(40) > 0.5, 1.0, -1.0)
        m = smo_train_binary(x, y, c=100.0, kernel=KernelSpec("rbf", 5.0), tol=1e-12, max_passes=1)
        assert m.meta["iterations"] <= 40


class TestOvr:
    def test_three_blobs(self):
        x, y = three_blobs(seed=2)
        model = ovr_train(x, y, ("a", "b", "c"), c=10.0)
        assert len(model.binaries) == 3
        assert np.all(model.predict(x) == y)
        rbf = ovr_train(x, y, ("a", "b", "c"), c=10.0, kernel=KernelSpec("rbf", 0.5))
        assert np.all(rbf.predict(x) == y)

    def test_two_class_symmetry(self, rng):
        x = rng.normal(size=(40, 3))
        y = (x[:, 0] > 0).astype(int)
        model = ovr_train(x, y, ("neg", "pos"), c=1.0, tol=1e-6)
        dv = model.decision_values(x)
        np.testing.assert_allclose(dv[:, 0], -dv[:, 1], atol=1e-4)

    def test_fifteen_classes(self, rng):
        x = rng.normal(size=(75, 6))
        y = np.repeat(np.arange(15), 5)
        model = ovr_train(x, y, [f"c{i}" for i in range(15)])
        assert len(model.binaries) == 15

    def test_missing_class(self, rng):
        with pytest.raises(ValueError, match="c2"):
            ovr_train(rng.normal(size=(4, 2)), [0, 1, 0, 1], ("c0", "c1", "c2"))

    def test_predict_analytic_point(self):
        x = np.array([[0.0, 0.0], [2.0, 0.0]])
        model = ovr_train(x, [0, 1], ("left", "right"), c=10.0)
        idx, values = predict(model, np.array([2.0, 0.0]))
        assert idx == 1
        assert values[1] == pytest.approx(1.0, abs=1e-9)

    def test_tie_goes_to_lowest_class(self):
        kernel = KernelSpec()
        empty = np.zeros((0, 2))
        biases = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0]
        binaries = [BinarySvm(empty, np.zeros(0), b, kernel, 1.0) for b in biases]
        model = SvmModel([str(i) for i in range(6)], binaries, 2)
        idx, values = predict(model, np.array([0.3, 0.1]))
        assert values[2] == values[5] and idx == 2

    def test_sv_order_and_scaling_invariance(self, rng):
        x = rng.normal(size=(45, 3))
        y = np.repeat(np.arange(3), 15)
        x += y[:, None]
        model = ovr_train(x, y, ("a", "b", "c"), kernel=KernelSpec("rbf", 0.4))
        q = rng.normal(size=(30, 3)) + 1
        perm = []
        scaled = []
        for b in model.binaries:
            p = rng.permutation(b.support_vectors.shape[0])
            perm.append(BinarySvm(b.support_vectors[p], b.dual_coefs[p], b.bias, b.kernel, b.c))
            scaled.append(BinarySvm(b.support_vectors, 3.0 * b.dual_coefs, 3.0 * b.bias,
                                    b.kernel, 3.0 * b.c))
        np.testing.assert_allclose(SvmModel(model.classes, perm, 3).decision_values(q),
                                   model.decision_values(q), atol=1e-12)
        np.testing.assert_array_equal(SvmModel(model.classes, scaled, 3).predict(q),
                                      model.predict(q))

    def test_compiled_matches_per_binary(self, rng):
        x = rng.normal(size=(30, 4))
        y = np.repeat(np.arange(3), 10)
        for kernel in (KernelSpec(), KernelSpec("rbf", 0.2)):
            model = ovr_train(x, y, ("a", "b", "c"), kernel=kernel)
            q = rng.normal(size=(7, 4))
            want = np.stack([b.decision_function(q) for b in model.binaries], axis=1)
            np.testing.assert_allclose(model.decision_values(q), want, atol=1e-10)

    def test_dim_mismatch(self, rng):
        model = ovr_train(rng.normal(size=(6, 2)), [0, 1, 2, 0, 1, 2], "abc")
        with pytest.raises(ValueError):
            model.predict(np.zeros((1, 3)))


class TestPersistence:
    @pytest.mark.parametrize("kernel", [KernelSpec(), KernelSpec("rbf", 0.25)])
    def test_roundtrip(self, tmp_path, rng, kernel):
        x = rng.normal(size=(30, 4))
        y = np.repeat(np.arange(3), 10)
        model = ovr_train(x, y, ("a", "b", "c"), c=2.0, kernel=kernel)
        save_model(tmp_path / "m.sksvm", model)
        back = load_model(tmp_path / "m.sksvm")
        assert back.classes == model.classes and back.c == 2.0
        assert back.kernel == kernel
        q = rng.normal(size=(10, 4))
        np.testing.assert_array_equal(back.decision_values(q), model.decision_values(q))

    def test_version(self, tmp_path, rng):
        model = ovr_train(rng.normal(size=(4, 2)), [0, 1, 0, 1], "ab")
        save_model(tmp_path / "m", model)
        raw = (tmp_path / "m").read_bytes()
        (tmp_path / "m").write_bytes(b"SKSVM9" + raw[6:])
        with pytest.raises(ContainerVersionError):
            load_model(tmp_path / "m")
