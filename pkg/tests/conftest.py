import numpy as np
import pytest

from scenerec.synthetic import write_texture_corpus

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def texture_corpus(tmp_path_factory):
    """3 classes x 30 oriented-texture PGMs, 96 x 96."""
    return write_texture_corpus(tmp_path_factory.mktemp("corpus"), per_class=30, seed=7)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """3 classes x 8 images, for quick CLI plumbing tests."""
    return write_texture_corpus(tmp_path_factory.mktemp("small"), per_class=8, size=(64, 64), seed=3)


def three_blobs(seed=0, per_blob=30, spread=0.3):
    r = np.random.default_rng(seed)
    means = np.array([[0.0, 0.0], [6.0, 0.0], [3.0, 6.0]])
    x = np.concatenate([m + spread * r.standard_normal((per_blob, 2)) for m in means])
    y = np.repeat(np.arange(3), per_blob)
    return x, y


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
