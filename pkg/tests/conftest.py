import hashlib
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from quap.data import Dataset, load_idx, write_uapl, write_uapt
from quap.oracle import load_model, save_model, train_reference
from quap.synthetic import two_gaussian_task

settings.register_profile(
    "quap", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("quap")

MNIST_DIR = Path(os.environ.get("QUAP_MNIST_DIR", "/root/data/mnist"))
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
# the desk-scale oracle: 784-128-10 relu MLP, 5 epochs of SGD
ORACLE_RECIPE = dict(hidden=(128,), learning_rate=0.1, epochs=5, seed=0, batch_size=64)


def mnist_available():
    return all((MNIST_DIR / f).exists() for f in MNIST_FILES.values())


@pytest.fixture(scope="session")
def mnist():
    if not mnist_available():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set QUAP_MNIST_DIR or run scripts/fetch_mnist.sh)")
    train = load_idx(MNIST_DIR / MNIST_FILES["train_images"], MNIST_DIR / MNIST_FILES["train_labels"])
    test = load_idx(MNIST_DIR / MNIST_FILES["test_images"], MNIST_DIR / MNIST_FILES["test_labels"])
    # holdout ids live after the training ids so the two sets never collide
    test = Dataset(test.images, test.labels, test.ids + len(train))
    return train, test


@pytest.fixture(scope="session")
def mnist_oracle(mnist, request):
    """The trained reference model, cached across sessions (training is seed-deterministic)."""
    train, test = mnist
    digest = hashlib.sha256(
        (repr(sorted(ORACLE_RECIPE.items())) + str(train.labels[:1000].tolist())).encode()
    ).hexdigest()[:16]
    cache = Path(request.config.cache.mkdir("quap")) / f"oracle-{digest}.nnw"
    if cache.exists():
        return load_model(cache, train.image_shape)
    model, _ = train_reference(train, **ORACLE_RECIPE)
    save_model(cache, model)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_images(rng, n, h=8, w=8, c=1):
    return rng.random((n, h, w, c))


@pytest.fixture(scope="session")
def toy_files(tmp_path_factory):
    """Small two-Gaussian query set, holdout and Bayes oracle written to disk."""
    d = tmp_path_factory.mktemp("toy")
    task = two_gaussian_task(side=4, separation=0.1)
    query, holdout = task.sample(600, 1), task.sample(200, 2)
    write_uapt(d / "query.uapt", query.images)
    write_uapl(d / "query.uapl", query.labels)
    write_uapt(d / "holdout.uapt", holdout.images)
    write_uapl(d / "holdout.uapl", holdout.labels)
    save_model(d / "oracle.nnw", task.bayes_model())
    return d


# ---------------------------------------------------------------- acceptance verdicts

_VERDICTS = {}


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` records criterion ``n`` and fails the test when not ok."""

    def record(n, ok, detail):
        line = f"ACCEPTANCE criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        _VERDICTS[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
