import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from denseshift.datasets import default_data_root

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def numeric_grad(f, x, h=1e-4):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor=1e-12):
    """Largest elementwise deviation, relative to the larger tensor's scale.

    ``floor`` bounds the scale from below so an exactly-zero gradient (a conv
    bias feeding batchnorm) is not judged on pure roundoff.
    """
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    scale = max(np.abs(a).max(initial=0), np.abs(b).max(initial=0), floor)
    return float(np.abs(a - b).max(initial=0) / scale)


@pytest.fixture(scope="session")
def mnist_dir():
    d = default_data_root() / "mnist"
    if not (d / "train-images-idx3-ubyte").exists():
        pytest.skip(f"MNIST not found under {d}")
    return d


@pytest.fixture(scope="session")
def cifar_dir():
    d = default_data_root() / "cifar-10-batches-bin"
    if not (d / "data_batch_1.bin").exists():
        pytest.skip(f"CIFAR-10 not found under {d}")
    return d


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
