import numpy as np
import pytest

from kernelstream.kernel_core import KernelSpec, default_test_function
from kernelstream.streaming_regression import ObservationLog


@pytest.fixture
def kernel():
    return KernelSpec(0.3)


@pytest.fixture
def truth():
    return default_test_function()


def random_log(seed, n, truth=None, sigma=0.1):
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0.0, 1.0, n)
    f = truth(xs) if truth is not None else np.sin(6 * xs)
    return ObservationLog.from_arrays(xs, f + sigma * rng.standard_normal(n))


def dense_posterior(xs, ys, lam, kernel, probes):
    """Textbook dual-form posterior by explicit solves, for cross-checks."""
    d = xs[:, None] - xs[None, :]
    K = np.exp(-d * d / (2 * kernel.length_scale**2))
    dp = probes[:, None] - xs[None, :]
    Kp = np.exp(-dp * dp / (2 * kernel.length_scale**2))
    A = K + lam * np.eye(len(xs))
    w = np.linalg.solve(A, ys)
    mean = Kp @ w
    var = 1.0 - np.einsum("ij,ji->i", Kp, np.linalg.solve(A, Kp.T))
    return w, mean, var


ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE.append((n, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
