import numpy as np
import pytest

from fpkpinn.net import JetBatch, MlpParams, xavier_init


def random_params(sizes, seed, scale=1.0, bias_scale=0.3):
    rng = np.random.default_rng(seed)
    params = xavier_init(sizes, seed)
    for w in params.weights:
        w *= scale
    for b in params.biases:
        b[:] = bias_scale * rng.standard_normal(b.shape)
    return params


def mixed_objective(jets: JetBatch):
    """A scalar touching every jet entry, with its cotangent."""
    n = len(jets)
    d = jets.hess.shape[1]
    cg = np.linspace(0.3, -0.7, d + 1)
    val = np.sum(jets.value ** 2 + jets.grad @ cg + 0.25 * np.sum(jets.hess ** 2, axis=(1, 2))
                 + 0.1 * jets.value * jets.hess[:, 0, d - 1]) / n
    cot = JetBatch(
        (2 * jets.value + 0.1 * jets.hess[:, 0, d - 1]) / n,
        np.tile(cg, (n, 1)) / n,
        0.5 * jets.hess / n,
    )
    cot.hess[:, 0, d - 1] += 0.1 * jets.value / n
    return val, cot


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_net():
    return random_params([3, 6, 5, 1], seed=3)


ACCEPTANCE = {}


def verdict(number, ok, detail):
    """Record and print one acceptance line, then fail the test if needed."""
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
