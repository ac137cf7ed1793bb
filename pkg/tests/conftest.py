import numpy as np
import pytest

from htdemucs import numerics as nx


def numeric_grad(fn, arr, h=1e-6):
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    g = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = fn()
        arr[i] = old - h
        down = fn()
        arr[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def check_op_grad(build, arrays, rng, h=1e-6, rtol=1e-5):
    """``build(*tensors)`` -> Tensor; loss is sum(out * fixed random weights)."""
    tensors = [nx.Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    w = rng.standard_normal(out.shape)
    loss = nx.tsum(nx.mul(out, nx.Tensor(w)))
    loss.backward()

    def f():
        return float(np.sum(build(*[nx.Tensor(a) for a in arrays]).data * w))

    for t, a in zip(tensors, arrays):
        num = numeric_grad(f, a, h)
        np.testing.assert_allclose(t.grad, num, rtol=rtol, atol=rtol)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
