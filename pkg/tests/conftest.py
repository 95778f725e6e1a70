import numpy as np
import pytest

from frobnet.net_ir import Network

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def random_net(rng, d_in, depth, width, d_out=1, scale=1.0, sparsity=0.0):
    dims = [d_in] + [width] * depth
    hidden = []
    for i in range(depth):
        w = rng.normal(scale=scale, size=(dims[i + 1], dims[i]))
        if sparsity:
            w[rng.random(w.shape) < sparsity] = 0.0
        hidden.append((w, rng.normal(scale=scale, size=dims[i + 1])))
    final = rng.normal(scale=scale, size=(d_out, dims[-1]))
    return Network.from_dense(hidden, final)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
