import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20261018)


def random_tangent(rng, count, dim, max_norm):
    """Uniform random directions with norms uniform in [0, max_norm]."""
    v = rng.standard_normal((count, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.uniform(0.0, max_norm, size=(count, 1))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
