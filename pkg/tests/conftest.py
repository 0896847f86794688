import sys

import numpy as np
import pytest

from wspline.measures import Atoms, Gaussian, Grid2, rasterize_gaussian


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_atoms(rng, n, dim=1, scale=1.0):
    return Atoms(scale * rng.random((n, dim)), rng.random(n) + 0.1)


def raster(mean, std, M=33):
    return rasterize_gaussian(Gaussian(mean, np.diag(np.broadcast_to(std, (2,)))), Grid2(M, M))


def random_spd(rng, d=2, lo=0.2, hi=3.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return Q @ np.diag(rng.uniform(lo, hi, d)) @ Q.T


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
