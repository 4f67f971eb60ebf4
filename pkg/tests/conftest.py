import numpy as np
import pytest

from sysid_clt.model import NoiseModel, ProblemInstance


def random_stable(rng, d, radius=None, sigma_w=None):
    """Random non-normal A rescaled to spectral radius ``radius`` (uniform in [0.1, 0.95] if None)."""
    a = rng.standard_normal((d, d))
    rad = max(abs(np.linalg.eigvals(a)))
    target = rng.uniform(0.1, 0.95) if radius is None else radius
    a *= target / rad
    if sigma_w is None:
        b = rng.standard_normal((d, d))
        sigma_w = b @ b.T / d + 0.5 * np.eye(d)
    return ProblemInstance(a, NoiseModel.gaussian(sigma_w))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
