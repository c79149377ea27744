import sys

import numpy as np
import pytest

from skyf.grid import MagnetizationField, ModelParams, build_domain


@pytest.fixture(scope="session")
def small_disk():
    return build_domain("disk", {"radius": 2.0}, 0.125)


@pytest.fixture(scope="session")
def small_params(small_disk):
    return ModelParams.for_domain(small_disk, 0.5, 1.5)


def smooth_random_field(domain, seed, amplitude=1.0):
    """Random admissible field built from a few low Fourier modes."""
    rng = np.random.default_rng(seed)
    X, Y = domain.coords()
    v = np.zeros((3, domain.nx, domain.ny))
    for k in range(3):
        for _ in range(4):
            a, b, c = rng.standard_normal(3)
            v[k] += c * np.sin(a * X + b * Y + rng.uniform(0, 2 * np.pi))
    v *= amplitude
    v[2] -= 1.0
    return MagnetizationField.project(domain, v)


def pytest_terminal_summary(terminalreporter):
    verdicts = getattr(sys.modules.get("test_acceptance"), "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(verdicts):
            terminalreporter.write_line(verdicts[n])
