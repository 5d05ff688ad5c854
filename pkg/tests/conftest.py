import functools
import sys

import pytest

from antibunch import (
    build_aperture,
    default_geometry,
    default_rate_model,
    detector_convolve,
    expected_rates,
    gamma_from_amplitude,
    propagate_biphoton,
    simulate_scan,
    singles_envelope,
)
from antibunch.wave import DEFAULT_DETECTOR_GRID


@pytest.fixture(scope="session")
def geom():
    return default_geometry()


@pytest.fixture(scope="session")
def aperture(geom):
    return build_aperture(geom)


@pytest.fixture(scope="session")
def psi(geom, aperture):
    return propagate_biphoton(aperture, geom, DEFAULT_DETECTOR_GRID)


@pytest.fixture(scope="session")
def gamma(psi):
    return gamma_from_amplitude(psi)


@pytest.fixture(scope="session")
def gamma_conv(gamma, geom):
    return detector_convolve(gamma, geom)


def run_scan(plan, gamma_map, g):
    """Poisson scan of ``plan`` over a (convolved) map with the default rates."""
    env = functools.partial(singles_envelope, g=g)
    return simulate_scan(plan, expected_rates(plan, gamma_map, env, default_rate_model(g)))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
