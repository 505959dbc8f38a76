"""Shared fixtures and small independent oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from jmls_smoother.model import Timing, simulate
from jmls_smoother.reference import gaussian_input, gaussian_prior, random_scalar_model


def normal_pdf(x, mean, var):
    """Scalar normal density, written out directly."""
    return np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2.0 * np.pi * var)


def random_problem(seed: int, N: int = 6, m: int = 2, timing: Timing = Timing.AFTER):
    """A random scalar model, a two-mode prior and a simulated dataset."""
    rng = np.random.default_rng(seed)
    model = random_scalar_model(rng, m=m, timing=timing)
    probs = rng.dirichlet(np.ones(m))
    prior = gaussian_prior(probs, [rng.normal()], [[rng.uniform(0.5, 2.0)]])
    data = simulate(model, prior, gaussian_input(N, 1, seed + 1000), seed=seed)
    return model, prior, data


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines at the end of the run."""
    module = __import__("sys").modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
