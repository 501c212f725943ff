import warnings

import pytest

from coulombgas.errors import ConvergenceWarning
from coulombgas.model import gaussian_model, periodic_model
from coulombgas.sampler import ChainParams, sample_gibbs, sample_replicas

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def record(criterion: int, passed: bool, detail: str):
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def _quiet(fn, *args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        return fn(*args, **kw)


@pytest.fixture(scope="session")
def periodic_1024():
    """20 samples of the unit-density periodic gas, N = 1024."""
    model = periodic_model(1024)
    samples, _ = _quiet(sample_gibbs, model, ChainParams(0.005, 1000, 20, 100, seed=1024))
    return model, samples


@pytest.fixture(scope="session")
def gaussian_1024():
    model = gaussian_model(1024)
    samples, _ = _quiet(sample_gibbs, model, ChainParams(0.005, 1000, 20, 100, seed=2048))
    return model, samples


@pytest.fixture(scope="session")
def gaussian_512():
    """400 samples from 8 independent chains, N = 512."""
    model = gaussian_model(512)
    samples, _ = _quiet(sample_replicas, model, ChainParams(0.01, 1000, 50, 50, seed=512), 8)
    return model, samples
