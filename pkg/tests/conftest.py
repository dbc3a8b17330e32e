import numpy as np
import pytest

from elastic_dimer import DimerConfig, ElasticMedium
from elastic_dimer.geometry import build_sphere_dimer
from elastic_dimer.kernels import ContrastParams
from elastic_dimer.rigid_space import compute_capacity

SWEEP_GAPS = (1e-2, 3e-3, 1e-3, 3e-4, 1e-4)
ETA = 1e-4


@pytest.fixture(scope="session")
def medium():
    return ElasticMedium(1.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def contrasts():
    return ContrastParams.from_tau(ETA, 1.0)


@pytest.fixture(scope="session")
def coarse_dimer():
    return build_sphere_dimer(DimerConfig(gap=1e-2, refinement=1))


@pytest.fixture(scope="session")
def coarse_capacity(medium):
    return compute_capacity(DimerConfig(gap=1e-2, refinement=1), medium, keep_solver=True)


@pytest.fixture(scope="session")
def capacity_l2(medium):
    return compute_capacity(DimerConfig(gap=1e-2, refinement=2), medium, keep_solver=True)


@pytest.fixture(scope="session")
def sweep(medium, capacity_l2):
    """Level-2 capacity data over the canonical five-gap sweep."""
    out = {1e-2: capacity_l2}
    for g in SWEEP_GAPS[1:]:
        out[g] = compute_capacity(DimerConfig(gap=g, refinement=2), medium)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request):
    """Recorder for one acceptance line: criterion(n, passed, detail)."""
    log = request.config.__dict__.setdefault("_acceptance", {})

    def record(n, passed, detail):
        log[n] = (bool(passed), detail)
        print(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = getattr(config, "_acceptance", None)
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(log):
        ok, detail = log[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
