import math

import numpy as np
import pytest

from elastic_dimer import DimerConfig
from elastic_dimer.geometry import build_sphere_dimer
from elastic_dimer.kernels import kelvin_matrix
from elastic_dimer.oracle import (MFSConfig, MFSSystem, OracleUnreliable, fibonacci_sphere, graded_sphere,
                                  kelvin_block, kelvin_block_gradient, mfs_solve, oracle_energy,
                                  oracle_energy_matrix, sphere_quadrature)

# MFS values at eps = 1e-2 (600 sources per ball, depth 0.7, grading 2, residual 1.4e-2),
# frozen from an independent run of the oracle
ORACLE_E_1E2 = {(1, 1): 30.6405, (1, 7): -19.1557, (3, 3): 53.3148, (4, 4): 26.3078}


@pytest.fixture(scope="module")
def wide():
    return build_sphere_dimer(DimerConfig(gap=0.5, refinement=0))


@pytest.fixture(scope="module")
def wide_system(wide, medium):
    return MFSSystem(wide, medium, MFSConfig(sources=300))


@pytest.mark.parametrize("kw", [{"depth": 0.95}, {"depth": 0.2}, {"oversampling": 1.2}, {"sources": 3},
                                {"grading": 0.5}])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        MFSConfig(**kw)


def test_point_layouts():
    f = fibonacci_sphere(200)
    np.testing.assert_allclose(np.linalg.norm(f, axis=1), 1.0)
    assert abs(f.mean(axis=0)).max() < 1e-2
    g = graded_sphere(400, 2.0, -1.0)
    np.testing.assert_allclose(np.linalg.norm(g, axis=1), 1.0)
    # clustered toward the south pole
    assert np.sum(g[:, 2] < -0.9) > 2 * np.sum(g[:, 2] > 0.9)
    p, n, w = sphere_quadrature(np.array([0, 0, 2.0]), 1.5, 1e-2)
    assert w.sum() == pytest.approx(4 * math.pi * 1.5**2, rel=1e-12)
    np.testing.assert_allclose(p, np.array([0, 0, 2.0]) + 1.5 * n)
    assert (w * n[:, 2]).sum() == pytest.approx(0.0, abs=1e-12)


def test_kelvin_block_matches_kernel(medium):
    x = np.array([[0.3, -0.2, 1.1]])
    y = np.array([[0.0, 0.1, -0.4], [0.2, 0.2, 0.2]])
    K = kelvin_block(medium, x, y)
    for k in range(2):
        # opposite sign convention to the library kernel
        np.testing.assert_allclose(K[0, :, k, :], -kelvin_matrix(medium, x[0] - y[k]), rtol=1e-13)


def test_kelvin_block_gradient_fd(medium):
    x = np.array([[0.3, -0.2, 1.1]])
    y = np.array([[0.0, 0.1, -0.4]])
    h = 1e-6
    g = kelvin_block_gradient(medium, x, y)
    for l, e in enumerate(np.eye(3)):
        fd = (kelvin_block(medium, x + h * e, y) - kelvin_block(medium, x - h * e, y)) / (2 * h)
        np.testing.assert_allclose(g[..., l], fd, atol=1e-9)


def test_zero_data(wide_system):
    sol = wide_system.solve(lambda x, c: np.zeros((len(x), 3)))
    assert np.all(sol.strengths == 0) and sol.reliable and sol.residual == 0


def test_planted_source(wide, medium, wide_system):
    y = np.array([0.1, -0.2, wide.centers[0, 2] + 0.3])
    c = np.array([0.4, -1.0, 0.7])

    def field(x, comp=None):
        return np.einsum("mikj,j->mi", kelvin_block(medium, np.atleast_2d(x), y[None]), c)

    sol = wide_system.solve(field)
    pts = np.array([[2.0, 0.0, 0.0], [0.0, 3.0, 1.0], [0.5, 0.5, 0.0], [10.0, -5.0, 4.0]])
    ref = field(pts)
    assert np.abs(sol.evaluate(pts) - ref).max() <= 1e-6 * np.abs(ref).max()


def test_well_separated_residual(wide, medium, wide_system):
    sol = mfs_solve(wide, medium, 1, system=wide_system)
    assert sol.residual <= 1e-4 and sol.reliable
    x = np.array([[2.0, 0.3, -0.4]])
    h = 1e-6
    fd = np.stack([(sol.evaluate(x + h * e) - sol.evaluate(x - h * e))[0] / (2 * h) for e in np.eye(3)], 1)
    np.testing.assert_allclose(sol.gradient(x)[0], fd, atol=1e-8)


def test_reliability_flags(wide, medium):
    system = MFSSystem(wide, medium, MFSConfig(sources=40, residual_threshold=1e-12))
    assert not system.solve(2).reliable
    with pytest.raises(OracleUnreliable):
        system.solve(2, strict=True)
    with pytest.raises(ValueError):
        system.solve(12)


def test_energy_structure(wide, medium):
    E, worst = oracle_energy_matrix(wide, medium, config=MFSConfig(sources=300))
    # rotations fit a little worse than translations
    assert worst < 1e-3
    n = np.linalg.norm(E)
    assert abs(E[0, 1]) <= 0.02 * n
    assert E[0, 6] == pytest.approx(E[6, 0], rel=0.01)
    assert np.abs(E - E.T).max() <= 1e-3 * n
    assert np.linalg.eigvalsh(0.5 * (E + E.T)).min() >= -1e-3 * n


def test_oracle_energy_pairs(wide, medium, wide_system):
    s0 = wide_system.solve(0)
    s6 = wide_system.solve(6)
    v, ok = oracle_energy(s0, s6)
    assert ok and v < 0
    assert oracle_energy(s0, 6)[0] == v
    anon = wide_system.solve(lambda x, c: np.ones((len(x), 3)))
    with pytest.raises(ValueError):
        oracle_energy(s0, anon)


@pytest.mark.parametrize("entry", sorted(ORACLE_E_1E2))
def test_bem_against_frozen_oracle(capacity_l2, entry):
    i, j = entry
    assert capacity_l2.E[i - 1, j - 1] == pytest.approx(ORACLE_E_1E2[entry], rel=0.05)
