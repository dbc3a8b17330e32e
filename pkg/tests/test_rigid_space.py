import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elastic_dimer.rigid_space import (BLOCKS, assemble_B, ball_quadrature, b_zero_pattern, check_structure,
                                       constants_from_fits, e_zero_pattern, fit_log_constants, generators,
                                       log_slopes, single_gap_constants, xi_at)

VOL = 4 * math.pi / 3


def test_generators_formula():
    x = np.array([0.3, -0.7, 1.1])
    g = generators(x)
    np.testing.assert_array_equal(g[:3], np.eye(3))
    np.testing.assert_allclose(g[3], [x[1], -x[0], 0])
    np.testing.assert_allclose(g[4], [x[2], 0, -x[0]])
    np.testing.assert_allclose(g[5], [0, x[2], -x[1]])


def test_xi_support_by_component():
    pts = np.array([[0.1, 0.2, 1.5], [0.1, 0.2, -1.5]])
    xi = xi_at(pts, np.array([0, 1]))
    assert np.all(xi[:6, 1] == 0) and np.all(xi[6:, 0] == 0)
    np.testing.assert_array_equal(xi[:6, 0], generators(pts[0]))


@pytest.mark.parametrize("gap", [1e-2, 1e-4])
def test_B_analytic_exact(gap):
    from elastic_dimer import DimerConfig
    from elastic_dimer.geometry import build_sphere_dimer
    B = assemble_B(build_sphere_dimer(DimerConfig(gap=gap, refinement=0, max_panels=50000)))
    for c in (0, 6):
        assert B[c, c] == pytest.approx(VOL, rel=1e-14)
        assert B[c + 3, c + 3] == pytest.approx(8 * math.pi / 15, rel=1e-14)
    assert B[0, 4] == pytest.approx(VOL * (1 + gap / 2), rel=1e-14)
    assert B[6, 10] == pytest.approx(-VOL * (1 + gap / 2), rel=1e-14)
    assert B[1, 5] == pytest.approx(B[0, 4], rel=1e-14)
    assert all(B[i - 1, j - 1] == 0 for i, j in b_zero_pattern())
    np.testing.assert_array_equal(B, B.T)


def test_B_surface_route(coarse_dimer):
    Ba = assemble_B(coarse_dimer)
    Bs = assemble_B(coarse_dimer, method="surface")
    nz = Ba != 0
    np.testing.assert_allclose(Bs[nz], Ba[nz], rtol=0.01)
    assert np.abs(Bs[~nz]).max() <= 0.01 * np.abs(Ba).max()
    with pytest.raises(ValueError):
        assemble_B(coarse_dimer, method="monte-carlo")


def test_zero_patterns():
    assert len(e_zero_pattern()) == 2 * 10 + 2 * 10 + 4 * 8 + 4 * 8
    blocks = sorted(i for b in BLOCKS.values() for i in b)
    assert blocks == list(range(12))
    # B couples only translation/rotation pairs inside each ball
    assert len(b_zero_pattern()) == 144 - 12 - 8


def test_density_residuals(coarse_capacity, medium):
    from elastic_dimer.boundary_ops import assemble_single_layer
    from elastic_dimer.rigid_space import solve_density_basis
    S = assemble_single_layer(coarse_capacity.geometry.mesh, medium).matrix
    d = solve_density_basis(coarse_capacity.solver, coarse_capacity.rigid, matrix=S)
    assert d.residuals.max() < 1e-10


def test_E_structure_coarse(coarse_capacity):
    rep = check_structure(coarse_capacity.B, coarse_capacity.E, gap=1e-2)
    assert rep.passed, rep.values


@given(st.floats(0.5, 20.0), st.floats(-30.0, 30.0), st.floats(-20.0, -1.0))
@settings(max_examples=40, deadline=None)
def test_log_fit_recovers_synthetic(s, c, s2):
    gaps = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4]
    sweep = []
    for g in gaps:
        E = np.zeros((12, 12))
        E[0, 0] = s * abs(math.log(g)) + c
        E[0, 6] = E[6, 0] = s2 * abs(math.log(g)) - c
        sweep.append((g, E))
    fits = fit_log_constants(sweep, entries=[(1, 1), (1, 7)])
    assert fits[(1, 1)].slope == pytest.approx(s, rel=1e-10)
    assert fits[(1, 1)].intercept == pytest.approx(c, abs=1e-9 * max(1, abs(s)))
    assert fits[(1, 7)].slope == pytest.approx(s2, rel=1e-10)
    assert fits[(1, 1)].residual < 1e-9 * max(1.0, abs(s), abs(c))
    C = constants_from_fits(fits)
    assert C[(7, 1)] == C[(1, 7)]


def test_log_fit_needs_four_gaps():
    with pytest.raises(ValueError):
        fit_log_constants([(1e-2, np.eye(12))] * 3)


def test_log_slopes_canonical(medium):
    s = log_slopes(medium)
    assert s[(1, 1)] == pytest.approx(math.pi)
    assert s[(3, 3)] == pytest.approx(3 * math.pi)
    assert s[(1, 7)] == -s[(1, 1)] and s[(3, 9)] == -s[(3, 3)]


def test_single_gap_constants_inverts_slope(medium):
    eps = 1e-3
    E = np.zeros((12, 12))
    for (i, j), s in log_slopes(medium).items():
        E[i - 1, j - 1] = E[j - 1, i - 1] = s * abs(math.log(eps)) + 0.25 * i
    C = single_gap_constants(E, eps, medium)
    assert C[(3, 9)] == pytest.approx(0.75)
    assert C[(8, 2)] == pytest.approx(0.5)


def test_ball_quadrature_moments():
    p, w = ball_quadrature([0.0, 0.0, 2.0], 1.0)
    assert w.sum() == pytest.approx(VOL, rel=1e-13)
    assert (w * p[:, 2]).sum() == pytest.approx(2 * VOL, rel=1e-13)
    assert (w * p[:, 0] ** 2).sum() == pytest.approx(VOL / 5, rel=1e-12)
