import numpy as np
import pytest

from elastic_dimer.boundary_ops import evaluate_potential
from elastic_dimer.resonance import generalized_spectrum
from elastic_dimer.scattering import (incident_plane_wave, modal_coefficients, navier_residual, resonance_scan,
                                      total_field, total_field_gradient)

ETA = 1e-4


@pytest.fixture(scope="module")
def spec(coarse_capacity, medium):
    return generalized_spectrum(coarse_capacity.E, coarse_capacity.B, medium, ETA)


@pytest.fixture(scope="module")
def pwave(medium, spec):
    return incident_plane_wave(medium, "p", [0, 0, 1.0], omega=1.3 * spec.mode(1).omega)


def _solve(wave, spec, cap, contrasts, **kw):
    return modal_coefficients(wave, spec, cap, cap.solver, contrasts, **kw)


def test_wave_validation(medium):
    with pytest.raises(ValueError):
        incident_plane_wave(medium, "love", [0, 0, 1.0])
    with pytest.raises(ValueError):
        incident_plane_wave(medium, "p", [0, 0, 2.0])
    with pytest.raises(ValueError):
        incident_plane_wave(medium, "p", [0, 0, 1.0], omega=0.0)
    with pytest.raises(ValueError):
        incident_plane_wave(medium, "s", [0, 0, 1.0])
    with pytest.raises(ValueError, match="orthogonal"):
        incident_plane_wave(medium, "s", [0, 0, 1.0], [0, 0.6, 0.8])
    w = incident_plane_wave(medium, "s", [0, 0, 1.0], [1.0, 0, 0], omega=0.3)
    assert w.wavenumber == pytest.approx(0.3)
    assert incident_plane_wave(medium, "p", [1.0, 0, 0], omega=0.3).wavenumber == pytest.approx(0.3 / np.sqrt(3))


@pytest.mark.parametrize("kind,pol", [("p", None), ("s", [0.6, -0.8, 0.0])])
def test_plane_waves_solve_navier(medium, kind, pol):
    w = incident_plane_wave(medium, kind, [0, 0, 1.0], pol, omega=0.7)
    pts = np.random.default_rng(1).normal(size=(5, 3))
    assert navier_residual(w, pts).max() < 1e-6


def test_linear_in_amplitude(pwave, spec, coarse_capacity, contrasts):
    a = _solve(pwave, spec, coarse_capacity, contrasts)
    b = _solve(pwave.scaled(2 - 1j), spec, coarse_capacity, contrasts)
    np.testing.assert_allclose(b.b, (2 - 1j) * a.b, rtol=1e-12, atol=1e-12 * np.abs(a.b).max())
    z = _solve(pwave.scaled(0.0), spec, coarse_capacity, contrasts)
    assert np.all(z.b == 0) and np.all(z.G == 0)


def test_closed_route_matches_spectral(medium, spec, coarse_capacity, contrasts):
    # with the consistent pairing the two routes represent the same excited density
    for d in ([0, 0, 1.0], [1.0, 0, 0]):
        w = incident_plane_wave(medium, "p", d, omega=1.3 * spec.mode(1).omega)
        c = _solve(w, spec, coarse_capacity, contrasts, printed_pairing=False)
        s = _solve(w, spec, coarse_capacity, contrasts, method="spectral")
        dc, ds = c.excited_density(), s.excited_density()
        assert np.linalg.norm(dc - ds) <= 1e-10 * np.linalg.norm(ds)


def test_printed_pairing_only_moves_block3_tail(medium, spec, coarse_capacity, contrasts):
    w = incident_plane_wave(medium, "p", [1.0, 0, 0], omega=1.3 * spec.mode(1).omega)
    a = _solve(w, spec, coarse_capacity, contrasts)
    b = _solve(w, spec, coarse_capacity, contrasts, printed_pairing=False)
    np.testing.assert_allclose(a.b[:6], b.b[:6], rtol=1e-13)
    assert not np.allclose(a.b[6:8], b.b[6:8])


def test_normal_incidence_selects_block1(pwave, spec, coarse_capacity, contrasts):
    sol = _solve(pwave, spec, coarse_capacity, contrasts)
    big = np.abs(sol.b).max()
    assert np.abs(sol.b[2:]).max() <= 1e-3 * big
    assert abs(sol.b[0]) > 0 and abs(sol.b[1]) > 0


def test_pole_floor_flags(medium, spec, coarse_capacity, contrasts):
    w = incident_plane_wave(medium, "p", [0, 0, 1.0], omega=spec.mode(1).omega * (1 + 1e-5))
    sol = _solve(w, spec, coarse_capacity, contrasts)
    assert 1 in sol.flags and "omega_1" in sol.flags[1]
    assert np.isnan(sol.b[0]) and np.isfinite(sol.b[1])
    # the flagged mode drops out of the excited density
    assert np.all(np.isfinite(sol.excited_density()))


def test_unknown_method(pwave, spec, coarse_capacity, contrasts):
    with pytest.raises(ValueError):
        _solve(pwave, spec, coarse_capacity, contrasts, method="born")


def test_far_field_decay(pwave, spec, coarse_capacity, contrasts):
    sol = _solve(pwave, spec, coarse_capacity, contrasts)
    r = np.array([50.0, 100.0, 200.0, 400.0, 800.0])
    pts = np.column_stack([0.3 * np.ones(5), 0.2 * np.ones(5), r])
    modal = evaluate_potential(coarse_capacity.geometry.mesh, pwave.medium, 0.0, sol.excited_density(), pts)
    rm = r * np.linalg.norm(modal, axis=1)
    assert rm.max() < 1.01 * rm.min()
    # the radiating part mixes two wavenumbers, so only its 1/r envelope is checked
    scat = total_field(sol, pts) - pwave.evaluate(pts)
    rs = r * np.linalg.norm(scat, axis=1)
    assert rs.max() < 5 * rs.min()


def test_field_gradient_matches_fd(pwave, spec, coarse_capacity, contrasts):
    sol = _solve(pwave, spec, coarse_capacity, contrasts)
    x = np.array([[1.4, 0.3, 0.2]])
    h = 1e-5
    g = total_field_gradient(sol, x)[0]
    fd = np.stack([(total_field(sol, x + h * e) - total_field(sol, x - h * e))[0] / (2 * h) for e in np.eye(3)], 1)
    np.testing.assert_allclose(g, fd, atol=1e-6 * np.abs(g).max())


def test_scan_rows(pwave, spec, coarse_capacity, contrasts):
    assert resonance_scan(pwave, spec, coarse_capacity, coarse_capacity.solver, contrasts, []) == []
    w1 = spec.mode(1).omega
    rows = resonance_scan(pwave, spec, coarse_capacity, coarse_capacity.solver, contrasts, [1.02 * w1, 2 * w1, w1])
    assert rows[2].flags and not rows[0].flags
    assert rows[0].gap_gradient > 10 * rows[1].gap_gradient
    assert all(r.far_amplitude > 0 for r in rows)
