import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elastic_dimer.kernels import (ContrastParams, ElasticMedium, SingularityError, green_gradient, green_series_term,
                                   green_tensor, kelvin_gradient, kelvin_matrix, traction_apply, traction_kernel)

CANON = ElasticMedium(1.0, 1.0, 1.0)

media = st.builds(ElasticMedium, st.floats(0.1, 5.0), st.floats(0.2, 3.0), st.floats(0.5, 2.0))
unit_dirs = st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 0.1)


def navier(fn, x, medium, omega, h=1e-3):
    """(L + rho omega^2) applied columnwise to fn by central differences."""
    E = np.eye(3)
    f0 = fn(x)
    H = np.zeros((3, 3, 3, 3), dtype=complex)  # [i, j, k, l]
    for k in range(3):
        for l in range(3):
            if k == l:
                H[:, :, k, k] = (fn(x + h * E[k]) - 2 * f0 + fn(x - h * E[k])) / h**2
            else:
                H[:, :, k, l] = (fn(x + h * (E[k] + E[l])) - fn(x + h * (E[k] - E[l]))
                                 - fn(x - h * (E[k] - E[l])) + fn(x - h * (E[k] + E[l]))) / (4 * h * h)
    lap = np.einsum("ijkk->ij", H)
    gdiv = np.einsum("kjki->ij", H)
    return medium.mu * lap + (medium.lam + medium.mu) * gdiv + medium.rho * omega**2 * f0


def test_kelvin_closed_form():
    G = kelvin_matrix(CANON, [1.0, 0.0, 0.0])
    assert G[0, 0] == pytest.approx(-2 / (8 * math.pi), rel=1e-12)
    assert G[1, 1] == pytest.approx(-(4 / 3) / (8 * math.pi), rel=1e-12)
    assert G[0, 0] == pytest.approx(-0.0795775, abs=1e-7)
    assert G[1, 1] == pytest.approx(-0.0530516, abs=1e-7)
    assert np.count_nonzero(G - np.diag(np.diag(G))) == 0


@given(media, unit_dirs, st.floats(0.1, 10.0))
@settings(max_examples=40, deadline=None)
def test_kelvin_even_symmetric_homogeneous(m, v, t):
    x = np.asarray(v)
    G = kelvin_matrix(m, x)
    np.testing.assert_allclose(G, G.T, rtol=0, atol=1e-15 * np.abs(G).max())
    tiny = 1e-15 * np.abs(G).max()
    np.testing.assert_allclose(kelvin_matrix(m, -x), G, rtol=1e-14, atol=tiny)
    np.testing.assert_allclose(kelvin_matrix(m, t * x), G / t, rtol=1e-12, atol=tiny / t)


def test_singularity_floor():
    with pytest.raises(SingularityError):
        kelvin_matrix(CANON, [0.0, 0.0, 0.0])
    with pytest.raises(SingularityError):
        green_tensor(CANON, 0.3, [0.0, 0.0, 0.0])


def test_medium_invariants():
    with pytest.raises(ValueError):
        ElasticMedium(1.0, 0.0, 1.0).validate()
    with pytest.raises(ValueError):
        ElasticMedium(-1.0, 1.0, 1.0).validate()
    m = ElasticMedium(2.0, 1.0, 1.0)
    assert m.alpha1 > m.alpha2 > 0
    assert m.cs == 1.0 and m.cp == 2.0
    assert m.ks(0.5) == 0.5 and m.kp(0.5) == 0.25


def test_contrast_tau():
    c = ContrastParams.from_tau(1e-4, 2.0)
    assert c.delta == pytest.approx(4e-4)
    assert c.tau == pytest.approx(2.0)


def test_static_limit_exact():
    x = np.array([0.3, -0.2, 0.9])
    np.testing.assert_array_equal(green_tensor(CANON, 0.0, x), kelvin_matrix(CANON, x).astype(complex))
    np.testing.assert_allclose(green_series_term(CANON, 0, x), kelvin_matrix(CANON, x), rtol=1e-14, atol=1e-17)


def test_low_frequency_series():
    w = 1e-3
    x = np.array([0.0, 0.0, 1.0])
    series = kelvin_matrix(CANON, x) + w * green_series_term(CANON, 1) + w**2 * green_series_term(CANON, 2, x)
    assert np.abs(green_tensor(CANON, w, x) - series).max() <= 1e-8


def test_series_n1_constant():
    G1 = green_series_term(CANON, 1)
    np.testing.assert_array_equal(G1, green_series_term(CANON, 1, [3.0, 1.0, 0.0]))
    assert np.count_nonzero(G1 - G1[0, 0] * np.eye(3)) == 0
    # the alpha-weighted form of the coefficient
    alpha = green_series_term(CANON, 1, form="alpha")[0, 0]
    assert alpha.imag == pytest.approx(-(4 / 3) / (12 * math.pi) * (2 + 1 / math.sqrt(3)), rel=1e-12)
    assert alpha.imag == pytest.approx(-0.091157, abs=5e-6)


def test_series_converges_geometrically():
    x = np.array([0.4, 0.5, -0.3])
    w = 0.5
    G = green_tensor(CANON, w, x)
    errs = []
    acc = np.zeros((3, 3), dtype=complex)
    for n in range(7):
        acc = acc + w**n * green_series_term(CANON, n, x)
        errs.append(np.abs(G - acc).max())
    assert all(b < a for a, b in zip(errs[1:], errs[2:]))
    assert errs[-1] < 1e-5 * errs[0]


def test_isotropy_swap():
    P = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]])
    A = green_tensor(CANON, 0.5, [1.0, 0.0, 0.0])
    B = green_tensor(CANON, 0.5, [0.0, 1.0, 0.0])
    np.testing.assert_allclose(P @ A @ P.T, B, atol=1e-15)


@given(media, st.floats(0.0, 1.0), st.floats(0.5, 2.0), unit_dirs)
@settings(max_examples=20, deadline=None)
def test_green_pde_residual(m, w, r, v):
    x = r * np.asarray(v) / np.linalg.norm(v)
    res = [np.abs(navier(lambda y: green_tensor(m, w, y), x, m, w, h)).max() for h in (2e-3, 1e-3)]
    scale = (m.lam + 2 * m.mu) * np.abs(green_tensor(m, w, x)).max() / r**2
    assert res[1] < 1e-3 * scale
    # second-order stencil
    assert res[1] < 0.5 * res[0] or res[1] < 1e-8 * scale


def test_radial_decay():
    d = np.array([0.2, 0.5, 0.84])
    d /= np.linalg.norm(d)
    r = np.logspace(0, 2, 9)
    vals = np.array([np.abs(green_tensor(CANON, 0.7, t * d)).max() for t in r])
    assert np.all(vals * r < 2 * vals[0] * r[0])


def test_gradient_matches_fd():
    x = np.array([0.3, -0.6, 0.5])
    h = 1e-6
    for w in (0.0, 0.4):
        G = green_gradient(CANON, w, x)
        fd = np.stack([(green_tensor(CANON, w, x + h * e) - green_tensor(CANON, w, x - h * e)) / (2 * h)
                       for e in np.eye(3)], axis=-1)
        np.testing.assert_allclose(G, fd, atol=1e-8)


def _traction_fd(m, x, nu, h=1e-5):
    grad = np.stack([(kelvin_matrix(m, x + h * e) - kelvin_matrix(m, x - h * e)) / (2 * h) for e in np.eye(3)],
                    axis=-1)  # [i, j, k] = d G_ij / d x_k
    out = np.empty((3, 3))
    for j in range(3):
        out[:, j] = traction_apply(m, grad[:, j, :], nu)
    return out


@pytest.mark.parametrize("x,nu", [([0, 0, 1.0], [0, 0, 1.0]), ([0, 0, 1.0], [1.0, 0, 0])])
def test_traction_against_fd(x, nu):
    x, nu = np.asarray(x), np.asarray(nu)
    T = traction_kernel(CANON, x, nu)
    fd = _traction_fd(CANON, x, nu)
    assert np.abs(T - fd).max() <= 1e-6
    np.testing.assert_allclose(T - T.T, fd - fd.T, atol=1e-6)


@given(unit_dirs, st.floats(0.1, 10.0))
@settings(max_examples=30, deadline=None)
def test_traction_homogeneity(v, t):
    x = np.asarray(v)
    nu = np.array([0.0, 0.6, 0.8])
    np.testing.assert_allclose(traction_kernel(CANON, t * x, nu), traction_kernel(CANON, x, nu) / t**2,
                               rtol=1e-10, atol=1e-14)


def test_traction_rejects_non_unit():
    with pytest.raises(ValueError):
        traction_kernel(CANON, [1.0, 0, 0], [2.0, 0, 0])


def test_kelvin_gradient_matches_fd():
    x = np.array([0.7, 0.1, -0.4])
    h = 1e-6
    fd = np.stack([(kelvin_matrix(CANON, x + h * e) - kelvin_matrix(CANON, x - h * e)) / (2 * h) for e in np.eye(3)],
                  axis=-1)
    np.testing.assert_allclose(kelvin_gradient(CANON, x), fd, atol=1e-9)
