import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elastic_dimer.kernels import ElasticMedium
from elastic_dimer.resonance import (DIPOLAR, HYBRID, MODE_BLOCK, QUADRUPOLAR, FormulaDomainError, SpectrumError,
                                     asymptotic_frequencies, beta_as_a_vector, cosine_similarity,
                                     direct_characteristic_search, generalized_spectrum, smallest_singular_value)
from elastic_dimer.rigid_space import BLOCKS, single_gap_constants

ETA = 1e-4


@pytest.fixture(scope="module")
def spec(coarse_capacity, medium):
    return generalized_spectrum(coarse_capacity.E, coarse_capacity.B, medium, ETA)


def test_twelve_labelled_modes(spec, coarse_capacity):
    assert sorted(e.mode for e in spec.entries) == list(range(1, 13))
    assert np.all(spec.lambdas >= 0)
    assert np.all(np.diff(spec.omegas) >= -1e-12 * spec.omegas.max())
    Es = 0.5 * (coarse_capacity.E + coarse_capacity.E.T)
    B = coarse_capacity.B
    for e in spec.entries:
        a = e.a_vector
        assert a @ B @ a == pytest.approx(1.0, rel=1e-12)
        assert np.linalg.norm(Es @ a - e.lambda_gen * B @ a) <= 1e-10 * np.linalg.norm(Es)
        assert MODE_BLOCK[e.mode][0] == e.block
        assert e.block_fraction > 0.99


def test_classification(spec):
    assert spec.mode(1).classification == QUADRUPOLAR
    assert spec.mode(2).classification == DIPOLAR
    assert spec.mode(3).classification == QUADRUPOLAR
    assert spec.mode(4).classification == DIPOLAR
    assert all(spec.mode(i).classification == HYBRID for i in range(5, 13))


def test_blocks_degenerate(spec):
    assert spec.degeneracy_34() < 1e-6


def test_sign_convention(spec):
    for i, ref in ((1, 8), (3, 9), (5, 4), (9, 5)):
        assert spec.mode(i).a_vector[ref] > 0


@given(st.floats(1e-8, 1e-1), st.floats(1.5, 16.0))
@settings(max_examples=25, deadline=None)
def test_eta_scaling_exact(coarse_capacity, eta, factor):
    m = ElasticMedium(1.0, 1.0, 1.0)
    a = generalized_spectrum(coarse_capacity.E, coarse_capacity.B, m, eta)
    b = generalized_spectrum(coarse_capacity.E, coarse_capacity.B, m, eta * factor)
    np.testing.assert_allclose(b.omegas, math.sqrt(factor) * a.omegas, rtol=1e-13)
    np.testing.assert_allclose(a.scaled(eta * factor).omegas, b.omegas, rtol=1e-13)


def test_density_enters_as_inverse_root(coarse_capacity):
    a = generalized_spectrum(coarse_capacity.E, coarse_capacity.B, ElasticMedium(1.0, 1.0, 1.0), ETA)
    b = generalized_spectrum(coarse_capacity.E, coarse_capacity.B, ElasticMedium(1.0, 1.0, 4.0), ETA)
    np.testing.assert_allclose(b.omegas, a.omegas / 2, rtol=1e-13)


def test_synthetic_diagonal(medium):
    rng = np.random.default_rng(3)
    lam = np.sort(rng.uniform(0.1, 5.0, 12))
    B = np.diag(rng.uniform(1.0, 2.0, 12))
    E = B @ np.diag(lam)
    sp = generalized_spectrum(E, B, medium, 1.0)
    np.testing.assert_allclose(np.sort(sp.lambdas), lam, rtol=1e-12)


def test_input_errors(coarse_capacity, medium):
    E, B = coarse_capacity.E, coarse_capacity.B
    with pytest.raises(SpectrumError):
        generalized_spectrum(E[:6, :6], B[:6, :6], medium, ETA)
    with pytest.raises(SpectrumError):
        generalized_spectrum(E, B, medium, 0.0)
    Bn = B.copy()
    Bn[0, 1] += 1.0
    with pytest.raises(SpectrumError, match="symmetric"):
        generalized_spectrum(E, Bn, medium, ETA)
    with pytest.raises(SpectrumError, match="positive definite"):
        generalized_spectrum(E, -B, medium, ETA)
    En = E.copy()
    En[0, 2] += 0.1 * np.linalg.norm(E)
    with pytest.raises(SpectrumError, match="symmetric"):
        generalized_spectrum(En, B, medium, ETA)
    with pytest.raises(SpectrumError, match="negative"):
        generalized_spectrum(E - 10 * np.linalg.norm(E) * B, B, medium, ETA)


def test_closed_form_domain(coarse_capacity, medium):
    C = single_gap_constants(coarse_capacity.E, 1e-2, medium)
    with pytest.raises(FormulaDomainError):
        asymptotic_frequencies(coarse_capacity.B, C, medium, ETA, 1.5, 1.0, coarse_capacity.E)
    f = asymptotic_frequencies(coarse_capacity.B, C, medium, ETA, 1e-2, 1.0, coarse_capacity.E)
    assert set(f.omegas) == set(range(1, 13))
    assert f.omegas[1] == pytest.approx(math.sqrt(6 * math.pi * math.log(100) * ETA / (4 * math.pi / 3)))


def test_beta_embedding():
    a = beta_as_a_vector(3, np.array([1.0, 2.0, 3.0, 4.0]))
    assert list(a[list(BLOCKS[3])]) == [1, 2, 3, 4]
    assert a.sum() == 10
    assert cosine_similarity(a, -2 * a) == pytest.approx(1.0)


def test_smallest_singular_value():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(40, 40)) + 1j * rng.normal(size=(40, 40))
    assert smallest_singular_value(A) == pytest.approx(np.linalg.svd(A, compute_uv=False).min(), rel=1e-6)


def test_direct_search_grid_checks(coarse_dimer, medium, contrasts):
    out = direct_characteristic_search(coarse_dimer.mesh, medium, contrasts, [])
    assert out.minima == []
    with pytest.raises(ValueError):
        direct_characteristic_search(coarse_dimer.mesh, medium, contrasts, [0.0, 0.1])
