import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elastic_dimer import DimerConfig
from elastic_dimer.boundary_ops import EvaluationError
from elastic_dimer.fields import (aux_field, aux_gradient_predictor, blowup_sweep, eigenmode_trace, midline_point,
                                  probe_xprime, trace_error, vbar, weighted_loglog_fit)
from elastic_dimer.resonance import generalized_spectrum
from elastic_dimer.rigid_space import generators

ETA = 1e-4


@pytest.fixture(scope="module")
def spec(coarse_capacity, medium):
    return generalized_spectrum(coarse_capacity.E, coarse_capacity.B, medium, ETA)


def _gap_points(geom, n=6, seed=0):
    rng = np.random.default_rng(seed)
    ch = geom.chart
    r = rng.uniform(0, 0.8 * ch.r0, n)
    t = rng.uniform(0, 2 * np.pi, n)
    xp = np.column_stack([r * np.cos(t), r * np.sin(t)])
    s = rng.uniform(0.1, 0.9, n)
    z = ch.lower(xp) + s * (ch.upper(xp) - ch.lower(xp))
    return np.column_stack([xp, z])


def test_vbar_on_graphs(coarse_dimer):
    ch = coarse_dimer.chart
    xp = np.array([[0.05, 0.02], [0.0, 0.0]])
    up = np.column_stack([xp, ch.upper(xp)])
    lo = np.column_stack([xp, ch.lower(xp)])
    np.testing.assert_allclose(vbar(coarse_dimer, up), 1.0, atol=1e-12)
    np.testing.assert_allclose(vbar(coarse_dimer, lo), 0.0, atol=1e-12)


@pytest.mark.parametrize("i", range(1, 13))
def test_aux_field_traces(coarse_dimer, medium, i):
    ch = coarse_dimer.chart
    xp = np.array([[0.04, -0.03]])
    up = np.column_stack([xp, ch.upper(xp)])
    lo = np.column_stack([xp, ch.lower(xp)])
    g = generators(np.vstack([up, lo]))[(i - 1) % 6]
    on, off = (up, lo) if i <= 6 else (lo, up)
    np.testing.assert_allclose(aux_field(coarse_dimer, medium, i, on)[0], g[0 if i <= 6 else 1], atol=1e-12)
    np.testing.assert_allclose(aux_field(coarse_dimer, medium, i, off)[0], 0.0, atol=1e-12)


@pytest.mark.parametrize("i", [1, 2, 3, 4, 5, 6, 9, 12])
def test_aux_gradient_matches_fd(coarse_dimer, medium, i):
    x = _gap_points(coarse_dimer)
    h = 1e-7
    g = aux_gradient_predictor(coarse_dimer, medium, i, x)
    for k, e in enumerate(np.eye(3)):
        fd = (aux_field(coarse_dimer, medium, i, x + h * e) - aux_field(coarse_dimer, medium, i, x - h * e)) / (2 * h)
        np.testing.assert_allclose(g[:, :, k], fd, rtol=1e-5, atol=1e-5 * np.abs(g).max())


def test_aux_domain_checks(coarse_dimer, medium):
    with pytest.raises(ValueError):
        aux_field(coarse_dimer, medium, 0, [0, 0, 0])
    with pytest.raises(ValueError):
        aux_field(coarse_dimer, medium, 1, [0, 0, 0.5])
    with pytest.raises(ValueError):
        aux_gradient_predictor(coarse_dimer, medium, 1, [5.0, 0, 0])


@given(st.floats(-2.0, 1.0), st.floats(-5.0, 5.0))
@settings(max_examples=40, deadline=None)
def test_weighted_fit_exact_power(p, c):
    eps = np.array([1e-2, 3e-3, 1e-3, 3e-4, 1e-4])
    s, ic, res = weighted_loglog_fit(eps, math.exp(c) * eps**p)
    assert s == pytest.approx(p, abs=1e-9)
    assert ic == pytest.approx(c, abs=1e-8)
    assert res < 1e-9


def test_weighted_fit_discounts_largest_gap():
    eps = np.array([1e-2, 1e-3, 1e-4, 1e-5])
    v = eps**-1.0
    v[0] *= 3.0
    full = weighted_loglog_fit(eps, v, largest_weight=1.0)[0]
    half = weighted_loglog_fit(eps, v)[0]
    assert abs(half + 1) < abs(full + 1)


def test_mode_trace_rigid(spec, coarse_capacity, medium):
    for m in (1, 2, 4):
        fld = eigenmode_trace(spec.mode(m), coarse_capacity.density, coarse_capacity.geometry, medium)
        assert trace_error(fld, stride=17) < 0.05


def test_trace_from_raw_vector(spec, coarse_capacity, medium):
    e = spec.mode(2)
    a = eigenmode_trace(e.a_vector, coarse_capacity.density, coarse_capacity.geometry, medium, mode=2)
    b = eigenmode_trace(e, coarse_capacity.density, coarse_capacity.geometry, medium)
    np.testing.assert_array_equal(a.density, b.density)
    with pytest.raises(ValueError):
        eigenmode_trace(np.full(12, np.nan), coarse_capacity.density, coarse_capacity.geometry, medium)


def test_probe_choices(coarse_dimer):
    r = math.sqrt(coarse_dimer.gap / coarse_dimer.chart.kappa)
    np.testing.assert_allclose(probe_xprime("offaxis", 3, coarse_dimer), [r, 0])
    np.testing.assert_allclose(probe_xprime("offaxis", 11, coarse_dimer), [0, r])
    np.testing.assert_allclose(probe_xprime("r=0.01", 1, coarse_dimer), [0.01, 0])
    with pytest.raises(ValueError, match="outside the gap chart"):
        probe_xprime(f"r={coarse_dimer.chart.r0}", 1, coarse_dimer)
    with pytest.raises(ValueError):
        probe_xprime("sup", 1, coarse_dimer)
    with pytest.raises(EvaluationError):
        midline_point(coarse_dimer, [2 * coarse_dimer.chart.r0, 0])
    assert midline_point(coarse_dimer, [0, 0])[2] == pytest.approx(0.0, abs=1e-15)


def test_sweep_argument_checks(medium):
    cfg = DimerConfig(refinement=1)
    assert blowup_sweep(cfg, medium, ETA, [], [1e-2]).samples == {}
    with pytest.raises(ValueError, match=">= 4"):
        blowup_sweep(cfg, medium, ETA, [1], [1e-2, 1e-3])


def test_sweep_with_supplied_capacity(coarse_capacity, medium):
    gaps = [1e-2, 3e-3, 1e-3, 3e-4]

    def cap(eps):
        if eps == 3e-4:
            raise RuntimeError("no mesh")
        return coarse_capacity

    sw = blowup_sweep(DimerConfig(refinement=1), medium, ETA, [1], gaps, probes={1: ("center", "r=5")},
                      capacity=cap)
    assert list(sw.failures) == [3e-4]
    assert "RuntimeError" in sw.failures[3e-4]
    # the same field at every gap: a flat series
    assert sw.fits[(1, "center")].slope == pytest.approx(0.0, abs=1e-12)
    assert len(sw.probe_failures) == 3
    assert len(sw.rows()) == 3
