import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multistab import CouplingConfig
from multistab.equilibria import enumerate_equilibria
from multistab.integrate import IntegrationSettings, simulate
from multistab.lyapunov import LyapunovSpectrum, classify, orthonormalize, spectrum


def _trace(states, p, c):
    # divergence of the network field written out from the model equations
    x, y = states[:, 0::2], states[:, 1::2]
    m = 1 / (1 + np.exp((p.m_half - x) / p.k_m))
    dm = m * (1 - m) / p.k_m
    a = (-p.g_leak - p.g_na * (dm * (x - p.e_na) + m) - p.g_k * y) / p.capacitance
    deg = c.degrees
    return (a.sum(axis=1) - c.n_units / p.tau - (c.eps_x + c.eps_y) * deg.sum())


def test_node_exponents_are_eigenvalues(params):
    c = CouplingConfig.all_to_all(2, 0.05)
    node = [e for e in enumerate_equilibria(params, c) if e.is_stable][0]
    spec = spectrum(node.state, None, params, c, t_average=2000.0)
    assert np.all(spec.exponents < 0)
    assert np.allclose(spec.exponents, np.sort(node.eigenvalues.real)[::-1], atol=1e-2)


def test_spectrum_sum_matches_mean_trace(params, lala_orbit):
    c = lala_orbit.c
    t_avg = 600.0
    spec = spectrum(lala_orbit.anchor, None, params, c, t_average=t_avg)
    cfg = IntegrationSettings(t_transient=0.0, t_total=t_avg, sample_dt=0.002)
    tr = _trace(simulate(lala_orbit.anchor, params, c, cfg).states, params, c)
    mean_tr = np.trapezoid(tr, dx=0.002) / t_avg
    assert spec.exponents.sum() == pytest.approx(mean_tr, abs=1e-2)


def test_leading_exponent_of_periodic_orbit_is_zero(params, lala_orbit):
    spec = spectrum(lala_orbit.anchor, 2, params, lala_orbit.c, t_average=3000.0)
    assert abs(spec.exponents[0]) < 1e-3
    assert spec.exponents[1] < -0.1
    assert spec.k == 2 and spec.t_average == 3000.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 8))
def test_orthonormalize(seed, k):
    v = np.random.default_rng(seed).normal(size=(8, k))
    q, r = orthonormalize(v)
    assert np.allclose(q.T @ q, np.eye(k), atol=1e-10)
    assert np.all(r > 0)
    # |det| of the column span is preserved
    assert np.prod(r) == pytest.approx(np.sqrt(np.linalg.det(v.T @ v)), rel=1e-8)


def _spec(ex, converged=True):
    ex = np.array(ex, float)
    return LyapunovSpectrum(ex, 1.0, 1000.0, ex, converged)


def test_classification_rules():
    amps = np.array([40.0, 40.0])
    assert classify(_spec([1e-4, -0.3, -1.0]), amps) == "periodic"
    assert classify(_spec([2e-4, -5e-4, -0.1]), amps) == "quasiperiodic"
    assert classify(_spec([0.05, 0.0, -0.2]), amps) == "chaotic"
    assert classify(_spec([-0.1, -0.2]), np.array([0.1, 0.2])) == "equilibrium"
    assert classify(_spec([1e-4, -0.3], converged=False), amps) == "unclassified"
    assert classify(None, amps) == "unclassified"
    assert classify(_spec([-0.1, -0.3]), amps) == "unclassified"


def test_argument_validation(params):
    c = CouplingConfig.all_to_all(2, 0.1)
    with pytest.raises(ValueError):
        spectrum(np.zeros(4), 5, params, c)
    with pytest.raises(ValueError):
        spectrum(np.zeros(4), 2, params, c, t_average=0.0)
