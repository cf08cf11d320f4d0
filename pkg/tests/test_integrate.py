import math

import numpy as np
import pytest

from multistab import CouplingConfig, ModelParams
from multistab.integrate import (A, B, BTILDE, C, R, BlowUpError, DivergenceError, IntegrationSettings,
                                 Integrator, LiveIntegration, Section, Trajectory, integrate,
                                 locate_crossings, simulate)
from multistab.model import compile_system, network_kernel, network_rhs


def _conditions(b, a, c):
    """Runge-Kutta order conditions up to order 5 as (lhs, rhs) pairs keyed by order."""
    ac, ac2, ac3 = a @ c, a @ c**2, a @ c**3
    aac = a @ ac
    return {
        1: [(b.sum(), 1)],
        2: [(b @ c, 1 / 2)],
        3: [(b @ c**2, 1 / 3), (b @ ac, 1 / 6)],
        4: [(b @ c**3, 1 / 4), (b @ (c * ac), 1 / 8), (b @ ac2, 1 / 12), (b @ aac, 1 / 24)],
        5: [(b @ c**4, 1 / 5), (b @ (c**2 * ac), 1 / 10), (b @ (c * ac2), 1 / 15), (b @ (c * aac), 1 / 30),
            (b @ ac**2, 1 / 20), (b @ ac3, 1 / 20), (b @ (a @ (c * ac)), 1 / 40), (b @ (a @ ac2), 1 / 60),
            (b @ (a @ aac), 1 / 120)],
    }


def test_tableau_is_consistent():
    assert np.allclose(A.sum(axis=1), C, atol=1e-14)
    # first-same-as-last
    assert np.array_equal(A[6, :6], B[:6]) and B[6] == 0.0


def test_fifth_order_conditions():
    for order, conds in _conditions(B, A, C).items():
        for lhs, rhs in conds:
            assert lhs == pytest.approx(rhs, abs=1e-12), order


def test_embedded_method_is_fourth_order_not_fifth():
    bhat = B - BTILDE
    conds = _conditions(bhat, A, C)
    for order in (1, 2, 3, 4):
        for lhs, rhs in conds[order]:
            assert lhs == pytest.approx(rhs, abs=1e-12)
    assert max(abs(lhs - rhs) for lhs, rhs in conds[5]) > 1e-6


def test_interpolant_matches_step_and_is_fourth_order():
    assert np.allclose(R.sum(axis=1), B, atol=1e-13)
    for theta in (0.2, 0.5, 0.9):
        w = R @ theta ** np.arange(1, 5)
        # b(theta) must satisfy the order conditions scaled by theta^order
        ac = A @ C
        pairs = [(w.sum(), theta), (w @ C, theta**2 / 2), (w @ C**2, theta**3 / 3), (w @ ac, theta**3 / 6),
                 (w @ C**3, theta**4 / 4), (w @ (C * ac), theta**4 / 8), (w @ (A @ C**2), theta**4 / 12),
                 (w @ (A @ ac), theta**4 / 24)]
        for lhs, rhs in pairs:
            assert lhs == pytest.approx(rhs, abs=1e-12)


def _oscillator(t, y):
    return np.array([y[1], -y[0] + 0.1 * math.sin(y[0])])


def _fixed_step_error(h):
    # loose tolerances make every step accepted, so h_max fixes the step
    it = Integrator(_oscillator, [1.0, 0.0], abs_tol=1e6, rel_tol=1e6, h_max=h)
    it.advance(8.0, clip=True, record=False)
    return it.y


def test_empirical_order_is_five():
    ref_it = Integrator(_oscillator, [1.0, 0.0], abs_tol=1e-14, rel_tol=1e-14)
    ref_it.advance(8.0, clip=True, record=False)
    hs = np.array([0.2, 0.1, 0.05])
    errs = np.array([np.linalg.norm(_fixed_step_error(h) - ref_it.y) for h in hs])
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert abs(slope - 5.0) < 0.3, slope


def test_dense_output_on_linear_system():
    it = Integrator(lambda t, y: np.array([-0.5 * y[0]]), [2.0], abs_tol=1e-12, rel_tol=1e-12)
    it.start_sampling(0.0, 0.013)
    ts, ys = it.advance(5.0)
    assert ts.size > 300
    assert np.max(np.abs(ys[:, 0] - 2.0 * np.exp(-0.5 * ts))) < 1e-9


def test_sampling_grid_and_transient():
    cfg = IntegrationSettings(t_transient=2.0, t_total=5.0, sample_dt=0.25)
    traj = integrate(lambda t, y: -y, [1.0], cfg)
    assert len(traj) == cfg.n_samples == 13
    assert np.allclose(traj.times, 2.0 + 0.25 * np.arange(13))


def test_chunked_advance_matches_single_run(params):
    c = CouplingConfig.all_to_all(2, 0.15)
    s0 = np.array([-20.0, 0.3, -60.0, 0.01])
    args = compile_system(params, c)
    one = Integrator(network_kernel, s0, args=args)
    one.start_sampling(0.0, 0.5)
    t1, y1 = one.advance(50.0)
    two = Integrator(network_kernel, s0, args=args)
    two.start_sampling(0.0, 0.5)
    parts = [two.advance(t) for t in (7.3, 19.9, 33.0, 50.0)]
    t2 = np.concatenate([p[0] for p in parts])
    y2 = np.concatenate([p[1] for p in parts])
    assert np.array_equal(t1, t2) and np.array_equal(y1, y2)


def test_compiled_and_python_modes_agree(params):
    c = CouplingConfig.all_to_all(2, 0.1)
    s0 = np.array([-30.0, 0.2, -62.0, 0.0])
    cfg = IntegrationSettings(t_transient=0.0, t_total=10.0, sample_dt=1.0)
    fast = simulate(s0, params, c, cfg)
    slow = integrate(lambda t, y: network_rhs(y, params, c), s0, cfg)
    assert np.allclose(fast.states, slow.states, rtol=1e-10, atol=1e-10)


def test_event_location_on_oscillator():
    sec = Section(np.array([1.0, 0.0]), 0.0)
    it = Integrator(lambda t, y: np.array([y[1], -y[0]]), [0.0, 1.0], abs_tol=1e-12, rel_tol=1e-12,
                    event=sec, event_direction=+1)
    it.advance(20.0, record=False)
    # x = sin t crosses zero upward at multiples of 2 pi
    assert np.allclose(it.event_times, [2 * np.pi, 4 * np.pi, 6 * np.pi], atol=1e-9)


def test_locate_crossings_live_vs_stored():
    rhs = lambda t, y: np.array([y[1], -y[0]])  # noqa: E731
    cfg = IntegrationSettings(abs_tol=1e-12, rel_tol=1e-12, t_transient=0.0, t_total=13.0, sample_dt=0.01)
    sec = Section(np.array([1.0, 0.0]), 0.5)
    live = locate_crossings(LiveIntegration(rhs, np.array([0.0, 1.0]), cfg), sec, direction=-1)
    stored = locate_crossings(integrate(rhs, [0.0, 1.0], cfg), sec, direction=-1)
    assert len(live) == len(stored) == 2
    assert np.allclose([t for t, _ in live], [t for t, _ in stored], atol=1e-7)
    assert np.allclose([t for t, _ in live], [5 * np.pi / 6, 5 * np.pi / 6 + 2 * np.pi], atol=1e-9)


def test_blow_up_and_step_limit_raise():
    with pytest.raises((BlowUpError, DivergenceError)):
        Integrator(lambda t, y: y**2, [1.0]).advance(2.0)
    it = Integrator(lambda t, y: -y, [1.0], max_steps=5)
    with pytest.raises(DivergenceError):
        it.advance(100.0)


def test_settings_validation():
    with pytest.raises(ValueError):
        IntegrationSettings(t_transient=10.0, t_total=5.0)
    with pytest.raises(ValueError, match="unknown"):
        IntegrationSettings.from_dict({"atol": 1e-9})


def test_trajectory_csv_roundtrip(tmp_path):
    traj = Trajectory(np.arange(3.0), np.arange(12.0).reshape(3, 4) / 7)
    traj.to_csv(tmp_path / "t.csv")
    back = Trajectory.from_csv(tmp_path / "t.csv")
    assert np.array_equal(back.times, traj.times) and np.array_equal(back.states, traj.states)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t,x1,y1,x2,y2"
