import csv

import numpy as np
import pytest

from multistab import CouplingConfig, ModelParams
from multistab import continuation as co
from multistab.lyapunov import spectrum


@pytest.fixture(scope="module")
def lala_down(lala_orbit):
    return co.continue_orbit(lala_orbit, "eps", 0.0, initial_step=1e-3, max_step=5e-3, branch_id="down")


def test_lala_orbit_is_stable_and_closed(lala_orbit):
    o = lala_orbit
    assert o.residual < co.RESIDUAL_TOL
    assert abs(o.trivial_multiplier - 1.0) < 1e-6
    assert o.stability == "stable"
    phi, _, _ = co.flow(o.anchor, o.period, o.p, o.c, monodromy=False)
    assert np.max(np.abs(phi - o.anchor)) < 1e-6
    assert np.all(o.amplitudes > 20.0)


def test_lasa_orbit_has_one_large_unit(lasa_orbit):
    amps = np.sort(lasa_orbit.amplitudes)
    assert amps[1] > 20.0 and amps[0] < 20.0
    assert lasa_orbit.stability == "stable"


def test_single_unit_spikes_above_fold_only(params):
    c = CouplingConfig.all_to_all(1, 0.0)
    o = co.orbit_from_state(np.array([-20.0, 0.3]), params.replace(current=4.0), c, param="current")
    assert o.stability == "stable"
    assert o.multipliers.size == 1 and abs(o.multipliers[0]) < 1.0
    with pytest.raises(co.OrbitError):
        co.orbit_from_state(np.array([-20.0, 0.3]), params, c, param="current")


def test_flow_parameter_derivative_matches_difference(lala_orbit):
    o = lala_orbit
    _, _, dphi = co.flow(o.anchor, 0.7, o.p, o.c, param="eps", monodromy=False)
    h = 1e-6
    plus = co.flow(o.anchor, 0.7, o.p, o.c.with_eps(0.15 + h, 0.15 + h), monodromy=False)[0]
    minus = co.flow(o.anchor, 0.7, o.p, o.c.with_eps(0.15 - h, 0.15 - h), monodromy=False)[0]
    fd = (plus - minus) / (2 * h)
    assert np.allclose(dphi, fd, rtol=1e-4, atol=1e-6 * np.max(np.abs(fd)))


def test_branch_invariants(lala_down):
    branch, events = lala_down
    kinds = [e.kind for e in events]
    assert "SNLC" in kinds and "HOM" in kinds
    resolved = [o for o in branch.points if o.stability != "unresolved"]
    assert len(resolved) > 10
    for o in resolved:
        assert o.residual < co.RESIDUAL_TOL
        assert abs(o.trivial_multiplier - 1.0) < co.TRIVIAL_TOL
    # the period is continuous between neighbours away from the homoclinic end
    per = branch.periods
    far = per[:-1] < 0.5 * per.max()
    jumps = np.abs(np.diff(per)) / per[:-1]
    assert np.all(jumps[far] < 0.1)
    # stability changes only next to a detected event
    ev_params = np.array([e.param_value for e in events])
    for a, b in zip(resolved, resolved[1:]):
        if a.stability != b.stability:
            mid = 0.5 * (a.param_value + b.param_value)
            assert np.min(np.abs(ev_params - mid)) < 5e-3


def test_fold_has_unit_multiplier(lala_down):
    _, events = lala_down
    snlc = next(e for e in events if e.kind == "SNLC")
    assert abs(snlc.diagnostics["multiplier"] - 1.0) < 1e-3
    hom = next(e for e in events if e.kind == "HOM")
    assert hom.param_value > snlc.param_value
    assert hom.diagnostics["distance"] < co.SADDLE_DELTA


def test_floquet_matches_lyapunov(lala_orbit):
    o = lala_orbit
    floq = np.sort(np.log(np.abs(o.multipliers)) / o.period)[::-1]
    spec = spectrum(o.anchor, 4, o.p, o.c, t_average=5000.0)
    assert abs(spec.exponents[0]) < 5e-3
    assert np.allclose(spec.exponents[1:], floq, atol=5e-3)


def test_continuation_validation(lala_orbit):
    with pytest.raises(ValueError):
        co.continue_orbit(lala_orbit, "nonsense", 0.0)


def test_csv_writers(lala_down, tmp_path):
    branch, events = lala_down
    co.write_branch_csv(branch, tmp_path / "b.csv")
    co.write_events_csv(events, tmp_path / "e.csv")
    rows = list(csv.DictReader(open(tmp_path / "b.csv")))
    assert len(rows) == len(branch.points)
    assert {"param", "period", "amp_max", "stability", "mu1_re"} <= set(rows[0])
    kinds = [r["kind"] for r in csv.DictReader(open(tmp_path / "e.csv"))]
    assert kinds == [e.kind for e in events]


def test_orbit_dict_roundtrip(lala_orbit):
    d = co.orbit_to_dict(lala_orbit)
    again = co.find_orbit(np.array(d["anchor"]), d["period"], ModelParams(), CouplingConfig.all_to_all(2, 0.15),
                          section_index=d["section_index"])
    assert abs(again.period - lala_orbit.period) < 1e-8


def test_shrinking_orbit_keeps_its_section(lala_orbit):
    # the orbit shrinks onto the focus-focus equilibrium; a section left at a
    # fixed x value would fall outside it and fake a turn in the parameter
    branch, events = co.continue_orbit(lala_orbit, "eps", 0.5, branch_id="up")
    assert [e.kind for e in events] == ["TORUS", "HOPF"]
    assert np.all(np.diff(branch.params) > 0)
    assert abs(events[-1].param_value - 0.4088) < 2e-3
