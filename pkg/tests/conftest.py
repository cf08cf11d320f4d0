import numpy as np
import pytest

from multistab import CouplingConfig, ModelParams
from multistab import continuation


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def lala_orbit(params):
    c = CouplingConfig.all_to_all(2, 0.15)
    state = continuation._probe_attractor(continuation._default_seeds(params, "LA-LA"), params, c, "LA-LA")
    assert state is not None
    return continuation.orbit_from_state(state, params, c)


@pytest.fixture(scope="session")
def lasa_orbit(params):
    c = CouplingConfig.all_to_all(2, 0.15)
    state = continuation._probe_attractor(continuation._default_seeds(params, "LA-SA"), params, c, "LA-SA")
    assert state is not None
    return continuation.orbit_from_state(state, params, c)


def lala_orbit_at(eps, params, start):
    """Follow a stable LA-LA orbit to ``eps`` in steps of 0.01."""
    orbit = start
    e0 = start.param_value
    path = np.arange(e0, eps, -0.01 if eps < e0 else 0.01).tolist()[1:] + [eps]
    for e in path:
        orbit = continuation.orbit_from_state(orbit.anchor, params, CouplingConfig.all_to_all(2, e))
    return orbit


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def report(request, capsys):
    """Print and keep one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def emit(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        lines.append(line)
        with capsys.disabled():
            print("\n" + line, flush=True)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
