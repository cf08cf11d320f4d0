"""Network equilibria: Newton refinement, 3^N enumeration, labels, branches."""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .model import (
    CouplingConfig,
    ModelParams,
    get_parameter,
    local_jacobian,
    local_rhs,
    network_jacobian,
    network_rhs,
    set_parameter,
)

log = logging.getLogger(__name__)

MARGINAL_TOL = 1e-9
DEDUP_DIST = 1e-6
RESIDUAL_TOL = 1e-10
FOLD_TANGENT_SHARE = 0.05
UNCOUPLED_NAMES = ("node", "saddle", "focus")

# state-space box outside of which branches are truncated
BOX_X = (-120.0, 80.0)
BOX_Y = (-0.5, 1.5)


class EquilibriumError(RuntimeError):
    def __init__(self, message: str, state: np.ndarray | None = None):
        super().__init__(message)
        self.state = state


class NewtonDivergence(EquilibriumError):
    """Newton iteration failed to reach the residual tolerance."""


class SingularJacobian(EquilibriumError):
    """Jacobian became numerically singular (fold candidate)."""


@dataclass
class Equilibrium:
    state: np.ndarray
    eigenvalues: np.ndarray
    class_label: str
    residual_norm: float

    @property
    def n_units(self) -> int:
        return self.state.size // 2

    @property
    def signature(self) -> tuple[int, int, int]:
        """(# real parts > 0, # real parts < 0, # complex conjugate pairs)."""
        return eigen_signature(self.eigenvalues)

    @property
    def is_stable(self) -> bool:
        return bool(np.all(self.eigenvalues.real < 0))

    @property
    def n_unstable(self) -> int:
        return int(np.sum(self.eigenvalues.real > 0))

    def to_dict(self) -> dict:
        return {
            "state": self.state.tolist(),
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "label": self.class_label,
            "residual": self.residual_norm,
        }


@dataclass
class BifurcationEvent:
    kind: str  # SNLC, TORUS, HOPF, HOM, FOLD
    param_value: float
    branch_id: str = ""
    diagnostics: dict = field(default_factory=dict)


def eigen_signature(eigs) -> tuple[int, int, int]:
    eigs = np.asarray(eigs)
    pos = int(np.sum(eigs.real > 0))
    neg = int(np.sum(eigs.real < 0))
    pairs = int(np.sum(np.abs(eigs.imag) > 1e-12)) // 2
    return pos, neg, pairs


def _sorted_eigs(jac: np.ndarray) -> np.ndarray:
    eigs = np.linalg.eigvals(jac)
    order = np.lexsort((-eigs.imag, -eigs.real))
    return eigs[order]


# ---------------------------------------------------------------------------
# uncoupled unit


def uncoupled_equilibria(p: ModelParams, x_range=(-100.0, 60.0), n_grid: int = 16001) -> list[np.ndarray]:
    """All equilibria ``(x, y)`` of one isolated unit, sorted by ``x``.

    Equilibria lie on the ``y``-nullcline ``y = n_inf(x)``, so they are the
    roots of a scalar function of ``x``; these are bracketed on a grid and
    polished with Brent's method.
    """

    def g(x):
        return local_rhs(x, _ninf(x, p), p)[0]

    xs = np.linspace(*x_range, n_grid)
    vals = np.array([g(x) for x in xs])
    roots = []
    for k in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]:
        if vals[k] == 0.0:
            r = xs[k]
        elif vals[k + 1] == 0.0:
            continue
        else:
            r = brentq(g, xs[k], xs[k + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps)
        roots.append(np.array([r, _ninf(r, p)]))
    return roots


def _ninf(x: float, p: ModelParams) -> float:
    return 1.0 / (1.0 + math.exp((p.n_half - x) / p.k_n))


def uncoupled_names(p: ModelParams) -> list[tuple[str, np.ndarray]]:
    """Name each isolated-unit equilibrium by its eigenvalue type."""
    out = []
    for pt in uncoupled_equilibria(p):
        eigs = np.linalg.eigvals(local_jacobian(pt[0], pt[1], p))
        out.append((_unit_type(eigs), pt))
    return out


def _unit_type(eigs) -> str:
    eigs = np.asarray(eigs)
    if np.any(np.abs(eigs.real) < MARGINAL_TOL):
        return "marginal"
    if np.any(np.abs(eigs.imag) > 1e-12):
        return "focus"
    if np.all(eigs.real < 0) or np.all(eigs.real > 0):
        return "node"
    return "saddle"


# ---------------------------------------------------------------------------
# Newton


def refine(guess, p: ModelParams, c: CouplingConfig, tol: float = 1e-12, max_iter: int = 50,
           unit_refs=None) -> Equilibrium:
    """Damped Newton on the network vector field from ``guess``."""
    x = np.array(guess, dtype=np.float64)
    f = network_rhs(x, p, c)
    res = float(np.linalg.norm(f))
    for _ in range(max_iter):
        if res < tol:
            break
        jac = network_jacobian(x, p, c)
        if np.linalg.cond(jac) > 1e14:
            raise SingularJacobian("Jacobian is singular near the iterate", x)
        step = np.linalg.solve(jac, -f)
        lam = 1.0
        while True:
            trial = x + lam * step
            try:
                f_trial = network_rhs(trial, p, c)
                res_trial = float(np.linalg.norm(f_trial))
            except ValueError:
                res_trial = math.inf
            if res_trial < res or lam <= 2.0 ** -20:
                break
            lam *= 0.5
        if not math.isfinite(res_trial):
            raise NewtonDivergence("Newton iterate left the finite domain", x)
        x, f, res = trial, f_trial, res_trial
    if not res < RESIDUAL_TOL:
        raise NewtonDivergence(f"Newton did not converge (residual {res:.3e})", x)
    eigs = _sorted_eigs(network_jacobian(x, p, c))
    eq = Equilibrium(x, eigs, "", res)
    eq.class_label = classify(eq, p, unit_refs)
    return eq


def classify(eq: Equilibrium, p: ModelParams | None = None, unit_refs=None) -> str:
    """Label an equilibrium.

    ``"marginal"`` when an eigenvalue sits on the imaginary axis. Otherwise
    each unit gets the name of the nearest isolated-unit equilibrium in its
    own ``(x, y)`` plane and the names are joined with ``-``. Without
    parameters (nothing to compare positions against) the eigenvalue type of
    a single unit is used directly.
    """
    eigs = np.asarray(eq.eigenvalues)
    if np.any(np.abs(eigs.real) < MARGINAL_TOL):
        return "marginal"
    if unit_refs is None:
        if p is None:
            if eq.n_units == 1:
                return _unit_type(eigs)
            raise ValueError("compound labels need model parameters or reference points")
        unit_refs = uncoupled_names(p)
    names = []
    for i in range(eq.n_units):
        xy = eq.state[2 * i:2 * i + 2]
        # y spans ~1 while x spans ~100 mV: compare in scaled coordinates
        d = [math.hypot((xy[0] - r[0]) / 100.0, xy[1] - r[1]) for _, r in unit_refs]
        names.append(unit_refs[int(np.argmin(d))][0])
    return "-".join(names)


def enumerate_equilibria(p: ModelParams, c: CouplingConfig) -> list[Equilibrium]:
    """Distinct equilibria reached by Newton from all 3^N uncoupled combinations."""
    if c.n_units > 12:
        raise ValueError("3^N seeding is limited to N <= 12")
    refs = uncoupled_names(p)
    found: list[Equilibrium] = []
    for combo in itertools.product(range(len(refs)), repeat=c.n_units):
        seed = np.concatenate([refs[k][1] for k in combo])
        try:
            eq = refine(seed, p, c, unit_refs=refs)
        except EquilibriumError:
            continue
        if all(np.max(np.abs(eq.state - other.state)) > DEDUP_DIST for other in found):
            found.append(eq)
    return found


def equilibria_to_json(eqs, path) -> None:
    with open(path, "w") as fh:
        json.dump([e.to_dict() for e in eqs], fh, indent=2)


# ---------------------------------------------------------------------------
# natural-parameter continuation


@dataclass
class EquilibriumBranch:
    param: str
    values: list = field(default_factory=list)
    points: list = field(default_factory=list)  # Equilibrium per value
    truncated: str = ""

    def max_real(self) -> np.ndarray:
        return np.array([pt.eigenvalues.real.max() for pt in self.points])


def _in_box(x: np.ndarray) -> bool:
    xs, ys = x[0::2], x[1::2]
    return bool(np.all((xs > BOX_X[0]) & (xs < BOX_X[1]) & (ys > BOX_Y[0]) & (ys < BOX_Y[1])))


def _unstable_complex(eigs) -> int:
    eigs = np.asarray(eigs)
    return int(np.sum((eigs.real > 0) & (np.abs(eigs.imag) > 1e-12)))


def continue_branch(eq: Equilibrium, p: ModelParams, c: CouplingConfig, param: str, stop: float,
                    step: float = 1e-2, min_step: float = 1e-7, branch_id: str = "eq"):
    """Follow ``eq`` as ``param`` moves toward ``stop``.

    Returns ``(branch, events)``. A ``FOLD`` is reported where the branch
    cannot be continued although the Jacobian determinant is collapsing
    toward zero; a ``HOPF`` where the real part of a complex pair changes
    sign, bisected until ``|Re| < 1e-8``.
    """
    refs = uncoupled_names(p)
    start = get_parameter(p, c, param)
    direction = 1.0 if stop >= start else -1.0
    h = abs(step)
    branch = EquilibriumBranch(param, [start], [eq])
    events: list[BifurcationEvent] = []
    cur, cur_p, cur_c = eq, p, c
    prev_state = None
    prev_val = None
    val = start
    while direction * (stop - val) > 1e-15:
        nxt = val + direction * min(h, abs(stop - val))
        guess = cur.state
        if prev_state is not None:
            guess = cur.state + (cur.state - prev_state) * (nxt - val) / (val - prev_val)
        p2, c2 = set_parameter(p, c, param, nxt)
        try:
            new = refine(guess, p2, c2, unit_refs=refs)
            if np.max(np.abs(new.state - cur.state)) > 50.0 * max(h, 1e-3) + 1.0:
                raise NewtonDivergence("corrector jumped to another branch")
        except EquilibriumError:
            h *= 0.5
            if h < min_step:
                lam_share = _tangent_param_share(cur.state, cur_p, cur_c, param)
                if lam_share < FOLD_TANGENT_SHARE:
                    events.append(BifurcationEvent(
                        "FOLD", val, branch_id,
                        {"tangent_param_share": lam_share,
                         "min_abs_eig": float(np.min(np.abs(cur.eigenvalues)))},
                    ))
                    branch.truncated = "fold"
                else:
                    branch.truncated = "corrector failure"
                    log.info("equilibrium branch %s stopped at %s=%g without a fold", branch_id, param, val)
                break
            continue
        if not _in_box(new.state):
            branch.truncated = "left state-space box"
            log.info("equilibrium branch %s left the state-space box at %s=%g", branch_id, param, nxt)
            break
        if _unstable_complex(new.eigenvalues) != _unstable_complex(cur.eigenvalues):
            ev = _bisect_hopf(cur, val, new, nxt, p, c, param, refs)
            ev.branch_id = branch_id
            events.append(ev)
        prev_state, prev_val = cur.state, val
        cur, cur_p, cur_c, val = new, p2, c2, nxt
        branch.values.append(val)
        branch.points.append(new)
        h = min(h * 1.5, abs(step))
    return branch, events


def _tangent_param_share(x, p, c, param) -> float:
    """Parameter component of the unit tangent to the solution curve ``F(x, lam) = 0``.

    It vanishes where the branch turns back in the parameter.
    """
    lam = get_parameter(p, c, param)
    d = 1e-7 * max(1.0, abs(lam))
    pp, cp = set_parameter(p, c, param, lam + d)
    pm, cm = set_parameter(p, c, param, lam - d)
    f_lam = (network_rhs(x, pp, cp) - network_rhs(x, pm, cm)) / (2 * d)
    ext = np.column_stack([network_jacobian(x, p, c), f_lam])
    tangent = np.linalg.svd(ext)[2][-1]
    return float(abs(tangent[-1]))


def _bisect_hopf(a: Equilibrium, va: float, b: Equilibrium, vb: float, p, c, param, refs) -> BifurcationEvent:
    na = _unstable_complex(a.eigenvalues)
    mid_eq = a
    for _ in range(80):
        vm = 0.5 * (va + vb)
        pm, cm = set_parameter(p, c, param, vm)
        w = (vm - va) / (vb - va)
        mid_eq = refine((1 - w) * a.state + w * b.state, pm, cm, unit_refs=refs)
        cplx = mid_eq.eigenvalues[np.abs(mid_eq.eigenvalues.imag) > 1e-12]
        closest = cplx[np.argmin(np.abs(cplx.real))] if cplx.size else 0.0
        if abs(closest.real) < 1e-8 or abs(vb - va) < 1e-14:
            break
        if _unstable_complex(mid_eq.eigenvalues) == na:
            a, va = mid_eq, vm
        else:
            b, vb = mid_eq, vm
    cplx = mid_eq.eigenvalues[np.abs(mid_eq.eigenvalues.imag) > 1e-12]
    crit = cplx[np.argmin(np.abs(cplx.real))]
    return BifurcationEvent("HOPF", vm, "", {"eigenvalue": complex(crit), "frequency": abs(crit.imag)})
