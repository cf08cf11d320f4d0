"""Periodic orbits by shooting, their continuation, and bifurcation detection."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .equilibria import BifurcationEvent, EquilibriumError, continue_branch, enumerate_equilibria
from .integrate import IntegrationError, Integrator, Section
from .model import (
    CouplingConfig,
    ModelParams,
    compile_system,
    get_parameter,
    network_kernel,
    network_rhs,
    parameter_direction,
    set_parameter,
    tangent_kernel,
)

log = logging.getLogger(__name__)

SHOOT_TOL = 1e-11  # integration tolerance inside the shooting map
RESIDUAL_TOL = 1e-9
P_MAX = 500.0
SADDLE_DELTA = 0.5
AMPLITUDE_FLOOR = 1.0
TRIVIAL_TOL = 1e-5
MAX_HALVINGS = 8

__all__ = [
    "BifurcationEvent", "OrbitError", "PeriodicOrbit", "OrbitBranch", "flow", "find_orbit",
    "orbit_from_state", "continue_orbit", "single_unit_scan", "two_param_bracket",
]


class OrbitError(RuntimeError):
    """Shooting failed, or the orbit collapsed onto an equilibrium."""


@dataclass
class PeriodicOrbit:
    anchor: np.ndarray
    period: float
    multipliers: np.ndarray  # nontrivial, sorted by modulus descending
    param_value: float
    param: str
    p: ModelParams
    c: CouplingConfig
    section_index: int = 0
    trivial_multiplier: complex = 1.0
    residual: float = 0.0
    amplitudes: np.ndarray | None = None

    @property
    def stability(self) -> str:
        """``stable``/``saddle``; ``unresolved`` when the monodromy is too ill-conditioned to trust."""
        if not np.isfinite(self.trivial_multiplier) or abs(self.trivial_multiplier - 1.0) > TRIVIAL_TOL:
            return "unresolved"
        return "stable" if np.all(np.abs(self.multipliers) < 1.0) else "saddle"

    @property
    def amp_max(self) -> float:
        return float(np.max(self.amplitudes)) if self.amplitudes is not None else math.nan

    @property
    def section(self) -> Section:
        return Section.coordinate(self.anchor.size, self.section_index, float(self.anchor[self.section_index]))


# ---------------------------------------------------------------------------
# flow with variational equations


def flow(s, T: float, p: ModelParams, c: CouplingConfig, param: str | None = None,
         monodromy: bool = True, tol: float = SHOOT_TOL):
    """``phi_T(s)``, its Jacobian in ``s`` and its derivative in ``param``.

    Missing pieces are returned as ``None``.
    """
    s = np.asarray(s, dtype=float)
    n = s.size
    k = n if monodromy else 0
    if param is not None:
        dwx, dwy, dcur = parameter_direction(c, param)
    else:
        dwx = dwy = np.zeros(0)
        dcur = 0.0
    sens = param is not None
    parts = [s]
    if k:
        parts.append(np.eye(n).ravel())
    if sens:
        parts.append(np.zeros(n))
    args = compile_system(p, c) + (k, sens, dwx, dwy, float(dcur))
    it = Integrator(tangent_kernel, np.concatenate(parts), args=args, abs_tol=tol, rel_tol=tol)
    it.advance(T, clip=True, record=False)
    z = it.y
    phi = z[:n].copy()
    M = z[n:n + k * n].reshape(k, n).T.copy() if k else None
    dphi = z[n + k * n:].copy() if sens else None
    return phi, M, dphi


def _split_multipliers(M: np.ndarray, f: np.ndarray):
    if not np.all(np.isfinite(M)):
        # monodromy overflowed (orbit very close to a saddle): multipliers are unresolvable
        nan = np.full(M.shape[0] - 1, complex("nan"))
        return complex("nan"), nan
    vals, vecs = np.linalg.eig(M)
    fn = f / (np.linalg.norm(f) or 1.0)
    align = np.abs(fn @ vecs) / np.linalg.norm(vecs, axis=0)
    near = np.abs(vals - 1.0) < 0.05
    if np.any(near):
        idx = int(np.argmax(np.where(near, align, -1.0)))
    else:
        idx = int(np.argmin(np.abs(vals - 1.0)))
    trivial = vals[idx]
    rest = np.delete(vals, idx)
    rest = rest[np.argsort(-np.abs(rest))]
    return complex(trivial), rest


def orbit_samples(anchor, T, p, c, n_samples: int = 2000):
    it = Integrator(network_kernel, anchor, args=compile_system(p, c), abs_tol=1e-10, rel_tol=1e-10)
    it.start_sampling(0.0, T / n_samples)
    times, states = it.advance(T, clip=True)
    return times, states


def _amplitudes(states: np.ndarray) -> np.ndarray:
    return np.ptp(states[:, 0::2], axis=0)


# ---------------------------------------------------------------------------
# shooting


def _finish_orbit(s, T, M, phi, p, c, param, section_index, residual) -> PeriodicOrbit:
    f = network_rhs(phi, p, c)
    trivial, rest = _split_multipliers(M, f)
    _, states = orbit_samples(s, T, p, c, 400)
    amps = _amplitudes(states)
    return PeriodicOrbit(s.copy(), float(T), rest, get_parameter(p, c, param), param, p, c, section_index,
                         trivial, residual, amps)


def find_orbit(guess_state, guess_period: float, p: ModelParams, c: CouplingConfig, param: str = "eps",
               section_index: int = 0, max_iter: int = 30) -> PeriodicOrbit:
    """Newton shooting for a periodic orbit through the hyperplane ``x_k = guess x_k``.

    Unknowns are the anchor state and the period; the equations are
    ``phi_T(s) - s = 0`` and the section constraint.
    """
    s = np.array(guess_state, dtype=float)
    T = float(guess_period)
    n = s.size
    a = np.zeros(n)
    a[section_index] = 1.0
    b = float(s[section_index])
    res = math.inf
    for _ in range(max_iter):
        if T <= 0:
            raise OrbitError("period became non-positive")
        phi, M, _ = flow(s, T, p, c)
        r = phi - s
        res = float(np.max(np.abs(r)))
        if res < RESIDUAL_TOL:
            break
        f = network_rhs(phi, p, c)
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = M - np.eye(n)
        J[:n, n] = f
        J[n, :n] = a
        rhs = -np.concatenate([r, [a @ s - b]])
        try:
            d = np.linalg.solve(J, rhs)
        except np.linalg.LinAlgError as exc:
            raise OrbitError("singular shooting Jacobian") from exc
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            s_new, T_new = s + lam * d[:n], T + lam * d[n]
            if T_new > 0:
                try:
                    r_new = flow(s_new, T_new, p, c, monodromy=False)[0] - s_new
                    if np.max(np.abs(r_new)) < res:
                        break
                except IntegrationError:
                    pass
            lam *= 0.5
        s, T = s_new, T_new
    else:
        raise OrbitError(f"shooting did not converge (residual {res:.2e})")
    if res >= RESIDUAL_TOL:
        raise OrbitError(f"shooting did not converge (residual {res:.2e})")
    phi, M, _ = flow(s, T, p, c)
    orbit = _finish_orbit(s, T, M, phi, p, c, param, section_index, float(np.max(np.abs(phi - s))))
    if orbit.amp_max < AMPLITUDE_FLOOR or T < 1e-3:
        raise OrbitError("orbit collapsed onto an equilibrium")
    return orbit


def orbit_from_state(s0, p: ModelParams, c: CouplingConfig, param: str = "eps", settle: float = 500.0,
                     section_index: int | None = None, threshold: float | None = None) -> PeriodicOrbit:
    """Shoot a periodic orbit from a state near a periodic attractor.

    The trajectory is run for ``settle`` time units, then two successive
    upward crossings of ``x_k = threshold`` give the anchor and the period
    guess; ``k`` defaults to the unit with the largest oscillation and the
    threshold to the middle of its range.
    """
    args = compile_system(p, c)
    it = Integrator(network_kernel, s0, args=args)
    it.start_sampling(0.0, 0.05)
    _, states = it.advance(settle)
    tail = states[len(states) // 2:]
    if section_index is None:
        section_index = 2 * int(np.argmax(_amplitudes(tail)))
    if threshold is None:
        threshold = 0.5 * (tail[:, section_index].min() + tail[:, section_index].max())
    n = np.asarray(s0).size
    it2 = Integrator(network_kernel, it.y.copy(), args=args, event=Section.coordinate(n, section_index, threshold),
                     event_direction=1)
    t0 = it.t
    step = 50.0
    while len(it2.event_times) < 3 and it2.t < t0 + 5000:
        it2.advance(it2.t + step, record=False)
    if len(it2.event_times) < 3:
        raise OrbitError("no repeated section crossings: state is not near an oscillation")
    anchor = it2.event_states[1]
    period = it2.event_times[2] - it2.event_times[1]
    return find_orbit(anchor, period, p, c, param, section_index)


# ---------------------------------------------------------------------------
# pseudo-arclength continuation


@dataclass
class OrbitBranch:
    branch_id: str
    param: str
    points: list = field(default_factory=list)
    truncated: str = ""

    @property
    def params(self) -> np.ndarray:
        return np.array([o.param_value for o in self.points])

    @property
    def periods(self) -> np.ndarray:
        return np.array([o.period for o in self.points])


SEGMENT_LENGTH = 2.0  # target duration of one shooting segment during continuation
REANCHOR_FRACTION = 0.1
# a shrinking orbit can leave a fixed section through one extreme of x_k
REANCHOR_MARGIN = 0.2


def _state_scales(n: int) -> np.ndarray:
    sc = np.empty(n)
    sc[0::2] = 50.0
    sc[1::2] = 0.5
    return sc


class _Continuer:
    """Multiple-shooting formulation of a periodic orbit with a free parameter.

    Unknowns are ``m`` segment start states, the period and the parameter;
    segment ``j`` must end at the start of segment ``j + 1`` after ``T / m``
    and the first start lies on the section ``x_k = b``. Short segments keep
    the Jacobian well conditioned when the orbit passes close to a saddle.
    """

    def __init__(self, orbit: PeriodicOrbit, param: str):
        self.param = param
        self.p0, self.c0 = orbit.p, orbit.c
        self.n = orbit.anchor.size
        self.k = orbit.section_index
        self.b = float(orbit.anchor[self.k])
        self.T0 = orbit.period
        self.lam_scale = 1.0 if param == "current" else 0.05
        self.m = 0
        self.scale = None

    def set_mesh(self, m: int) -> None:
        self.m = m
        self.scale = np.concatenate([np.tile(_state_scales(self.n) * math.sqrt(m), m),
                                     [max(self.T0, 1.0), self.lam_scale]])

    def initial(self, orbit: PeriodicOrbit) -> np.ndarray:
        m = max(1, math.ceil(orbit.period / SEGMENT_LENGTH))
        self.set_mesh(m)
        segs = self._nodes_from(orbit.anchor[None, :], orbit.period, orbit.param_value, m)
        return np.concatenate([segs.ravel(), [orbit.period, orbit.param_value]])

    def _nodes_from(self, segs: np.ndarray, T: float, lam: float, m_new: int) -> np.ndarray:
        """Start states at ``j T / m_new``, each integrated from the closest earlier old node."""
        p, c = self.system(lam)
        m_old = segs.shape[0]
        out = np.empty((m_new, self.n))
        for j in range(m_new):
            tau = j * T / m_new
            i = min(int(tau // (T / m_old) + 1e-12), m_old - 1)
            dt = tau - i * T / m_old
            out[j] = segs[i] if dt <= 1e-14 else flow(segs[i], dt, p, c, monodromy=False)[0]
        return out

    def remesh(self, u: np.ndarray) -> np.ndarray | None:
        T = u[-2]
        m_new = max(1, math.ceil(T / SEGMENT_LENGTH))
        if m_new == self.m:
            return None
        segs = u[:-2].reshape(self.m, self.n)
        new = self._nodes_from(segs, T, u[-1], m_new)
        self.set_mesh(m_new)
        return np.concatenate([new.ravel(), u[-2:]])

    def system(self, lam):
        return set_parameter(self.p0, self.c0, self.param, lam)

    def reanchor(self, u: np.ndarray) -> np.ndarray | None:
        """Move the section to mid-range of ``x_k`` when the crossing becomes nearly tangent or nears an extreme."""
        T, lam = u[-2], u[-1]
        p, c = self.system(lam)
        segs = u[:-2].reshape(self.m, self.n)
        times, states = orbit_samples(segs[0], T, p, c, 2000)
        xk = states[:, self.k]
        speed = np.abs(np.gradient(xk, times))
        span = float(np.ptp(xk))
        inside = min(self.b - xk.min(), xk.max() - self.b) >= REANCHOR_MARGIN * span
        if inside and abs(network_rhs(segs[0], p, c)[self.k]) >= REANCHOR_FRACTION * speed.max():
            return None
        b = 0.5 * (xk.min() + xk.max())
        up = np.nonzero((xk[:-1] < b) & (xk[1:] >= b))[0]
        if up.size == 0:
            return None
        i = up[0]
        tau = times[i] + (b - xk[i]) * (times[i + 1] - times[i]) / (xk[i + 1] - xk[i])
        nodes = np.empty_like(segs)
        for j in range(self.m):
            t_abs = (tau + j * T / self.m) % T
            src = min(int(t_abs // (T / self.m)), self.m - 1)
            dt = t_abs - src * T / self.m
            nodes[j] = segs[src] if dt <= 1e-14 else flow(segs[src], dt, p, c, monodromy=False)[0]
        self.b = float(b)
        log.info("section re-anchored at x_%d = %.4g (%s=%.6g)", self.k // 2 + 1, b, self.param, lam)
        return np.concatenate([nodes.ravel(), u[-2:]])

    def extended(self, u):
        n, m = self.n, self.m
        segs = u[:-2].reshape(m, n)
        T, lam = u[-2], u[-1]
        p, c = self.system(lam)
        N = m * n
        J = np.zeros((N + 1, N + 2))
        r = np.empty(N + 1)
        mono = np.eye(n)
        for j in range(m):
            phi, M, dphi = flow(segs[j], T / m, p, c, self.param)
            nxt = (j + 1) % m
            rows = slice(j * n, (j + 1) * n)
            r[rows] = phi - segs[nxt]
            J[rows, j * n:(j + 1) * n] += M
            J[rows, nxt * n:(nxt + 1) * n] -= np.eye(n)
            J[rows, N] = network_rhs(phi, p, c) / m
            J[rows, N + 1] = dphi
            with np.errstate(over="ignore", invalid="ignore"):
                mono = M @ mono
            if j == m - 1:
                phi_last = phi
        J[N, self.k] = 1.0
        r[N] = segs[0, self.k] - self.b
        return r, J, mono, phi_last, (p, c)

    def tangent(self, J, prev=None, direction=1.0):
        js = J * self.scale
        t = None
        if prev is not None and prev.size == js.shape[1]:
            try:
                t = np.linalg.solve(np.vstack([js, prev]), np.eye(js.shape[1])[-1])
                t /= np.linalg.norm(t)
            except np.linalg.LinAlgError:
                t = None
        if t is None:
            t = np.linalg.svd(js)[2][-1]
        if prev is not None:
            if t @ prev < 0:
                t = -t
        elif t[-1] * direction < 0:
            t = -t
        return t  # scaled coordinates, unit norm

    def align(self, t, prev_t_tail) -> np.ndarray:
        """Orient a tangent computed on a new mesh like the previous one (period and parameter parts)."""
        return -t if t[-2:] @ prev_t_tail < 0 else t

    def correct(self, u_pred, t, max_iter: int = 10):
        """Newton on the shooting equations plus the plane orthogonal to ``t``."""
        N = self.m * self.n
        u = u_pred.copy()
        for _ in range(max_iter + 1):
            if u[-2] <= 0:
                return None
            try:
                r, J, M, phi, pc = self.extended(u)
            except (IntegrationError, ValueError):
                return None
            res = float(np.max(np.abs(r[:N])))
            g = float(t @ ((u - u_pred) / self.scale))
            A = np.vstack([J, t / self.scale])
            try:
                d = np.linalg.solve(A, -np.concatenate([r, [g]]))
            except np.linalg.LinAlgError:
                return None
            step = float(np.max(np.abs(d / self.scale)))
            if res < RESIDUAL_TOL and step < 1e-7:
                return u, J, M, phi, pc, res
            if step > 0.5:
                return None
            u = u + d
        return None

    def make_orbit(self, u, M, phi, pc, res) -> PeriodicOrbit:
        p, c = pc
        anchor = u[:self.n].copy()
        return _finish_orbit(anchor, u[-2], M, phi, p, c, self.param, self.k, res)


def _n_unstable_complex(mults) -> int:
    m = np.asarray(mults)
    return int(np.sum((np.abs(m.imag) > 1e-9) & (np.abs(m) > 1.0)))


def _n_outside(mults) -> int:
    return int(np.sum(np.abs(np.asarray(mults)) > 1.0))


def _lead_real_near_one(mults) -> complex:
    m = np.asarray(mults)
    return complex(m[np.argmin(np.abs(m - 1.0))])


def _torus_crossing(before, after) -> bool:
    """True when the unstable count changes through a complex pair on the unit circle."""
    if _n_outside(before) == _n_outside(after):
        return False
    for mults in (before, after):
        m = np.asarray(mults)
        k = np.argmin(np.abs(np.abs(m) - 1.0))
        if abs(m[k].imag) > 1e-9:
            return True
    return False


def continue_orbit(orbit: PeriodicOrbit, param: str, stop: float, initial_step: float = 1e-3,
                   max_step: float | None = None, max_points: int = 3000, branch_id: str = "orbit",
                   detect_hom: bool = True):
    """Pseudo-arclength continuation of ``orbit`` in ``param`` toward ``stop``.

    Returns ``(branch, events)``. Events: ``SNLC`` where the branch folds in
    the parameter, ``TORUS`` where a complex multiplier pair crosses the unit
    circle, ``HOM`` where the branch is truncated with a growing period close
    to a saddle equilibrium, ``HOPF`` where the orbit shrinks onto an
    equilibrium.
    """
    if orbit.param != param:
        orbit = replace(orbit, param=param, param_value=get_parameter(orbit.p, orbit.c, param))
    cont = _Continuer(orbit, param)
    lam0 = orbit.param_value
    direction = 1.0 if stop >= lam0 else -1.0
    lo, hi = min(lam0, stop), max(lam0, stop)
    h = initial_step / cont.lam_scale
    h_max = (max_step / cont.lam_scale) if max_step else 40.0 * h
    h_min = h / 2 ** MAX_HALVINGS

    u = cont.initial(orbit)
    _, J, _, _, _ = cont.extended(u)
    t = cont.tangent(J, direction=direction)
    branch = OrbitBranch(branch_id, param, [orbit])
    events: list[BifurcationEvent] = []
    successes = 0
    failures = 0
    while len(branch.points) < max_points:
        u_pred = u + h * t * cont.scale
        out = cont.correct(u_pred, t)
        ok = out is not None
        if ok:
            u_new, J_new, M_new, phi_new, pc_new, res = out
            t_new = cont.tangent(J_new, prev=t)
            ok = abs(u_new[-2] - u[-2]) / u[-2] < 0.1 and float(t_new @ t) > 0.8
        if not ok:
            failures += 1
            h *= 0.5
            successes = 0
            if failures > MAX_HALVINGS or h < h_min:
                branch.truncated = "step failure"
                log.info("branch %s truncated at %s=%.8g after repeated step failures", branch_id, param, u[-1])
                break
            continue
        failures = 0
        new_orbit = cont.make_orbit(u_new, M_new, phi_new, pc_new, res)
        if new_orbit.amp_max < AMPLITUDE_FLOOR:
            events.append(BifurcationEvent("HOPF", float(u_new[-1]), branch_id,
                                           {"period": new_orbit.period, "amp_max": new_orbit.amp_max}))
            branch.truncated = "collapsed onto equilibrium"
            break
        if not lo <= u_new[-1] <= hi:
            if direction * (u_new[-1] - stop) < 0:
                branch.truncated = "left parameter range"
            break
        prev_orbit = branch.points[-1]
        if t[-1] != 0.0 and np.sign(t_new[-1]) != np.sign(t[-1]):
            ev = _locate(cont, u, t, h, "SNLC", prev_orbit)
            ev.branch_id = branch_id
            d = ev.diagnostics
            if d.get("located") and abs(d["multiplier"] - 1.0) < 1e-3 and abs(d["trivial"] - 1.0) < 1e-3:
                events.append(ev)
            else:
                log.info("branch %s: parameter turn near %s=%.8g without a unit multiplier pair; ignored",
                         branch_id, param, ev.param_value)
        if _torus_crossing(prev_orbit.multipliers, new_orbit.multipliers):
            ev = _locate(cont, u, t, h, "TORUS", prev_orbit)
            ev.branch_id = branch_id
            if ev.diagnostics.get("located") and abs(ev.diagnostics["modulus"] - 1.0) < 1e-3:
                events.append(ev)
            else:
                log.info("branch %s: unit-circle crossing near %s=%.6g is not a complex pair; ignored",
                         branch_id, param, ev.param_value)
        branch.points.append(new_orbit)
        u, t = u_new, t_new
        if new_orbit.period > P_MAX:
            branch.truncated = "period above P_max"
            break
        if _stalled(branch):
            branch.truncated = "period divergence"
            break
        moved = cont.remesh(u)
        anchored = cont.reanchor(u if moved is None else moved)
        if anchored is not None:
            moved = anchored
        if moved is not None:
            u = moved
            _, J, _, _, _ = cont.extended(u)
            t = cont.align(cont.tangent(J), t[-2:])
        successes += 1
        if successes >= 3:
            h = min(2.0 * h, h_max)
            successes = 0
    if detect_hom and branch.truncated in ("step failure", "period above P_max", "period divergence"):
        ev = _hom_check(branch)
        if ev is not None:
            events.append(ev)
    return branch, events


def _stalled(branch: OrbitBranch, window: int = 20) -> bool:
    """The period keeps growing while the parameter no longer moves (resolution limit)."""
    if len(branch.points) < window:
        return False
    lam = branch.params[-window:]
    per = branch.periods[-window:]
    return bool(np.all(np.diff(per) > 0) and per[-1] - per[0] > 0.5
                and np.ptp(lam) < 1e-10 * max(1.0, abs(lam[-1])))


def _locate(cont: _Continuer, u, t, h, kind, prev_orbit) -> BifurcationEvent:
    """Bisect along the arclength between two branch points for an event."""
    a, b = 0.0, h
    s0_fold = np.sign(t[-1])
    n0 = _n_outside(prev_orbit.multipliers)
    best = None
    for _ in range(50):
        mid = 0.5 * (a + b)
        out = cont.correct(u + mid * t * cont.scale, t)
        if out is None:
            break
        u_m, J_m, M_m, phi_m, pc_m, res = out
        orbit = cont.make_orbit(u_m, M_m, phi_m, pc_m, res)
        mults = orbit.multipliers
        if kind == "SNLC":
            t_m = cont.tangent(J_m, prev=t)
            lead = _lead_real_near_one(mults)
            best = (u_m[-1], {"multiplier": lead, "trivial": orbit.trivial_multiplier, "period": orbit.period})
            if abs(lead - 1.0) < 1e-5 or b - a < 1e-10:
                break
            if np.sign(t_m[-1]) == s0_fold:
                a = mid
            else:
                b = mid
        else:
            cplx = mults[np.abs(mults.imag) > 1e-9]
            crit = cplx[np.argmin(np.abs(np.abs(cplx) - 1.0))] if cplx.size else complex("nan")
            best = (u_m[-1], {"multiplier": complex(crit), "modulus": float(abs(crit)),
                              "angle": float(np.angle(crit)), "period": orbit.period})
            if abs(abs(crit) - 1.0) < 1e-5 or b - a < 1e-10:
                break
            if _n_outside(mults) == n0:
                a = mid
            else:
                b = mid
    if best is None:
        return BifurcationEvent(kind, float(u[-1]), "", {"located": False})
    lam, diag = best
    diag["located"] = True
    return BifurcationEvent(kind, float(lam), "", diag)


def saddle_equilibria(p: ModelParams, c: CouplingConfig):
    try:
        eqs = enumerate_equilibria(p, c)
    except EquilibriumError:
        return []
    return [e for e in eqs if e.n_unstable > 0 and np.all(np.abs(e.eigenvalues.imag) < 1e-12)]


def _hom_check(branch: OrbitBranch) -> BifurcationEvent | None:
    """Flag a homoclinic approach at the truncation point of a branch."""
    pts = branch.points
    if len(pts) < 5:
        return None
    periods = branch.periods
    tail = periods[-5:]
    growing = bool(np.all(np.diff(tail) > 0)) and periods[-1] > 1.2 * periods.min()
    last = pts[-1]
    _, states = orbit_samples(last.anchor, last.period, last.p, last.c, 4000)
    best = (math.inf, "")
    for eq in saddle_equilibria(last.p, last.c):
        d = float(np.min(np.max(np.abs((states - eq.state) / np.tile([1.0, 0.01], eq.state.size // 2)), axis=1)))
        d_euc = float(np.min(np.linalg.norm(states - eq.state, axis=1)))
        if d_euc < best[0]:
            best = (d_euc, eq.class_label)
    if growing and best[0] < SADDLE_DELTA:
        return BifurcationEvent("HOM", last.param_value, branch.branch_id,
                                {"period": last.period, "saddle": best[1], "distance": best[0],
                                 "truncation": branch.truncated})
    log.info("branch %s truncated without homoclinic signature (growing=%s, distance=%.3g)",
             branch.branch_id, growing, best[0])
    return None


# ---------------------------------------------------------------------------
# single unit and two-parameter curves


def single_unit_scan(i_range=(2.0, 6.0), p: ModelParams | None = None, cycle_seed_current: float = 4.0):
    """Fold of the rest state and homoclinic end of the spiking branch of one unit.

    The rest (node) branch is followed in the drive current until it folds;
    the spiking orbit found at ``cycle_seed_current`` is continued toward
    lower current until its period diverges.
    """
    p = p or ModelParams()
    lo, hi = i_range
    c = CouplingConfig.all_to_all(1, 0.0)
    events: list[BifurcationEvent] = []
    p_lo = p.replace(current=lo)
    eqs = enumerate_equilibria(p_lo, c)
    node = min((e for e in eqs if e.class_label == "node"), key=lambda e: e.state[0])
    _, ev = continue_branch(node, p_lo, c, "current", hi, step=0.05, branch_id="rest")
    events += ev
    p_seed = p.replace(current=cycle_seed_current)
    orbit = orbit_from_state(np.array([-20.0, 0.3]), p_seed, c, param="current")
    _, ev = continue_orbit(orbit, "current", lo, initial_step=2e-2, max_step=0.1, branch_id="spiking")
    events += ev
    return events


def _probe_attractor(seeds, p, c, label: str, t_run: float = 1500.0):
    """Integrate seeds and return the final state of the first one that settles on ``label``."""
    from .attractors import amplitude_label

    args = compile_system(p, c)
    for s in seeds:
        try:
            it = Integrator(network_kernel, s, args=args)
            it.advance(t_run)
            it.start_sampling(it.t, 0.05)
            _, states = it.advance(it.t + 300.0)
        except IntegrationError:
            continue
        if _label_matches(amplitude_label(_amplitudes(states)), label):
            return it.y.copy()
    return None


def _label_matches(found: str, target: str) -> bool:
    """Per-unit label match; a target ``SA`` also accepts ``SS`` (weak coupling barely moves a resting unit)."""
    a, b = found.split("-"), target.split("-")
    return len(a) == len(b) and all(x == y or (y == "SA" and x == "SS") for x, y in zip(a, b))


def two_param_bracket(i_grid, event_kind: str = "SNLC", eps_interval=(0.0, 0.4), attractor: str = "LA-LA",
                      side: str = "low", p: ModelParams | None = None, eps_probe_step: float = 0.01,
                      seeds=None):
    """Curve of an orbit event in the (current, eps) plane, one point per grid current.

    At each current the attractor is located by direct simulation on a
    coarse eps grid, then its orbit is continued toward ``side`` of the
    interval until the requested event appears. Returns a list of
    ``(current, eps)``; grid values without a detected event are skipped.
    """
    p = p or ModelParams()
    c2 = CouplingConfig.all_to_all(2, 0.0)
    e_lo, e_hi = eps_interval
    grid = np.arange(e_lo + eps_probe_step, e_hi, eps_probe_step)
    grid = grid[::-1] if side == "low" else grid
    curve = []
    carry = None
    for cur in i_grid:
        p_i = p.replace(current=float(cur))
        base = list(seeds) if seeds is not None else _default_seeds(p_i, attractor)
        found = None
        for eps in grid if side == "high" else grid[::-1]:
            c_e = c2.with_eps(eps, eps)
            state = _probe_attractor(([carry] if carry is not None else []) + base, p_i, c_e, attractor)
            if state is not None:
                found = (eps, state)
                if side == "low":
                    break
            elif found is not None and side == "high":
                break
        if found is None:
            log.info("no %s attractor at I=%g; grid point skipped", attractor, cur)
            continue
        eps0, state = found
        carry = state
        try:
            orbit = orbit_from_state(state, p_i, c2.with_eps(eps0, eps0))
            stop = e_lo if side == "low" else e_hi
            _, events = continue_orbit(orbit, "eps", stop, initial_step=1e-3, max_step=5e-3,
                                       branch_id=f"I={cur:g}", detect_hom=False)
        except (OrbitError, IntegrationError) as exc:
            log.info("continuation failed at I=%g: %s", cur, exc)
            continue
        hits = [e for e in events if e.kind == event_kind]
        if not hits:
            log.info("no %s found at I=%g; grid point skipped", event_kind, cur)
            continue
        curve.append((float(cur), hits[0].param_value))
    return curve


def _default_seeds(p: ModelParams, attractor: str, n_random: int = 64):
    """Hand-picked seeds for a label, followed by a fixed batch of random states."""
    from .attractors import default_box, sample_ics
    from .equilibria import uncoupled_equilibria

    rest = uncoupled_equilibria(p)[0]
    spike = np.array([-20.0, 0.3])
    spike2 = np.array([-10.0, 0.5])
    if attractor == "LA-LA":
        seeds = [np.r_[spike, spike2], np.r_[spike, spike], np.r_[spike, rest],
                 np.array([-48.65, 0.1618, -38.59, 0.0322])]
    elif attractor == "LA-SA":
        seeds = [np.r_[spike, rest], np.r_[spike2, rest], np.r_[spike, rest + [2.0, 0.0]]]
    elif attractor == "SA-LA":
        seeds = [np.r_[rest, spike], np.r_[rest, spike2]]
    else:
        raise ValueError(f"no default seeds for {attractor!r}")
    return seeds + list(sample_ics(default_box(2), n_random, seed=0))


# ---------------------------------------------------------------------------
# export


def write_branch_csv(branch: OrbitBranch, path) -> None:
    k = max((o.multipliers.size for o in branch.points), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "period", "amp_max", "stability"]
                   + [f"mu{i + 1}_{part}" for i in range(k) for part in ("re", "im")])
        for o in branch.points:
            row = [f"{o.param_value:.12g}", f"{o.period:.12g}", f"{o.amp_max:.8g}", o.stability]
            for m in o.multipliers:
                row += [f"{m.real:.10g}", f"{m.imag:.10g}"]
            w.writerow(row)


def write_events_csv(events, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "param", "branch_id"])
        for e in events:
            w.writerow([e.kind, f"{e.param_value:.10g}", e.branch_id])


def orbit_to_dict(orbit: PeriodicOrbit) -> dict:
    return {"anchor": orbit.anchor.tolist(), "period": orbit.period, "param": orbit.param,
            "param_value": orbit.param_value, "section_index": orbit.section_index}


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
