"""Adaptive Tsitouras 5(4) Runge-Kutta integration with dense output.

The stepping engine is a single numba kernel. The two package kernels (the
network flow and its tangent system) are selected inside it by an integer
tag, which keeps the compiled engine cacheable; any other right-hand side
runs the same engine through ``py_func``.

Compiled right-hand sides use the signature ``rhs(t, y, out, args)``. Python
callables may instead use ``rhs(t, y) -> dy``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numba as nb
import numpy as np
from numba.extending import overload

from .model import network_kernel, tangent_kernel

# ---------------------------------------------------------------------------
# Tsitouras (2011) 5(4) tableau with its free 4th-order interpolant

C = np.array([0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0])

A = np.zeros((7, 7))
A[1, 0] = 0.161
A[2, :2] = [-0.008480655492356989, 0.335480655492357]
A[3, :3] = [2.897153057105493, -6.359448489975075, 4.3622954328695815]
A[4, :4] = [5.325864828439257, -11.748883564062828, 7.4955393428898365, -0.09249506636175525]
A[5, :5] = [5.86145544294642, -12.92096931784711, 8.159367898576159, -0.071584973281401,
            -0.028269050394068383]
A[6, :6] = [0.09646076681806523, 0.01, 0.4798896504144996, 1.379008574103742,
            -3.290069515436081, 2.324710524099774]

B = A[6].copy()

# b - b_hat, i.e. the local error estimate coefficients
BTILDE = np.array([
    -0.00178001105222577714, -0.0008164344596567469, 0.007880878010261995,
    -0.1447110071732629, 0.5823571654525552, -0.45808210592918697, 0.015151515151515152,
])

# interpolation weights b_i(theta) = sum_k R[i, k] theta^(k+1)
R = np.array([
    [1.0, -2.763706197274826, 2.9132554618219126, -1.0530884977290216],
    [0.0, 0.13169999999999998, -0.2234, 0.1017],
    [0.0, 3.9302962368947516, -5.941033872131505, 2.490627285651253],
    [0.0, -12.411077166933676, 30.33818863028232, -16.548102889244902],
    [0.0, 37.50931341651104, -88.1789048947664, 47.37952196281928],
    [0.0, -27.896526289197286, 65.09189467479366, -34.87065786149661],
    [0.0, 1.5, -4.0, 2.5],
])

# controller constants: PI (beta = 0.04), safety 0.9, step ratio clamped to [0.2, 5]
_SAFETY = 0.9
_BETA = 0.04
_EXPO = 0.2 - 0.75 * _BETA
_FAC_MIN = 0.2
_FAC_MAX = 5.0

# engine status codes
OK = 0
EVENTS_FULL = 1
SAMPLES_FULL = 2
STEP_UNDERFLOW = -1
MAX_STEPS = -2
NON_FINITE = -3

# context scalar slots
_T, _T_PREV, _H, _ERR_OLD, _H_LAST, _G_LAST = range(6)
# context integer slots
_K_SAMPLE, _STEPS, _HAS_STEP, _HAVE_G = range(4)


class IntegrationError(RuntimeError):
    """Integration could not be completed; carries the last state reached."""

    def __init__(self, message: str, t: float, state: np.ndarray):
        super().__init__(message)
        self.t = t
        self.state = state


class DivergenceError(IntegrationError):
    """Step size underflow or step budget exhausted."""


class BlowUpError(IntegrationError):
    """The state became non-finite."""


@dataclass(frozen=True)
class IntegrationSettings:
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    t_transient: float = 7000.0
    t_total: float = 40000.0
    sample_dt: float = 0.05
    max_steps: int = 100_000_000

    def __post_init__(self) -> None:
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be > 0")
        if not (0 <= self.t_transient < self.t_total):
            raise ValueError("need 0 <= t_transient < t_total")
        if not self.sample_dt > 0:
            raise ValueError("sample_dt must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    @property
    def n_samples(self) -> int:
        return int(math.floor((self.t_total - self.t_transient) / self.sample_dt * (1 + 1e-12))) + 1

    def to_dict(self) -> dict:
        return {
            "abs_tol": self.abs_tol, "rel_tol": self.rel_tol,
            "t_transient": self.t_transient, "t_total": self.t_total,
            "sample_dt": self.sample_dt, "max_steps": self.max_steps,
        }

    @classmethod
    def from_dict(cls, data) -> "IntegrationSettings":
        known = set(cls().to_dict())
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown IntegrationSettings keys: {sorted(unknown)}")
        return cls(**dict(data))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[0] != self.times.size:
            raise ValueError("states must be (len(times), dim)")

    def __len__(self) -> int:
        return self.times.size

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def unit(self, i: int) -> np.ndarray:
        """Projection onto unit ``i`` (0-based) as an ``(m, 2)`` array."""
        return self.states[:, 2 * i:2 * i + 2]

    def to_csv(self, path) -> None:
        n = self.dim // 2
        header = ",".join(["t"] + [f"{v}{i + 1}" for i in range(n) for v in ("x", "y")])
        data = np.column_stack([self.times, self.states])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:])


# ---------------------------------------------------------------------------
# compiled engine


# right-hand sides known to the compiled engine; everything else runs in
# Python mode. Selecting the kernel by an integer (instead of passing the
# dispatcher as a value) keeps the engine cacheable across processes.
KIND_PYTHON = -1
KIND_NETWORK = 0
KIND_TANGENT = 1


def _call(kind, f, t, y, out, args):
    f(t, y, out, args)


@overload(_call)
def _call_compiled(kind, f, t, y, out, args):
    def impl(kind, f, t, y, out, args):
        if kind == KIND_NETWORK:
            network_kernel(t, y, out, args)
        else:
            tangent_kernel(t, y, out, args)

    return impl


def _gcall(g, y, gargs):
    return g(y, gargs)


@overload(_gcall)
def _gcall_compiled(g, y, gargs):
    def impl(g, y, gargs):
        return linear_section(y, gargs)

    return impl


@nb.njit(cache=True)
def _interp_into(theta, h, y0, K, out):
    n = y0.size
    w = np.empty(7)
    for i in range(7):
        w[i] = theta * (R[i, 0] + theta * (R[i, 1] + theta * (R[i, 2] + theta * R[i, 3])))
    for k in range(n):
        acc = 0.0
        for i in range(7):
            acc += w[i] * K[i, k]
        out[k] = y0[k] + h * acc


@nb.njit(cache=True)
def linear_section(y, gargs):
    """Event function ``coef . y[:len(coef)] - offset``."""
    coef, offset = gargs[0], gargs[1]
    acc = -offset
    for k in range(coef.size):
        acc += coef[k] * y[k]
    return acc


@nb.njit(cache=True)
def _initial_step(kind, f, args, t, y, f0, abs_tol, rel_tol, tmp, f1):
    n = y.size
    d0 = 0.0
    d1 = 0.0
    for k in range(n):
        sc = abs_tol + abs(y[k]) * rel_tol
        d0 += (y[k] / sc) ** 2
        d1 += (f0[k] / sc) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    for k in range(n):
        tmp[k] = y[k] + h0 * f0[k]
    _call(kind, f, t + h0, tmp, f1, args)
    d2 = 0.0
    for k in range(n):
        sc = abs_tol + abs(y[k]) * rel_tol
        d2 += ((f1[k] - f0[k]) / sc) ** 2
    d2 = math.sqrt(d2 / n) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1)


@nb.njit(cache=True)
def _drive(kind, f, args, g, gargs, use_events, gdir, gtmin,
           y, y0, K, fs, iv,
           t_end, clip, t_stop, samp_t0, samp_dt, samp_t, samp_y,
           ev_t, ev_y, abs_tol, rel_tol, max_steps, h_max):
    n = y.size
    tmp = np.empty(n)
    ns = 0
    ne = 0
    cap_s = samp_t.size
    cap_e = ev_t.size
    limit = min(t_stop, t_end)

    t = fs[_T]
    # flush samples that belong to the previous call's last step
    if samp_dt > 0.0:
        while True:
            tk = samp_t0 + iv[_K_SAMPLE] * samp_dt
            if tk > limit + 1e-12 * max(1.0, abs(limit)) or tk > t + 1e-12 * max(1.0, abs(t)):
                break
            if ns >= cap_s:
                return SAMPLES_FULL, ns, ne
            if iv[_HAS_STEP] == 1 and tk < t:
                theta = (tk - fs[_T_PREV]) / fs[_H_LAST]
                _interp_into(theta, fs[_H_LAST], y0, K, tmp)
                samp_y[ns, :] = tmp
            else:
                samp_y[ns, :] = y
            samp_t[ns] = tk
            ns += 1
            iv[_K_SAMPLE] += 1

    if t >= t_end or t >= t_stop:
        return OK, ns, ne

    _call(kind, f, t, y, K[0], args)
    h = fs[_H]
    err_old = fs[_ERR_OLD]
    if use_events and iv[_HAVE_G] == 0:
        fs[_G_LAST] = _gcall(g, y, gargs)
        iv[_HAVE_G] = 1
    need_copy = False

    while True:
        if t >= t_end or t >= t_stop:
            fs[_T] = t
            fs[_H] = h
            fs[_ERR_OLD] = err_old
            return OK, ns, ne
        if iv[_STEPS] >= max_steps:
            fs[_T] = t
            return MAX_STEPS, ns, ne
        h_try = min(h, h_max)
        last = False
        if clip and t + h_try >= t_end:
            h_try = t_end - t
            last = True
        if need_copy:
            K[0, :] = K[6, :]
            need_copy = False
        for s in range(1, 7):
            for k in range(n):
                acc = 0.0
                for j in range(s):
                    acc += A[s, j] * K[j, k]
                tmp[k] = y[k] + h_try * acc
            _call(kind, f, t + C[s] * h_try, tmp, K[s], args)
        err = 0.0
        for k in range(n):
            e = 0.0
            for j in range(7):
                e += BTILDE[j] * K[j, k]
            sc = abs_tol + rel_tol * max(abs(y[k]), abs(tmp[k]))
            err += (h_try * e / sc) ** 2
        err = math.sqrt(err / n)
        if not math.isfinite(err):
            # a stage left the domain of finite values: shrink hard
            h = h_try * _FAC_MIN
            if h < 1e-14 * max(1.0, abs(t)):
                fs[_T] = t
                return NON_FINITE, ns, ne
            continue
        if err <= 1.0:
            y0[:] = y
            y[:] = tmp
            fs[_T_PREV] = t
            fs[_H_LAST] = h_try
            t = t_end if last else t + h_try
            iv[_STEPS] += 1
            iv[_HAS_STEP] = 1
            need_copy = True
            for k in range(n):
                if not math.isfinite(y[k]):
                    fs[_T] = t
                    return NON_FINITE, ns, ne
            fac11 = err ** _EXPO
            fac = fac11 / err_old ** _BETA / _SAFETY
            fac = max(1.0 / _FAC_MAX, min(1.0 / _FAC_MIN, fac))
            err_old = max(err, 1e-4)
            h_new = h_try / fac
            if not last:
                h = h_new
            elif h_new < h:
                h = h_new
            fs[_T] = t
            fs[_H] = h
            fs[_ERR_OLD] = err_old

            if samp_dt > 0.0:
                while True:
                    tk = samp_t0 + iv[_K_SAMPLE] * samp_dt
                    if tk > limit + 1e-12 * max(1.0, abs(limit)) or tk > t + 1e-12 * max(1.0, abs(t)):
                        break
                    if ns >= cap_s:
                        return SAMPLES_FULL, ns, ne
                    if tk >= t:
                        samp_y[ns, :] = y
                    else:
                        _interp_into((tk - fs[_T_PREV]) / h_try, h_try, y0, K, samp_y[ns])
                    samp_t[ns] = tk
                    ns += 1
                    iv[_K_SAMPLE] += 1

            if use_events:
                g0 = fs[_G_LAST]
                g1 = _gcall(g, y, gargs)
                fs[_G_LAST] = g1
                up = g0 < 0.0 and g1 >= 0.0
                down = g0 > 0.0 and g1 <= 0.0
                if (gdir >= 0 and up) or (gdir <= 0 and down):
                    lo = 0.0
                    hi = 1.0
                    glo = g0
                    for _ in range(200):
                        mid = 0.5 * (lo + hi)
                        if mid <= lo or mid >= hi:
                            break
                        _interp_into(mid, h_try, y0, K, tmp)
                        gm = _gcall(g, tmp, gargs)
                        if (gm < 0.0) == (glo < 0.0) and gm != 0.0:
                            lo = mid
                            glo = gm
                        else:
                            hi = mid
                    t_ev = fs[_T_PREV] + hi * h_try
                    if t_ev > gtmin:
                        _interp_into(hi, h_try, y0, K, tmp)
                        ev_t[ne] = t_ev
                        ev_y[ne, :] = tmp
                        ne += 1
                        if ne >= cap_e:
                            return EVENTS_FULL, ns, ne
        else:
            fac11 = err ** _EXPO
            h = h_try / min(1.0 / _FAC_MIN, fac11 / _SAFETY)
            if h < 1e-14 * max(1.0, abs(t)):
                fs[_T] = t
                return STEP_UNDERFLOW, ns, ne


def _is_compiled(fn) -> bool:
    return fn is network_kernel or fn is tangent_kernel


_EMPTY = np.zeros(0)


def _pad_args(args: tuple) -> tuple:
    """Extend network arguments to the tangent-kernel layout so both kernels share one type."""
    if len(args) == 5:
        return tuple(args) + (0, False, _EMPTY, _EMPTY, 0.0)
    return tuple(args)


def _wrap_python_rhs(rhs: Callable) -> Callable:
    import inspect

    try:
        nparams = len(inspect.signature(rhs).parameters)
    except (TypeError, ValueError):
        nparams = 4
    if nparams == 4:
        return rhs

    def f(t, y, out, args):
        out[:] = rhs(t, y)

    return f


@dataclass(frozen=True)
class Section:
    """Linear section ``coef . state - offset`` (zero set is the section)."""

    coef: np.ndarray
    offset: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "coef", np.asarray(self.coef, dtype=np.float64))
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def coordinate(cls, dim: int, index: int, value: float) -> "Section":
        coef = np.zeros(dim)
        coef[index] = 1.0
        return cls(coef, value)

    def __call__(self, y) -> float:
        y = np.asarray(y)
        return float(self.coef @ y[: self.coef.size] - self.offset)


class Integrator:
    """Resumable integration of a single trajectory.

    Single-use and single-threaded; independent instances may run in
    parallel. ``advance`` never shortens a step to hit ``t_stop`` (only the
    final ``t_end`` of a clipped run), so the accepted step sequence does not
    depend on how a run is chunked.
    """

    def __init__(self, rhs, y0, *, args=(), t0: float = 0.0, abs_tol: float = 1e-9,
                 rel_tol: float = 1e-9, max_steps: int = 100_000_000, h_max: float = math.inf,
                 event=None, event_direction: int = 0, event_t_min: float = -math.inf):
        y0 = np.array(y0, dtype=np.float64)
        if y0.ndim != 1:
            raise ValueError("initial state must be a vector")
        if rhs is network_kernel:
            self._kind = KIND_NETWORK
        elif rhs is tangent_kernel:
            self._kind = KIND_TANGENT
        else:
            self._kind = KIND_PYTHON
        self._compiled = self._kind != KIND_PYTHON
        if self._compiled:
            self._rhs = None
            args = _pad_args(args)
        else:
            self._rhs = _wrap_python_rhs(rhs)
        self._args = args
        n = y0.size
        self.y = y0
        self._y0 = y0.copy()
        self._K = np.zeros((7, n))
        self._fs = np.array([t0, t0, 0.0, 1e-4, 0.0, 0.0])
        self._iv = np.zeros(4, dtype=np.int64)
        self.abs_tol = abs_tol
        self.rel_tol = rel_tol
        self.max_steps = max_steps
        self.h_max = h_max
        self._samp_t0 = 0.0
        self._samp_dt = 0.0
        self.event_times: list[float] = []
        self.event_states: list[np.ndarray] = []
        self._set_event(event, event_direction, event_t_min)

        f0 = np.empty(n)
        init = _initial_step if self._compiled else _initial_step.py_func
        (rhs if self._compiled else self._rhs)(t0, self.y, f0, self._args)
        if not np.all(np.isfinite(f0)):
            raise BlowUpError("right-hand side is not finite at the initial state", t0, self.y.copy())
        self._fs[_H] = init(self._kind, self._rhs, self._args, t0, self.y, f0, abs_tol, rel_tol,
                            np.empty(n), np.empty(n))

    def _set_event(self, event, direction, t_min) -> None:
        self._gdir = int(direction)
        self._gtmin = float(t_min)
        if event is None:
            self._g, self._gargs, self._use_events = None, (np.zeros(0), 0.0), False
        elif isinstance(event, Section):
            g = None if self._compiled else linear_section.py_func
            self._g, self._gargs, self._use_events = g, (event.coef, event.offset), True
        elif self._compiled:
            raise TypeError("a compiled right-hand side needs a linear Section event")
        else:
            self._g, self._gargs, self._use_events = (lambda y, a: event(y)), None, True

    @property
    def t(self) -> float:
        return float(self._fs[_T])

    @property
    def steps(self) -> int:
        return int(self._iv[_STEPS])

    def set_state(self, y) -> None:
        """Replace the current state (e.g. after renormalizing tangent vectors)."""
        self.y[:] = y
        self._iv[_HAS_STEP] = 0
        self._iv[_HAVE_G] = 0

    def start_sampling(self, t0: float, dt: float) -> None:
        if dt <= 0:
            raise ValueError("sample spacing must be > 0")
        self._samp_t0 = float(t0)
        self._samp_dt = float(dt)
        k = 0
        if t0 < self.t:
            k = int(math.ceil((self.t - t0) / dt - 1e-9))
        self._iv[_K_SAMPLE] = k

    def _pending_samples(self, t_stop: float) -> int:
        if self._samp_dt <= 0:
            return 0
        k0 = int(self._iv[_K_SAMPLE])
        last = int(math.floor((t_stop - self._samp_t0) / self._samp_dt * (1 + 1e-12) + 1e-9))
        return max(0, last - k0 + 1)

    def advance(self, t_stop: float, clip: bool = False, record: bool = True):
        """Integrate until ``t >= t_stop`` (exactly ``t_stop`` when ``clip``).

        Returns ``(times, states)`` of the samples emitted on the grid set by
        :meth:`start_sampling` (empty arrays when sampling is off).
        """
        n = self.y.size
        cap = self._pending_samples(t_stop) + 1 if record else 0
        samp_t = np.empty(cap)
        samp_y = np.empty((cap, n))
        ev_t = np.empty(16)
        ev_y = np.empty((16, n))
        t_end = t_stop if clip else math.inf
        out_t, out_y = [], []
        common = (self.y, self._y0, self._K, self._fs, self._iv, t_end, clip, t_stop, self._samp_t0,
                  self._samp_dt if record else 0.0, samp_t, samp_y, ev_t, ev_y, self.abs_tol,
                  self.rel_tol, self.max_steps, self.h_max)
        while True:
            drive = _drive if self._compiled else _drive.py_func
            # non-finite values are detected and reported by the engine itself
            with np.errstate(over="ignore", invalid="ignore"):
                status, ns, ne = drive(self._kind, self._rhs, self._args, self._g, self._gargs,
                                       self._use_events, self._gdir, self._gtmin, *common)
            if ns:
                out_t.append(samp_t[:ns].copy())
                out_y.append(samp_y[:ns].copy())
            for k in range(ne):
                self.event_times.append(float(ev_t[k]))
                self.event_states.append(ev_y[k].copy())
            if status in (EVENTS_FULL, SAMPLES_FULL):
                continue
            if status == OK:
                break
            state = self.y.copy()
            if status == NON_FINITE:
                raise BlowUpError(f"state became non-finite near t={self.t:.6g}", self.t, state)
            if status == MAX_STEPS:
                raise DivergenceError(f"max_steps={self.max_steps} exceeded at t={self.t:.6g}", self.t, state)
            raise DivergenceError(f"step size underflow at t={self.t:.6g}", self.t, state)
        if out_t:
            return np.concatenate(out_t), np.concatenate(out_y)
        return np.empty(0), np.empty((0, n))


def integrate(rhs, s0, cfg: IntegrationSettings, args=()) -> Trajectory:
    """Integrate ``rhs`` from ``s0`` at t=0 to ``cfg.t_total``.

    Samples are emitted on the grid ``t_transient + k * sample_dt`` from the
    dense output; everything earlier is discarded.
    """
    it = Integrator(rhs, s0, args=args, abs_tol=cfg.abs_tol, rel_tol=cfg.rel_tol,
                    max_steps=cfg.max_steps)
    it.start_sampling(cfg.t_transient, cfg.sample_dt)
    times, states = it.advance(cfg.t_total, clip=True)
    return Trajectory(times, states)


def simulate(s0, p, c, cfg: IntegrationSettings) -> Trajectory:
    """Integrate the coupled network from ``s0``."""
    from .model import _check_state, compile_system, network_kernel

    s0 = _check_state(s0, c)
    return integrate(network_kernel, s0, cfg, compile_system(p, c))


@dataclass
class LiveIntegration:
    """A trajectory to be generated on demand, so crossings can use the dense output."""

    rhs: Callable
    s0: np.ndarray
    cfg: IntegrationSettings
    args: tuple = field(default=())


def _lagrange_cubic(times, states, k, tq):
    m = times.size
    lo = min(max(k - 1, 0), max(m - 4, 0))
    idx = np.arange(lo, min(lo + 4, m))
    ts = times[idx]
    out = np.zeros(states.shape[1])
    for a, ia in enumerate(idx):
        w = 1.0
        for b in range(len(idx)):
            if b != a:
                w *= (tq - ts[b]) / (ts[a] - ts[b])
        out += w * states[ia]
    return out


def locate_crossings(source, section: Callable, direction: int = 0) -> list[tuple[float, np.ndarray]]:
    """Times and states where ``section(state)`` changes sign.

    ``direction`` +1 keeps upward crossings (negative to non-negative), -1
    downward ones, 0 both. With a :class:`LiveIntegration` source and a
    linear :class:`Section` the crossings are bisected on the integrator's
    dense output; with a stored :class:`Trajectory` they are bisected on a
    local cubic interpolant of the samples.
    """
    if isinstance(source, LiveIntegration):
        cfg = source.cfg
        if _is_compiled(source.rhs) and not isinstance(section, Section):
            source = integrate(source.rhs, source.s0, cfg, source.args)
        else:
            it = Integrator(source.rhs, source.s0, args=source.args, abs_tol=cfg.abs_tol,
                            rel_tol=cfg.rel_tol, max_steps=cfg.max_steps, event=section,
                            event_direction=direction, event_t_min=cfg.t_transient)
            it.advance(cfg.t_total, clip=True, record=False)
            return list(zip(it.event_times, it.event_states))

    times, states = source.times, source.states
    if times.size < 2:
        return []
    g = np.array([section(s) for s in states])
    out = []
    for k in range(times.size - 1):
        g0, g1 = g[k], g[k + 1]
        up = g0 < 0.0 <= g1
        down = g0 > 0.0 >= g1
        if not ((direction >= 0 and up) or (direction <= 0 and down)):
            continue
        lo, hi, glo = times[k], times[k + 1], g0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            gm = section(_lagrange_cubic(times, states, k, mid))
            if (gm < 0.0) == (glo < 0.0) and gm != 0.0:
                lo, glo = mid, gm
            else:
                hi = mid
        out.append((hi, _lagrange_cubic(times, states, k, hi)))
    return out
