"""Saddle manifolds of the uncoupled unit and reinjection diagnostics of coupled trajectories.

Crossings are measured against the *uncoupled* stable manifold in each
unit's projected plane. This is a projection diagnostic: a coupled
trajectory does not cross any invariant manifold of the coupled system.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .equilibria import uncoupled_names
from .integrate import Integrator, Trajectory
from .model import (CAP, TAU, CouplingConfig, ModelParams, compile_system, coupling_term,
                    local_jacobian, local_rhs, network_kernel)

OFFSET = 1e-6
MAX_ARCLENGTH = 500.0
BOX = ((-100.0, 60.0), (-0.1, 1.1))
NEAR_SADDLE = 2.0
STEP_NEAR = 0.05
STEP_FAR = 0.5
# the raw (x, y) metric is dominated by x; this keeps turns in y resolved
STEP_Y = 2e-3
T_MAX = 400.0
CHUNK = 1.0
SAMPLE_DT = 1e-4
BRANCHES = ("stable+", "stable-", "unstable+", "unstable-")


class GeometryError(RuntimeError):
    pass


@dataclass
class ManifoldPolyline:
    branch: str
    points: np.ndarray
    saddle: np.ndarray = field(repr=False)
    termination: str = ""

    @property
    def arclength(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))

    @property
    def is_stable(self) -> bool:
        return self.branch.startswith("stable")


@dataclass
class StableCurve:
    """Both stable branches joined through the saddle into one oriented curve.

    ``s`` is the signed arclength from the saddle (negative along
    ``stable-``), ``focus_side`` is the orientation sign (+1 left of the
    curve direction at the saddle, -1 right) of the side holding the
    unstable focus.
    """

    points: np.ndarray
    s: np.ndarray
    focus_side: int


@dataclass
class ReinjectionEvent:
    time: float
    unit_index: int
    crossing_point: np.ndarray
    coupling_vector: np.ndarray
    direction: int
    arclength: float

    @property
    def into_excitable(self) -> bool:
        return self.direction > 0


@dataclass
class FieldSample:
    time: float
    position: np.ndarray
    coupling: np.ndarray
    local: np.ndarray


def _saddle(p: ModelParams):
    named = dict((name, pt) for name, pt in uncoupled_names(p))
    if "saddle" not in named:
        raise GeometryError(f"no saddle of the uncoupled unit at current={p.current}")
    return named["saddle"], named.get("focus")


def _thin(pts: np.ndarray, saddle: np.ndarray) -> np.ndarray:
    """Keep a subsequence whose steps respect the arclength limits."""
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    cy = pts[:, 1]
    keep = [0]
    k = 0
    last = pts.shape[0] - 1
    while k < last:
        step = STEP_NEAR if np.linalg.norm(pts[k] - saddle) < NEAR_SADDLE else STEP_FAR
        j = int(np.searchsorted(cum, cum[k] + step, side="right")) - 1
        # limit the y excursion as well
        jy = k + 1
        while jy <= j and abs(cy[jy] - cy[k]) <= STEP_Y:
            jy += 1
        j = max(k + 1, min(j, jy - 1))
        keep.append(j)
        k = j
    return pts[np.array(keep)]


def _in_box(pt) -> bool:
    (x0, x1), (y0, y1) = BOX
    return x0 <= pt[0] <= x1 and y0 <= pt[1] <= y1


def _trace(start: np.ndarray, p: ModelParams, backward: bool) -> tuple[np.ndarray, str]:
    """Dense polyline of the orbit from ``start`` until a stopping rule fires."""
    args = list(compile_system(p, CouplingConfig.all_to_all(1)))
    if backward:
        # negating both time constants reverses the local vector field exactly
        pa = args[0].copy()
        pa[CAP] = -pa[CAP]
        pa[TAU] = -pa[TAU]
        args[0] = pa
    it = Integrator(network_kernel, start, args=tuple(args), abs_tol=1e-12, rel_tol=1e-12)
    it.start_sampling(0.0, SAMPLE_DT)
    pieces = []
    total = 0.0
    prev = start
    reason = "time limit"
    t = 0.0
    while t < T_MAX:
        t += CHUNK
        _, ys = it.advance(t, clip=True)
        if ys.shape[0] == 0:
            continue
        inside = np.array([_in_box(q) for q in ys])
        if not inside.all():
            ys = ys[: int(np.argmin(inside))]
            reason = "left box"
        seg = np.linalg.norm(np.diff(np.vstack([prev, ys]), axis=0), axis=1) if ys.size else np.zeros(0)
        cum = total + np.cumsum(seg)
        if cum.size and cum[-1] > MAX_ARCLENGTH:
            ys = ys[: int(np.searchsorted(cum, MAX_ARCLENGTH, side="right"))]
            reason = "arclength limit"
        if ys.size:
            pieces.append(ys)
            total = float(cum[min(len(ys), cum.size) - 1])
            prev = ys[-1]
        if reason != "time limit":
            break
        fx, fy = local_rhs(prev[0], prev[1], p)
        if np.hypot(fx, fy) < 1e-10:
            reason = "reached equilibrium"
            break
    return np.vstack([start[None, :]] + pieces), reason


def saddle_manifolds(p: ModelParams | None = None) -> list[ManifoldPolyline]:
    """Stable and unstable manifold branches of the uncoupled saddle.

    Each branch starts ``OFFSET`` away from the saddle along its
    eigenvector; stable branches are traced in backward time. Tracing stops
    at arclength ``MAX_ARCLENGTH``, on leaving ``BOX``, at an equilibrium, or
    after ``T_MAX`` time units.
    """
    p = p or ModelParams()
    saddle, _ = _saddle(p)
    eigs, vecs = np.linalg.eig(local_jacobian(saddle[0], saddle[1], p))
    eigs, vecs = eigs.real, vecs.real
    v_u = vecs[:, int(np.argmax(eigs))]
    v_s = vecs[:, int(np.argmin(eigs))]
    # +/- refers to the sign of the x-component of the offset
    v_u = v_u * np.sign(v_u[0])
    v_s = v_s * np.sign(v_s[0])
    out = []
    for name in BRANCHES:
        v = v_s if name.startswith("stable") else v_u
        sgn = 1.0 if name.endswith("+") else -1.0
        start = saddle + sgn * OFFSET * v / np.linalg.norm(v)
        dense, reason = _trace(start, p, backward=name.startswith("stable"))
        out.append(ManifoldPolyline(name, _thin(dense, saddle), saddle.copy(), reason))
    return out


def stable_curve(manifolds: list[ManifoldPolyline], p: ModelParams | None = None) -> StableCurve:
    """Join ``stable-`` (reversed), the saddle and ``stable+`` into one oriented curve."""
    p = p or ModelParams()
    by = {m.branch: m for m in manifolds}
    lo, hi = by["stable-"], by["stable+"]
    saddle = lo.saddle
    pts = np.vstack([lo.points[::-1], saddle[None, :], hi.points])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = cum - cum[lo.points.shape[0]]
    _, focus = _saddle(p)
    if focus is None:
        raise GeometryError("no unstable focus to orient the stable manifold")
    k = lo.points.shape[0]
    return StableCurve(pts, s, _side_of(pts[k + 1] - pts[k - 1], focus - saddle))


def _side_of(tangent: np.ndarray, q: np.ndarray) -> int:
    """Orientation sign of offset ``q`` relative to the direction ``tangent``.

    The sides of a spiralling curve are only meaningful locally, so the
    excitable side is fixed at the saddle: it is the half-plane of the
    local stable direction that holds the focus.
    """
    cross = tangent[0] * q[1] - tangent[1] * q[0]
    return 1 if cross > 0 else -1


def _segment_hits(P: np.ndarray, Q: np.ndarray, chunk: int = 4096):
    """All proper intersections between consecutive-point segments of ``P`` and ``Q``.

    Returns arrays ``(i, j, u, v)`` with the hit at ``P[i] + u (P[i+1]-P[i])``
    and ``Q[j] + v (Q[j+1]-Q[j])``, half-open in ``u`` so that a crossing
    exactly at a shared sample is counted once.
    """
    qa, qd = Q[:-1], np.diff(Q, axis=0)
    qlo, qhi = np.minimum(Q[:-1], Q[1:]), np.maximum(Q[:-1], Q[1:])
    out_i, out_j, out_u, out_v = [], [], [], []
    for start in range(0, P.shape[0] - 1, chunk):
        pa = P[start:start + chunk + 1]
        if pa.shape[0] < 2:
            break
        pd = np.diff(pa, axis=0)
        pa = pa[:-1]
        plo, phi = np.minimum(pa, pa + pd), np.maximum(pa, pa + pd)
        cand = ((plo[:, None, 0] <= qhi[None, :, 0]) & (phi[:, None, 0] >= qlo[None, :, 0])
                & (plo[:, None, 1] <= qhi[None, :, 1]) & (phi[:, None, 1] >= qlo[None, :, 1]))
        ii, jj = np.nonzero(cand)
        if ii.size == 0:
            continue
        r, s = pd[ii], qd[jj]
        denom = r[:, 0] * s[:, 1] - r[:, 1] * s[:, 0]
        ok = denom != 0
        ii, jj, r, s, denom = ii[ok], jj[ok], r[ok], s[ok], denom[ok]
        w = qa[jj] - pa[ii]
        u = (w[:, 0] * s[:, 1] - w[:, 1] * s[:, 0]) / denom
        v = (w[:, 0] * r[:, 1] - w[:, 1] * r[:, 0]) / denom
        hit = (u >= 0) & (u < 1) & (v >= 0) & (v <= 1)
        out_i.append(ii[hit] + start)
        out_j.append(jj[hit])
        out_u.append(u[hit])
        out_v.append(v[hit])
    if not out_i:
        e = np.zeros(0)
        return e.astype(int), e.astype(int), e, e
    return (np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_u), np.concatenate(out_v))


def reinjection_events(traj: Trajectory, manifold, unit: int, c: CouplingConfig,
                       p: ModelParams | None = None) -> list[ReinjectionEvent]:
    """Signed crossings of unit ``unit``'s projected trajectory with the uncoupled W^s.

    ``manifold`` is a :class:`StableCurve`, a stable :class:`ManifoldPolyline`
    or the list returned by :func:`saddle_manifolds`. ``direction`` is +1
    when the unit moves onto the focus (excitable) side, -1 otherwise.
    """
    if isinstance(manifold, list):
        manifold = stable_curve(manifold, p)
    elif isinstance(manifold, ManifoldPolyline):
        if not manifold.is_stable:
            raise ValueError("reinjection needs a stable manifold branch")
        p = p or ModelParams()
        pts = np.vstack([manifold.saddle[None, :], manifold.points])
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        _, focus = _saddle(p)
        manifold = StableCurve(pts, s, _side_of(pts[1] - pts[0], focus - manifold.saddle))
    if not 0 <= unit < c.n_units:
        raise IndexError(f"unit {unit} out of range for {c.n_units} units")
    proj = traj.unit(unit)
    ii, jj, uu, vv = _segment_hits(proj, manifold.points)
    order = np.argsort(ii + uu)
    events = []
    for k in order:
        i, j, u, v = int(ii[k]), int(jj[k]), float(uu[k]), float(vv[k])
        a, b = manifold.points[j], manifold.points[j + 1]
        point = a + v * (b - a)
        move = proj[i + 1] - proj[i]
        tang = b - a
        cross = tang[0] * move[1] - tang[1] * move[0]
        direction = int(np.sign(cross)) * manifold.focus_side
        t = traj.times[i] + u * (traj.times[i + 1] - traj.times[i])
        h0 = coupling_term(traj.states[i], c)[2 * unit:2 * unit + 2]
        h1 = coupling_term(traj.states[i + 1], c)[2 * unit:2 * unit + 2]
        s_arc = manifold.s[j] + v * (manifold.s[j + 1] - manifold.s[j])
        events.append(ReinjectionEvent(float(t), unit, point, (1 - u) * h0 + u * h1, direction, float(s_arc)))
    return events


def coupling_field_along(traj: Trajectory, unit: int, p: ModelParams, c: CouplingConfig,
                         stride: int = 1) -> list[FieldSample]:
    """Coupling vector and uncoupled local vector at every ``stride``-th sample of ``traj``."""
    if not 0 <= unit < c.n_units:
        raise IndexError(f"unit {unit} out of range for {c.n_units} units")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    out = []
    for k in range(0, len(traj), stride):
        s = traj.states[k]
        x, y = s[2 * unit], s[2 * unit + 1]
        h = coupling_term(s, c)[2 * unit:2 * unit + 2]
        out.append(FieldSample(float(traj.times[k]), np.array([x, y]), h, np.array(local_rhs(x, y, p))))
    return out


def write_manifolds_csv(manifolds: list[ManifoldPolyline], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["branch", "x", "y"])
        for m in manifolds:
            for x, y in m.points:
                w.writerow([m.branch, repr(float(x)), repr(float(y))])


def write_events_csv(events: list[ReinjectionEvent], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "unit", "x", "y", "hx", "hy", "dir"])
        for e in events:
            w.writerow([repr(e.time), e.unit_index, repr(float(e.crossing_point[0])),
                        repr(float(e.crossing_point[1])), repr(float(e.coupling_vector[0])),
                        repr(float(e.coupling_vector[1])), e.direction])
