"""Lyapunov spectra by tangent integration with periodic QR, and attractor classes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .integrate import Integrator, IntegrationSettings
from .model import CouplingConfig, ModelParams, _check_state, compile_system, tangent_kernel

ZERO_TOL = 1e-3
AMPLITUDE_FLOOR = 1.0
CONVERGENCE_TOL = 3e-3
FRAME_SEED = 12345
ALIGN_TIME = 100.0
CLASSES = ("equilibrium", "periodic", "quasiperiodic", "chaotic", "unclassified")


@dataclass
class LyapunovSpectrum:
    exponents: np.ndarray
    renorm_interval: float
    t_average: float
    half_window: np.ndarray
    converged: bool

    @property
    def k(self) -> int:
        return self.exponents.size

    @property
    def convergence_gap(self) -> float:
        return float(np.max(np.abs(self.exponents - self.half_window)))


def _mgs(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Modified Gram-Schmidt on the columns of ``v`` (returns Q and diag(R))."""
    q = v.copy()
    k = q.shape[1]
    diag = np.empty(k)
    for j in range(k):
        for i in range(j):
            q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
        r = np.linalg.norm(q[:, j])
        diag[j] = r
        q[:, j] /= r
    return q, diag


def orthonormalize(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Q with orthonormal columns and the positive stretch factors ``|R_jj|``."""
    if v.shape[1] <= 4:
        return _mgs(v)
    q, r = np.linalg.qr(v)
    d = np.diag(r)
    signs = np.where(d < 0, -1.0, 1.0)
    return q * signs, np.abs(d)


def spectrum(s0, k: int | None, p: ModelParams, c: CouplingConfig,
             cfg: IntegrationSettings | None = None, t_average: float = 20000.0,
             renorm_interval: float = 1.0, t_align: float = ALIGN_TIME) -> LyapunovSpectrum:
    """Leading ``k`` Lyapunov exponents from an on-attractor state ``s0``.

    The state and ``k`` tangent vectors are integrated together and the
    tangent vectors are re-orthonormalized every ``renorm_interval``; the
    exponents are the averaged logs of the stretch factors. The estimate
    over the first half of the window is kept to flag slow convergence.
    Stretch factors from the first ``t_align`` time units, while the frame
    turns toward the leading directions, are discarded.
    """
    s0 = _check_state(s0, c)
    n = s0.size
    k = n if k is None else int(k)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    if t_average <= 0 or renorm_interval <= 0:
        raise ValueError("t_average and renorm_interval must be > 0")
    cfg = cfg or IntegrationSettings()
    empty = np.zeros(0)
    args = compile_system(p, c) + (k, False, empty, empty, 0.0)
    # a fixed generic frame: coordinate axes can sit almost orthogonal to the
    # slow directions (the y variables are ~100x smaller than x)
    frame, _ = np.linalg.qr(np.random.default_rng(FRAME_SEED).normal(size=(n, k)))
    z = np.concatenate([s0, frame.T.ravel()])
    it = Integrator(tangent_kernel, z, args=args, abs_tol=cfg.abs_tol, rel_tol=cfg.rel_tol,
                    max_steps=cfg.max_steps)
    n_align = int(round(t_align / renorm_interval))
    for m in range(1, n_align + 1):
        it.advance(m * renorm_interval, clip=True, record=False)
        q, _ = orthonormalize(it.y[n:].reshape(k, n).T)
        z = it.y.copy()
        z[n:] = q.T.ravel()
        it.set_state(z)
    t0 = n_align * renorm_interval
    n_renorm = max(2, int(round(t_average / renorm_interval)))
    half = n_renorm // 2
    sums = np.zeros(k)
    half_sums = None
    for m in range(1, n_renorm + 1):
        it.advance(t0 + m * renorm_interval, clip=True, record=False)
        v = it.y[n:].reshape(k, n).T
        q, stretch = orthonormalize(v)
        sums += np.log(stretch)
        z = it.y.copy()
        z[n:] = q.T.ravel()
        it.set_state(z)
        if m == half:
            half_sums = sums.copy()
    total = n_renorm * renorm_interval
    exps = sums / total
    half_exps = half_sums / (half * renorm_interval)
    order = np.argsort(-exps)
    exps, half_exps = exps[order], half_exps[order]
    converged = bool(np.max(np.abs(exps - half_exps)) <= CONVERGENCE_TOL)
    return LyapunovSpectrum(exps, renorm_interval, total, half_exps, converged)


def classify(spec: LyapunovSpectrum | None, features, zero_tol: float = ZERO_TOL,
             amplitude_floor: float = AMPLITUDE_FLOOR) -> str:
    """Dynamical class from the exponent sign pattern and oscillation amplitudes.

    ``features`` is a feature vector with ``per_unit_amplitude`` or a plain
    array of amplitudes.
    """
    amps = np.asarray(getattr(features, "per_unit_amplitude", features), dtype=float)
    if np.all(amps < amplitude_floor):
        return "equilibrium"
    if spec is None or not spec.converged:
        return "unclassified"
    ex = np.asarray(spec.exponents)
    if ex[0] > zero_tol:
        return "chaotic"
    n_zero = int(np.sum(np.abs(ex) <= zero_tol))
    if n_zero == 1:
        return "periodic"
    if n_zero == 2:
        return "quasiperiodic"
    return "unclassified"
