"""Excitable two-variable neuron units with diffusive network coupling.

Each unit carries a membrane potential ``x`` (mV) and a potassium gating
variable ``y`` (dimensionless). Units are coupled through

    h_i(z) = sum_{j in Omega_i} eps_ij (z_j - z_i)

applied separately to the ``x`` and ``y`` components. The ``x`` coupling is
*not* divided by the capacitance: ``eps_x`` is understood to already absorb
``1/C`` (with the default ``C = 1`` the two readings coincide).

Network states are flat vectors laid out as ``[x_1, y_1, x_2, y_2, ...]``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numba as nb
import numpy as np

# index layout of the packed parameter vector used by the compiled kernels
TAU, CAP, E_LEAK, E_NA, E_K, G_LEAK, G_NA, G_K, M_HALF, K_M, N_HALF, K_N, CURRENT = range(13)


@dataclass(frozen=True)
class ModelParams:
    """Constants of a single excitable unit.

    Units: ``tau`` in ms, ``capacitance`` in uF/cm^2, potentials in mV,
    conductances in mS/cm^2, ``current`` in uA/cm^2.
    """

    tau: float = 0.16
    capacitance: float = 1.0
    e_leak: float = -80.0
    e_na: float = 60.0
    e_k: float = -90.0
    g_leak: float = 8.0
    g_na: float = 20.0
    g_k: float = 10.0
    m_half: float = -20.0
    k_m: float = 15.0
    n_half: float = -25.0
    k_n: float = 5.0
    current: float = 2.0

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ValueError(f"ModelParams.{f.name} must be a finite number, got {v!r}")
            object.__setattr__(self, f.name, float(v))
        for name in ("g_leak", "g_na", "g_k", "capacitance", "tau"):
            if getattr(self, name) <= 0:
                raise ValueError(f"ModelParams.{name} must be > 0, got {getattr(self, name)}")
        for name in ("k_m", "k_n"):
            if getattr(self, name) == 0:
                raise ValueError(f"ModelParams.{name} must be nonzero")

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.tau, self.capacitance, self.e_leak, self.e_na, self.e_k,
                self.g_leak, self.g_na, self.g_k, self.m_half, self.k_m,
                self.n_half, self.k_n, self.current,
            ],
            dtype=np.float64,
        )

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown ModelParams keys: {sorted(unknown)}")
        return cls(**dict(data))


def _edge(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class CouplingConfig:
    """Undirected network with global coupling strengths.

    ``edges`` holds 0-based unordered pairs. ``edge_overrides`` maps an edge
    to a strength that replaces *both* ``eps_x`` and ``eps_y`` on that edge.
    JSON serialization uses 1-based unit numbers.
    """

    n_units: int
    edges: frozenset = field(default_factory=frozenset)
    eps_x: float = 0.0
    eps_y: float = 0.0
    edge_overrides: Mapping = field(default_factory=dict)

    def __post_init__(self) -> None:
        if int(self.n_units) != self.n_units or self.n_units < 1:
            raise ValueError(f"n_units must be a positive integer, got {self.n_units!r}")
        object.__setattr__(self, "n_units", int(self.n_units))
        edges = set()
        for pair in self.edges:
            i, j = (int(v) for v in pair)
            if i == j:
                raise ValueError(f"self-loop on unit {i} is not allowed")
            if not (0 <= i < self.n_units and 0 <= j < self.n_units):
                raise ValueError(f"edge {(i, j)} refers to a unit outside 0..{self.n_units - 1}")
            edges.add(_edge(i, j))
        object.__setattr__(self, "edges", frozenset(edges))
        for name in ("eps_x", "eps_y"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"CouplingConfig.{name} must be finite and >= 0, got {v!r}")
            object.__setattr__(self, name, float(v))
        overrides = {}
        for pair, v in dict(self.edge_overrides).items():
            e = _edge(*(int(k) for k in pair))
            if e not in edges:
                raise ValueError(f"edge override {pair} does not refer to an existing edge")
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"edge override {pair} must be finite and >= 0, got {v!r}")
            overrides[e] = float(v)
        object.__setattr__(self, "edge_overrides", overrides)

    # -- constructors -------------------------------------------------------

    @classmethod
    def all_to_all(cls, n_units: int, eps: float = 0.0, eps_y: float | None = None) -> "CouplingConfig":
        edges = {(i, j) for i in range(n_units) for j in range(i + 1, n_units)}
        return cls(n_units, frozenset(edges), eps, eps if eps_y is None else eps_y)

    @classmethod
    def from_adjacency(cls, matrix, eps_x: float = 0.0, eps_y: float = 0.0) -> "CouplingConfig":
        a = np.asarray(matrix)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("adjacency matrix must be square")
        if not np.array_equal(a != 0, (a != 0).T):
            raise ValueError("adjacency matrix must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ValueError("adjacency matrix must have an empty diagonal")
        i, j = np.nonzero(np.triu(a, 1))
        return cls(a.shape[0], frozenset(zip(i.tolist(), j.tolist())), eps_x, eps_y)

    @classmethod
    def random_connected(cls, n_units: int, p: float, seed: int, eps: float = 0.0) -> "CouplingConfig":
        """Erdos-Renyi graph, redrawn until connected (deterministic per seed)."""
        rng = np.random.default_rng(seed)
        for _ in range(10_000):
            upper = np.triu(rng.random((n_units, n_units)) < p, 1)
            c = cls.from_adjacency(upper | upper.T, eps, eps)
            if c.is_connected():
                return c
        raise RuntimeError(f"no connected graph drawn for n={n_units}, p={p}")

    def with_eps(self, eps_x: float | None = None, eps_y: float | None = None) -> "CouplingConfig":
        return dataclasses.replace(
            self,
            eps_x=self.eps_x if eps_x is None else eps_x,
            eps_y=self.eps_y if eps_y is None else eps_y,
        )

    # -- graph queries ------------------------------------------------------

    def neighbors(self, i: int) -> list[int]:
        return sorted(j for e in self.edges if i in e for j in e if j != i)

    @property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_units, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_units, self.n_units), dtype=int)
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1
        return a

    def is_connected(self) -> bool:
        seen = {0}
        stack = [0]
        while stack:
            i = stack.pop()
            for j in self.neighbors(i):
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.n_units

    def is_automorphism(self, perm: Iterable[int]) -> bool:
        perm = list(perm)
        mapped = {_edge(perm[i], perm[j]) for i, j in self.edges}
        if mapped != set(self.edges):
            return False
        return all(
            self.edge_overrides.get(e) == self.edge_overrides.get(_edge(perm[e[0]], perm[e[1]]))
            for e in self.edges
        )

    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Directed neighbor lists ``(indptr, indices, w_x, w_y)`` for the kernels."""
        rows: list[list[tuple[int, float, float]]] = [[] for _ in range(self.n_units)]
        for e in sorted(self.edges):
            wx = self.edge_overrides.get(e, self.eps_x)
            wy = self.edge_overrides.get(e, self.eps_y)
            rows[e[0]].append((e[1], wx, wy))
            rows[e[1]].append((e[0], wx, wy))
        indptr = np.zeros(self.n_units + 1, dtype=np.int64)
        for i, r in enumerate(rows):
            r.sort()
            indptr[i + 1] = indptr[i] + len(r)
        flat = [t for r in rows for t in r]
        indices = np.array([t[0] for t in flat], dtype=np.int64)
        wx = np.array([t[1] for t in flat], dtype=np.float64)
        wy = np.array([t[2] for t in flat], dtype=np.float64)
        return indptr, indices, wx, wy

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n_units": self.n_units,
            "adjacency": [[i + 1, j + 1] for i, j in sorted(self.edges)],
            "eps_x": self.eps_x,
            "eps_y": self.eps_y,
            "edge_overrides": [
                [i + 1, j + 1, v] for (i, j), v in sorted(self.edge_overrides.items())
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CouplingConfig":
        known = {"n_units", "adjacency", "eps_x", "eps_y", "edge_overrides"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown CouplingConfig keys: {sorted(unknown)}")
        n = data["n_units"]
        edges = []
        for pair in data.get("adjacency", []):
            if len(pair) != 2:
                raise ValueError(f"adjacency entries must be index pairs, got {pair!r}")
            i, j = pair
            if min(i, j) < 1:
                raise ValueError(f"adjacency uses 1-based unit numbers, got {pair!r}")
            edges.append((i - 1, j - 1))
        overrides = {}
        for entry in data.get("edge_overrides", []):
            i, j, v = entry
            overrides[(i - 1, j - 1)] = v
        return cls(
            n,
            frozenset(edges),
            data.get("eps_x", 0.0),
            data.get("eps_y", 0.0),
            overrides,
        )


# ---------------------------------------------------------------------------
# compiled kernels


@nb.njit(cache=True)
def _sigmoid(x, half, slope):
    return 1.0 / (1.0 + math.exp((half - x) / slope))


@nb.njit(cache=True)
def _local(x, y, p):
    m = _sigmoid(x, p[M_HALF], p[K_M])
    n = _sigmoid(x, p[N_HALF], p[K_N])
    fx = (p[CURRENT] - p[G_LEAK] * (x - p[E_LEAK]) - p[G_NA] * m * (x - p[E_NA])
          - p[G_K] * y * (x - p[E_K])) / p[CAP]
    fy = (n - y) / p[TAU]
    return fx, fy


@nb.njit(cache=True)
def _local_jac(x, y, p):
    m = _sigmoid(x, p[M_HALF], p[K_M])
    n = _sigmoid(x, p[N_HALF], p[K_N])
    dm = m * (1.0 - m) / p[K_M]
    dn = n * (1.0 - n) / p[K_N]
    a = (-p[G_LEAK] - p[G_NA] * (dm * (x - p[E_NA]) + m) - p[G_K] * y) / p[CAP]
    b = -p[G_K] * (x - p[E_K]) / p[CAP]
    c = dn / p[TAU]
    d = -1.0 / p[TAU]
    return a, b, c, d


@nb.njit(cache=True)
def network_kernel(t, s, out, args):
    """Compiled right-hand side with signature ``(t, state, out, args)``.

    ``args = (params, indptr, indices, w_x, w_y)`` as built by
    :func:`compile_system`.
    """
    # local dynamics written out by hand: this is the innermost hot loop
    p, indptr, indices, wx, wy = args[0], args[1], args[2], args[3], args[4]
    n = indptr.size - 1
    for i in range(n):
        x = s[2 * i]
        y = s[2 * i + 1]
        m = 1.0 / (1.0 + math.exp((p[M_HALF] - x) / p[K_M]))
        ninf = 1.0 / (1.0 + math.exp((p[N_HALF] - x) / p[K_N]))
        fx = (p[CURRENT] - p[G_LEAK] * (x - p[E_LEAK]) - p[G_NA] * m * (x - p[E_NA])
              - p[G_K] * y * (x - p[E_K])) / p[CAP]
        fy = (ninf - y) / p[TAU]
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            fx += wx[e] * (s[2 * j] - x)
            fy += wy[e] * (s[2 * j + 1] - y)
        out[2 * i] = fx
        out[2 * i + 1] = fy


@nb.njit(cache=True)
def _jacobian_into(s, p, indptr, indices, wx, wy, jac):
    n = indptr.size - 1
    jac[:, :] = 0.0
    for i in range(n):
        a, b, c, d = _local_jac(s[2 * i], s[2 * i + 1], p)
        jac[2 * i, 2 * i] = a
        jac[2 * i, 2 * i + 1] = b
        jac[2 * i + 1, 2 * i] = c
        jac[2 * i + 1, 2 * i + 1] = d
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            jac[2 * i, 2 * j] += wx[e]
            jac[2 * i, 2 * i] -= wx[e]
            jac[2 * i + 1, 2 * j + 1] += wy[e]
            jac[2 * i + 1, 2 * i + 1] -= wy[e]


@nb.njit(cache=True)
def tangent_kernel(t, z, out, args):
    """State plus ``k`` tangent columns, optionally plus one parameter-sensitivity column.

    ``args = (params, indptr, indices, w_x, w_y, k, sens, dw_x, dw_y, d_current)``.
    Layout of ``z``: state (n), then ``k`` tangent vectors of length n, then
    (if ``sens``) the sensitivity of the state to the continuation parameter.
    The sensitivity forcing is the coupling with weights ``dw`` plus
    ``d_current / C`` on every x-equation.
    """
    p, indptr, indices, wx, wy = args[0], args[1], args[2], args[3], args[4]
    k, sens, dwx, dwy, dcur = args[5], args[6], args[7], args[8], args[9]
    nu = indptr.size - 1
    n = 2 * nu
    ncol = k + (1 if sens else 0)
    for i in range(nu):
        xi = z[2 * i]
        yi = z[2 * i + 1]
        m = 1.0 / (1.0 + math.exp((p[M_HALF] - xi) / p[K_M]))
        ninf = 1.0 / (1.0 + math.exp((p[N_HALF] - xi) / p[K_N]))
        fx = (p[CURRENT] - p[G_LEAK] * (xi - p[E_LEAK]) - p[G_NA] * m * (xi - p[E_NA])
              - p[G_K] * yi * (xi - p[E_K])) / p[CAP]
        fy = (ninf - yi) / p[TAU]
        a = (-p[G_LEAK] - p[G_NA] * (m * (1.0 - m) / p[K_M] * (xi - p[E_NA]) + m)
             - p[G_K] * yi) / p[CAP]
        b = -p[G_K] * (xi - p[E_K]) / p[CAP]
        c = ninf * (1.0 - ninf) / p[K_N] / p[TAU]
        d = -1.0 / p[TAU]
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            fx += wx[e] * (z[2 * j] - xi)
            fy += wy[e] * (z[2 * j + 1] - yi)
        out[2 * i] = fx
        out[2 * i + 1] = fy
        for col in range(ncol):
            off = n + col * n
            vx = z[off + 2 * i]
            vy = z[off + 2 * i + 1]
            gx = a * vx + b * vy
            gy = c * vx + d * vy
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                gx += wx[e] * (z[off + 2 * j] - vx)
                gy += wy[e] * (z[off + 2 * j + 1] - vy)
            if sens and col == k:
                gx += dcur / p[CAP]
                for e in range(indptr[i], indptr[i + 1]):
                    j = indices[e]
                    gx += dwx[e] * (z[2 * j] - xi)
                    gy += dwy[e] * (z[2 * j + 1] - yi)
            out[off + 2 * i] = gx
            out[off + 2 * i + 1] = gy


def compile_system(p: ModelParams, c: CouplingConfig) -> tuple:
    """Pack parameters and topology into the argument tuple of :func:`network_kernel`."""
    indptr, indices, wx, wy = c.csr()
    return (p.as_array(), indptr, indices, wx, wy)


def parameter_direction(c: CouplingConfig, param: str) -> tuple[np.ndarray, np.ndarray, float]:
    """Derivative weights ``(dw_x, dw_y, d_current)`` of the vector field w.r.t. a named parameter.

    ``eps`` moves ``eps_x`` and ``eps_y`` together, ``eps_x``/``eps_y`` move one
    of them, ``current`` moves the drive. Overridden edges do not move.
    """
    indptr, indices, _, _ = c.csr()
    src = np.repeat(np.arange(c.n_units), np.diff(indptr))
    free = np.array(
        [_edge(int(i), int(j)) not in c.edge_overrides for i, j in zip(src, indices)], dtype=np.float64
    )
    zero = np.zeros_like(free)
    if param == "eps":
        return free, free.copy(), 0.0
    if param == "eps_x":
        return free, zero, 0.0
    if param == "eps_y":
        return zero, free, 0.0
    if param == "current":
        return zero, zero.copy(), 1.0
    raise ValueError(f"unknown parameter {param!r}; expected eps, eps_x, eps_y or current")


def set_parameter(p: ModelParams, c: CouplingConfig, param: str, value: float):
    if param == "eps":
        return p, c.with_eps(value, value)
    if param == "eps_x":
        return p, c.with_eps(eps_x=value)
    if param == "eps_y":
        return p, c.with_eps(eps_y=value)
    if param == "current":
        return p.replace(current=value), c
    raise ValueError(f"unknown parameter {param!r}; expected eps, eps_x, eps_y or current")


def get_parameter(p: ModelParams, c: CouplingConfig, param: str) -> float:
    if param in ("eps", "eps_x"):
        return c.eps_x
    if param == "eps_y":
        return c.eps_y
    if param == "current":
        return p.current
    raise ValueError(f"unknown parameter {param!r}")


# ---------------------------------------------------------------------------
# python-facing operations


def activation(x, half: float, slope: float):
    """Logistic activation ``1 / (1 + exp((half - x) / slope))``."""
    if slope == 0:
        raise ValueError("activation slope must be nonzero")
    xa = np.asarray(x, dtype=np.float64)
    if not (np.all(np.isfinite(xa)) and math.isfinite(half) and math.isfinite(slope)):
        raise ValueError("activation requires finite inputs")
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp((half - xa) / slope))
    return float(out) if out.ndim == 0 else out


def local_rhs(x: float, y: float, p: ModelParams) -> tuple[float, float]:
    """Uncoupled vector field ``(dx/dt, dy/dt)`` of one unit."""
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("local_rhs requires finite inputs")
    fx, fy = _local(float(x), float(y), p.as_array())
    return float(fx), float(fy)


def local_jacobian(x: float, y: float, p: ModelParams) -> np.ndarray:
    a, b, c, d = _local_jac(float(x), float(y), p.as_array())
    return np.array([[a, b], [c, d]])


def _check_state(s, c: CouplingConfig) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (2 * c.n_units,):
        raise ValueError(f"state has shape {s.shape}, expected ({2 * c.n_units},)")
    if not np.all(np.isfinite(s)):
        raise ValueError("state contains non-finite entries")
    return s


def network_rhs(s, p: ModelParams, c: CouplingConfig) -> np.ndarray:
    s = _check_state(s, c)
    out = np.empty_like(s)
    network_kernel(0.0, s, out, compile_system(p, c))
    return out


def network_jacobian(s, p: ModelParams, c: CouplingConfig) -> np.ndarray:
    s = _check_state(s, c)
    jac = np.empty((s.size, s.size))
    _jacobian_into(s, p.as_array(), *c.csr(), jac)
    return jac


def coupling_term(s, c: CouplingConfig) -> np.ndarray:
    """Coupling contribution ``(eps_x h_i(x), eps_y h_i(y))`` for every unit, flat layout."""
    s = _check_state(s, c)
    indptr, indices, wx, wy = c.csr()
    out = np.zeros_like(s)
    for i in range(c.n_units):
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            out[2 * i] += wx[e] * (s[2 * j] - s[2 * i])
            out[2 * i + 1] += wy[e] * (s[2 * j + 1] - s[2 * i + 1])
    return out
