"""Attractor discovery: random initial conditions, features, grouping, ε sweeps."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.stats import spearmanr

from . import lyapunov
from .integrate import IntegrationError, IntegrationSettings, Integrator, Trajectory
from .model import CouplingConfig, ModelParams, compile_system, network_jacobian, network_kernel, network_rhs, set_parameter

log = logging.getLogger(__name__)

SPIKE_THRESHOLD = -40.0
AMPLITUDE_FLOOR = lyapunov.AMPLITUDE_FLOOR
LARGE_AMPLITUDE = 20.0
GROUP_THRESHOLD = 0.05
DEFAULT_X_BOX = (-90.0, 20.0)
DEFAULT_Y_BOX = (0.0, 1.0)
MIN_SAMPLES = 100
# below this residual a trajectory is taken to sit on an equilibrium
REST_RESIDUAL = 1e-9
CHUNK = 500.0


def default_box(n_units: int) -> list[tuple[float, float]]:
    return [DEFAULT_X_BOX, DEFAULT_Y_BOX] * n_units


def sample_ics(box, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. uniform states from the per-variable intervals ``box``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("box must be a list of (low, high) intervals with low < high")
    rng = np.random.default_rng(seed)
    return box[:, 0] + rng.random((n, box.shape[0])) * (box[:, 1] - box[:, 0])


@dataclass
class FeatureVector:
    mean_pairwise_distance: float
    per_unit_amplitude: np.ndarray
    per_unit_frequency: np.ndarray
    per_unit_mean: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.mean_pairwise_distance], self.per_unit_amplitude,
                               self.per_unit_frequency, self.per_unit_mean])

    @classmethod
    def from_array(cls, v, n_units: int) -> "FeatureVector":
        v = np.asarray(v, dtype=float)
        return cls(float(v[0]), v[1:1 + n_units].copy(), v[1 + n_units:1 + 2 * n_units].copy(),
                   v[1 + 2 * n_units:].copy())

    @property
    def label(self) -> str:
        """Per-unit SS / SA / LA tags joined by ``-``."""
        return amplitude_label(self.per_unit_amplitude)


def amplitude_label(amps) -> str:
    tags = []
    for a in amps:
        tags.append("SS" if a < AMPLITUDE_FLOOR else ("SA" if a < LARGE_AMPLITUDE else "LA"))
    return "-".join(tags)


class FeatureAccumulator:
    """Running features of a sampled trajectory, fed chunk by chunk.

    Feeding a trajectory in any chunking gives the same result as
    :func:`featurize` on the whole.
    """

    def __init__(self, n_units: int, spike_threshold: float = SPIKE_THRESHOLD):
        self.n_units = n_units
        self.threshold = spike_threshold
        self.count = 0
        self.t_first = math.nan
        self.t_last = math.nan
        self.x_min = np.full(n_units, np.inf)
        self.x_max = np.full(n_units, -np.inf)
        self.sums = np.zeros(2 * n_units)
        self.dist_sum = 0.0
        self.crossings = np.zeros(n_units, dtype=np.int64)
        self._last_x = None
        iu = np.triu_indices(n_units, 1)
        self._pairs = iu

    def _pairwise(self, states: np.ndarray) -> np.ndarray:
        i, j = self._pairs
        if i.size == 0:
            return np.zeros(states.shape[0])
        xs = states[:, 0::2]
        ys = states[:, 1::2]
        d = np.hypot(xs[:, i] - xs[:, j], ys[:, i] - ys[:, j])
        return d.mean(axis=1)

    def update(self, times: np.ndarray, states: np.ndarray) -> None:
        if times.size == 0:
            return
        if self.count == 0:
            self.t_first = float(times[0])
        self.t_last = float(times[-1])
        xs = states[:, 0::2]
        self.x_min = np.minimum(self.x_min, xs.min(axis=0))
        self.x_max = np.maximum(self.x_max, xs.max(axis=0))
        self.sums += states.sum(axis=0)
        self.dist_sum += float(self._pairwise(states).sum())
        th = self.threshold
        prev = xs[:-1] if self._last_x is None else np.vstack([self._last_x, xs[:-1]])
        cur = xs if self._last_x is not None else xs[1:]
        self.crossings += np.sum((prev < th) & (cur >= th), axis=0)
        self._last_x = xs[-1].copy()
        self.count += times.size

    def update_constant(self, state: np.ndarray, n: int, t_last: float) -> None:
        """Append ``n`` samples that all equal ``state`` (a resting trajectory)."""
        if n <= 0:
            return
        if self.count == 0:
            self.t_first = float(t_last) if n == 1 else math.nan
        self.update(np.array([t_last]), state[None, :])
        if n > 1:
            self.count += n - 1
            self.sums += (n - 1) * state
            self.dist_sum += (n - 1) * float(self._pairwise(state[None, :])[0])

    def finalize(self) -> FeatureVector:
        if self.count < MIN_SAMPLES:
            raise ValueError(f"trajectory too short for features ({self.count} < {MIN_SAMPLES} samples)")
        window = self.t_last - self.t_first
        freq = self.crossings / window if window > 0 else np.zeros(self.n_units)
        return FeatureVector(self.dist_sum / self.count, self.x_max - self.x_min, freq.astype(float),
                             self.sums / self.count)


def featurize(traj: Trajectory, spike_threshold: float = SPIKE_THRESHOLD) -> FeatureVector:
    """Amplitudes, spike rates, time-averaged positions and unit spread of a trajectory."""
    acc = FeatureAccumulator(traj.dim // 2, spike_threshold)
    acc.update(traj.times, traj.states)
    return acc.finalize()


def _normalized(matrix: np.ndarray) -> np.ndarray:
    lo = matrix.min(axis=0)
    span = matrix.max(axis=0) - lo
    floor = 1e-6 + 1e-3 * np.abs(matrix).max(axis=0)
    return (matrix - lo) / np.maximum(span, floor)


def group(features, threshold: float = GROUP_THRESHOLD) -> np.ndarray:
    """Single-linkage grouping in min-max normalized feature space.

    Two entries share a group when they are joined by a chain of neighbours
    at Euclidean distance <= ``threshold``. Group ids are ordered by the
    lexicographically smallest member, so they do not depend on input order.
    """
    mat = np.array([f.as_array() if isinstance(f, FeatureVector) else np.asarray(f, float) for f in features])
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise ValueError("need at least one feature vector")
    z = _normalized(mat)
    pairs = cKDTree(z).query_pairs(threshold, output_type="ndarray")
    m = mat.shape[0]
    adj = csr_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(m, m)) if len(pairs) else csr_matrix((m, m))
    _, raw = connected_components(adj, directed=False)
    # canonical ids: rank groups by their lexicographically smallest raw feature row
    keys = {}
    order = np.lexsort(mat.T[::-1])
    for idx in order:
        keys.setdefault(raw[idx], len(keys))
    return np.array([keys[r] for r in raw], dtype=np.int64)


# ---------------------------------------------------------------------------
# per-IC runs


@dataclass
class ICOutcome:
    features: FeatureVector | None
    final_state: np.ndarray | None
    error: str = ""


def _is_stable_rest(y, p, c) -> bool:
    if np.max(np.abs(network_rhs(y, p, c))) > REST_RESIDUAL:
        return False
    return bool(np.all(np.linalg.eigvals(network_jacobian(y, p, c)).real < 0))


def run_ic(s0, p: ModelParams, c: CouplingConfig, cfg: IntegrationSettings,
           spike_threshold: float = SPIKE_THRESHOLD) -> ICOutcome:
    """Integrate one initial condition and reduce it to features.

    Once the state rests on a stable equilibrium the remaining samples are
    appended as constants instead of being integrated.
    """
    try:
        it = Integrator(network_kernel, s0, args=compile_system(p, c), abs_tol=cfg.abs_tol,
                        rel_tol=cfg.rel_tol, max_steps=cfg.max_steps)
        it.start_sampling(cfg.t_transient, cfg.sample_dt)
        acc = FeatureAccumulator(c.n_units, spike_threshold)
        n_total = cfg.n_samples
        t = 0.0
        while t < cfg.t_total:
            t = min(t + CHUNK, cfg.t_total)
            times, states = it.advance(t, clip=(t == cfg.t_total))
            acc.update(times, states)
            if t < cfg.t_total and _is_stable_rest(it.y, p, c):
                remaining = n_total - acc.count
                t_last = cfg.t_transient + (n_total - 1) * cfg.sample_dt
                acc.update_constant(it.y.copy(), remaining, t_last)
                if acc.count and math.isnan(acc.t_first):
                    acc.t_first = cfg.t_transient
                break
        return ICOutcome(acc.finalize(), it.y.copy())
    except (IntegrationError, ValueError, FloatingPointError) as exc:
        return ICOutcome(None, None, f"{type(exc).__name__}: {exc}")


def _run_batch(payload):
    states, p, c, cfg, spike_threshold = payload
    return [run_ic(s, p, c, cfg, spike_threshold) for s in states]


def resolve_workers(workers: int | None) -> int:
    env = os.environ.get("MULTISTAB_WORKERS")
    if env:
        return max(1, int(env))
    if workers is None:
        return os.cpu_count() or 1
    return max(1, int(workers))


def run_ics(ics, p, c, cfg, workers: int | None = 1, spike_threshold: float = SPIKE_THRESHOLD) -> list[ICOutcome]:
    """Run many initial conditions; the result order follows ``ics`` for any worker count."""
    workers = resolve_workers(workers)
    ics = np.asarray(ics, dtype=float)
    if workers == 1 or len(ics) < 2:
        return _run_batch((ics, p, c, cfg, spike_threshold))
    batches = np.array_split(ics, min(len(ics), workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(_run_batch, [(b, p, c, cfg, spike_threshold) for b in batches])
        return [o for part in parts for o in part]


# ---------------------------------------------------------------------------
# census


@dataclass
class AttractorRecord:
    group_id: int
    features: FeatureVector
    representative_state: np.ndarray
    basin_count: int
    dynamical_class: str = "unclassified"
    lyapunov: lyapunov.LyapunovSpectrum | None = None

    @property
    def label(self) -> str:
        return self.features.label


@dataclass
class CensusSettings:
    n_ics: int = 1000
    seed: int = 0
    box: list | None = None
    threshold: float = GROUP_THRESHOLD
    spike_threshold: float = SPIKE_THRESHOLD
    classify: bool = True
    lyap_k: int | None = 3
    lyap_t_average: float = 20000.0

    def __post_init__(self) -> None:
        if self.n_ics < 1:
            raise ValueError("census.n_ics must be >= 1")
        if not self.threshold > 0:
            raise ValueError("census.threshold must be > 0")

    def to_dict(self) -> dict:
        return {"n_ics": self.n_ics, "seed": self.seed, "box": self.box, "threshold": self.threshold,
                "spike_threshold": self.spike_threshold, "classify": self.classify,
                "lyap_k": self.lyap_k, "lyap_t_average": self.lyap_t_average}

    @classmethod
    def from_dict(cls, data) -> "CensusSettings":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown census keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class CensusPoint:
    eps: float
    records: list[AttractorRecord]
    labels: np.ndarray  # group id per IC, -1 for diverged
    n_diverged: int = 0
    errors: list[str] = field(default_factory=list)

    @property
    def n_attractors(self) -> int:
        return len(self.records)


def attractors_from_outcomes(outcomes: list[ICOutcome], p, c, cfg, settings: CensusSettings) -> tuple[list[AttractorRecord], np.ndarray]:
    ok = [i for i, o in enumerate(outcomes) if o.features is not None]
    labels = np.full(len(outcomes), -1, dtype=np.int64)
    if not ok:
        return [], labels
    feats = [outcomes[i].features for i in ok]
    ids = group(feats, settings.threshold)
    labels[ok] = ids
    records = []
    for g in range(int(ids.max()) + 1):
        members = [ok[k] for k in np.nonzero(ids == g)[0]]
        centroid = np.mean([outcomes[i].features.as_array() for i in members], axis=0)
        fv = FeatureVector.from_array(centroid, c.n_units)
        rec = AttractorRecord(g, fv, outcomes[members[0]].final_state.copy(), len(members))
        if settings.classify:
            classify_record(rec, p, c, cfg, settings)
        records.append(rec)
    return records, labels


def classify_record(rec: AttractorRecord, p, c, cfg, settings: CensusSettings) -> None:
    if np.all(rec.features.per_unit_amplitude < AMPLITUDE_FLOOR):
        rec.dynamical_class = "equilibrium"
        return
    k = None if settings.lyap_k is None else min(settings.lyap_k, 2 * c.n_units)
    try:
        spec = lyapunov.spectrum(rec.representative_state, k, p, c, cfg, t_average=settings.lyap_t_average)
    except IntegrationError as exc:
        log.warning("Lyapunov spectrum failed for group %d: %s", rec.group_id, exc)
        rec.dynamical_class = "unclassified"
        return
    rec.lyapunov = spec
    rec.dynamical_class = lyapunov.classify(spec, rec.features)


def census(p: ModelParams, c: CouplingConfig, eps_grid, settings: CensusSettings | None = None,
           cfg: IntegrationSettings | None = None, param: str = "eps",
           workers: int | None = 1) -> list[CensusPoint]:
    """Count coexisting attractors at each coupling value of ``eps_grid``.

    The same initial conditions are used at every grid value.
    """
    settings = settings or CensusSettings()
    cfg = cfg or IntegrationSettings()
    eps_grid = list(eps_grid)
    if not eps_grid:
        raise ValueError("eps grid is empty")
    box = settings.box or default_box(c.n_units)
    ics = sample_ics(box, settings.n_ics, settings.seed)
    out = []
    for eps in eps_grid:
        p_e, c_e = set_parameter(p, c, param, float(eps))
        outcomes = run_ics(ics, p_e, c_e, cfg, workers, settings.spike_threshold)
        errors = [o.error for o in outcomes if o.features is None]
        if errors:
            log.warning("eps=%g: %d initial conditions diverged and were excluded", eps, len(errors))
        records, labels = attractors_from_outcomes(outcomes, p_e, c_e, cfg, settings)
        out.append(CensusPoint(float(eps), records, labels, len(errors), errors))
    return out


def write_census(points: list[CensusPoint], n_units: int, out_dir) -> None:
    """One CSV per grid value plus ``summary.csv`` with ``eps,n_attractors``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "n_attractors", "n_diverged"])
        for pt in points:
            w.writerow([repr(pt.eps), pt.n_attractors, pt.n_diverged])
    for pt in points:
        k_max = max((r.lyapunov.k for r in pt.records if r.lyapunov is not None), default=0)
        header = (["group_id", "basin_count", "class", "label", "mean_pairwise_distance"]
                  + [f"amp_{i + 1}" for i in range(n_units)] + [f"freq_{i + 1}" for i in range(n_units)]
                  + [f"mean_{v}{i + 1}" for i in range(n_units) for v in "xy"]
                  + [f"lyap_{i + 1}" for i in range(k_max)] + (["converged"] if k_max else []))
        with open(out_dir / f"attractors_eps_{pt.eps:.6f}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in pt.records:
                f = r.features
                row = [r.group_id, r.basin_count, r.dynamical_class, r.label, f"{f.mean_pairwise_distance:.10g}"]
                row += [f"{v:.10g}" for v in f.per_unit_amplitude] + [f"{v:.10g}" for v in f.per_unit_frequency]
                row += [f"{v:.10g}" for v in f.per_unit_mean]
                if k_max:
                    ex = r.lyapunov.exponents if r.lyapunov is not None else []
                    row += [f"{v:.10g}" for v in ex] + [""] * (k_max - len(ex))
                    row.append("" if r.lyapunov is None else str(r.lyapunov.converged).lower())
                w.writerow(row)


# ---------------------------------------------------------------------------
# degree vs amplitude


@dataclass
class DegreeAmplitudeReport:
    rows: list[tuple[int, int, float]]  # (unit index, degree, amplitude)
    rank_correlation: float


def degree_amplitude_report(records, c: CouplingConfig) -> DegreeAmplitudeReport:
    """Degree of the oscillating unit against its amplitude, over solitary attractors.

    A solitary attractor has exactly one unit at large amplitude while every
    other unit stays below the large-amplitude threshold. The Spearman rank
    correlation is NaN for fewer than two rows or constant columns.
    """
    deg = c.degrees
    rows = []
    for r in records:
        amps = r.features.per_unit_amplitude
        big = np.nonzero(amps >= LARGE_AMPLITUDE)[0]
        if big.size == 1:
            i = int(big[0])
            rows.append((i, int(deg[i]), float(amps[i])))
    rho = math.nan
    if len(rows) >= 2:
        d = [r[1] for r in rows]
        a = [r[2] for r in rows]
        if len(set(d)) > 1 and len(set(a)) > 1:
            rho = float(spearmanr(d, a).statistic)
    return DegreeAmplitudeReport(rows, rho)
