"""Command-line front end: ``multistab <subcommand> [--config run.json] [flags]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import attractors, continuation, equilibria, geometry, lyapunov
from .integrate import IntegrationError, IntegrationSettings, simulate
from .model import CouplingConfig, ModelParams, get_parameter, set_parameter

log = logging.getLogger("multistab")

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
PARAMS = ("eps", "eps_x", "eps_y", "current")
NUMERICAL_ERRORS = (IntegrationError, continuation.OrbitError, equilibria.EquilibriumError,
                    geometry.GeometryError, np.linalg.LinAlgError, FloatingPointError)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: ModelParams = field(default_factory=ModelParams)
    coupling: CouplingConfig = field(default_factory=lambda: CouplingConfig.all_to_all(2, 0.15))
    integration: IntegrationSettings = field(default_factory=IntegrationSettings)
    census: attractors.CensusSettings = field(default_factory=attractors.CensusSettings)
    outputs: str = "out"

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "model": self.model.to_dict(),
            "coupling": self.coupling.to_dict(),
            "integration": self.integration.to_dict(),
            "census": self.census.to_dict(),
            "outputs": self.outputs,
        }

    @classmethod
    def from_dict(cls, data) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {"schema_version", "model", "coupling", "integration", "census", "outputs"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
        cfg = cls()
        parts = {}
        for key, loader in (("model", ModelParams.from_dict), ("coupling", CouplingConfig.from_dict),
                            ("integration", IntegrationSettings.from_dict),
                            ("census", attractors.CensusSettings.from_dict)):
            if key not in data:
                continue
            try:
                parts[key] = loader(data[key])
            except (TypeError, ValueError, KeyError) as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        outputs = data.get("outputs", cfg.outputs)
        if not isinstance(outputs, str) or not outputs:
            raise ConfigError("outputs must be a non-empty directory path")
        cfg = cls(**parts, outputs=outputs)
        box = cfg.census.box
        if box is not None and len(box) != 2 * cfg.coupling.n_units:
            raise ConfigError(f"census.box needs {2 * cfg.coupling.n_units} intervals, got {len(box)}")
        return cfg


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_dict(data)


def parse_grid(text: str) -> list[float]:
    """``a:b:step`` inclusive of ``b`` (to rounding), or a comma-separated list."""
    try:
        if ":" in text:
            a, b, step = (float(v) for v in text.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            n = int(np.floor((b - a) / step + 1e-9)) + 1
            return [round(a + k * step, 12) for k in range(n)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad grid {text!r}; expected a:b:step with step > 0 and b >= a") from None


def _parse_state(text: str, n_units: int) -> np.ndarray:
    try:
        s = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"bad state {text!r}") from None
    if s.size != 2 * n_units:
        raise ConfigError(f"state needs {2 * n_units} values, got {s.size}")
    return s


def write_manifest(out: Path, command: str, cfg: RunConfig, argv: list[str], extra: dict | None = None) -> None:
    manifest = {"tool": "multistab", "version": __version__, "command": command, "argv": argv,
                "config": cfg.to_dict()}
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out_dir(args, cfg: RunConfig, default_sub: str) -> Path:
    out = Path(args.out) if args.out else Path(cfg.outputs) / default_sub
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed_state(args, cfg: RunConfig) -> tuple[np.ndarray, dict]:
    """Initial state from ``--state``, ``--branch-seed`` or a seeded draw from the census box."""
    n = cfg.coupling.n_units
    if getattr(args, "state", None):
        return _parse_state(args.state, n), {"state": args.state}
    if getattr(args, "branch_seed", None):
        state, info = _load_branch_seed(args.branch_seed, getattr(args, "label", None))
        if state.size != 2 * n:
            raise ConfigError(f"branch seed has {state.size} values, config has {n} units")
        return state, info
    seed = args.seed if getattr(args, "seed", None) is not None else cfg.census.seed
    box = cfg.census.box or attractors.default_box(n)
    return attractors.sample_ics(box, 1, seed)[0], {"seed": seed}


def _load_branch_seed(path, label: str | None = None) -> tuple[np.ndarray, dict]:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read branch seed {path}: {exc}") from exc
    if isinstance(data, dict) and "attractors" in data:
        items = data["attractors"]
        if label is not None:
            items = [a for a in items if a.get("label") == label]
        if not items:
            raise ConfigError(f"no attractor{' labelled ' + label if label else ''} in {path}")
        data = items[0]
    for key in ("state", "anchor"):
        if isinstance(data, dict) and key in data:
            return np.asarray(data[key], dtype=float), {"branch_seed": str(path)}
    raise ConfigError(f"branch seed {path} has no 'state' or 'anchor'")


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, cfg: RunConfig, argv) -> int:
    out = _out_dir(args, cfg, "simulate")
    s0, info = _seed_state(args, cfg)
    traj = simulate(s0, cfg.model, cfg.coupling, cfg.integration)
    traj.to_csv(out / "trajectory.csv")
    write_manifest(out, "simulate", cfg, argv, {"initial_state": s0.tolist(), **info})
    return EXIT_OK


def _representatives(point: attractors.CensusPoint) -> dict:
    return {"eps": point.eps, "attractors": [
        {"group_id": r.group_id, "label": r.label, "class": r.dynamical_class, "basin_count": r.basin_count,
         "state": r.representative_state.tolist()} for r in point.records]}


def cmd_census(args, cfg: RunConfig, argv) -> int:
    out = _out_dir(args, cfg, "census")
    grid = parse_grid(args.eps_grid) if args.eps_grid else [get_parameter(cfg.model, cfg.coupling, args.param)]
    points = attractors.census(cfg.model, cfg.coupling, grid, cfg.census, cfg.integration, args.param,
                               args.workers)
    attractors.write_census(points, cfg.coupling.n_units, out)
    for pt in points:
        (out / f"representatives_eps_{pt.eps:.6f}.json").write_text(json.dumps(_representatives(pt), indent=1))
    write_manifest(out, "census", cfg, argv, {"grid": grid, "param": args.param})
    return EXIT_OK


def _default_range(param: str) -> tuple[float, float]:
    return (2.0, 6.0) if param == "current" else (0.0, 0.5)


def cmd_continue(args, cfg: RunConfig, argv) -> int:
    out = _out_dir(args, cfg, "continue")
    p, c = cfg.model, cfg.coupling
    if args.branch_seed:
        data = json.loads(Path(args.branch_seed).read_text())
        value = data.get("param_value", data.get("eps")) if isinstance(data, dict) else None
        if value is not None:
            p, c = set_parameter(p, c, args.param, float(value))
    s0, info = _seed_state(args, cfg)
    orbit = continuation.orbit_from_state(s0, p, c, param=args.param)
    lo, hi = (parse_grid(args.range)[0], parse_grid(args.range)[-1]) if args.range else _default_range(args.param)
    events = []
    for stop, name in ((lo, "down"), (hi, "up")):
        branch, ev = continuation.continue_orbit(orbit, args.param, stop, initial_step=args.initial_step,
                                                 branch_id=name)
        continuation.write_branch_csv(branch, out / f"branch_{name}.csv")
        events += ev
    continuation.write_events_csv(events, out / "events.csv")
    (out / "seed_orbit.json").write_text(json.dumps(continuation.orbit_to_dict(orbit), indent=1))
    write_manifest(out, "continue", cfg, argv, {"param": args.param, "range": [lo, hi], **info})
    return EXIT_OK


def cmd_lyapunov(args, cfg: RunConfig, argv) -> int:
    out = _out_dir(args, cfg, "lyapunov")
    s0, info = _seed_state(args, cfg)
    if not args.on_attractor:
        # land on the attractor first
        settle = IntegrationSettings(**{**cfg.integration.to_dict(), "t_transient": 0.0,
                                        "t_total": cfg.integration.t_transient or 1.0,
                                        "sample_dt": cfg.integration.t_transient or 1.0})
        s0 = simulate(s0, cfg.model, cfg.coupling, settle).states[-1]
    spec = lyapunov.spectrum(s0, args.k, cfg.model, cfg.coupling, cfg.integration,
                             t_average=args.t_average, renorm_interval=args.renorm)
    result = {"exponents": spec.exponents.tolist(), "half_window": spec.half_window.tolist(),
              "converged": spec.converged, "t_average": spec.t_average,
              "renorm_interval": spec.renorm_interval, "state": s0.tolist()}
    (out / "lyapunov.json").write_text(json.dumps(result, indent=1))
    write_manifest(out, "lyapunov", cfg, argv, info)
    return EXIT_OK


def cmd_manifolds(args, cfg: RunConfig, argv) -> int:
    out = _out_dir(args, cfg, "manifolds")
    ms = geometry.saddle_manifolds(cfg.model)
    geometry.write_manifolds_csv(ms, out / "manifolds.csv")
    names = [{"type": name, "x": float(pt[0]), "y": float(pt[1])}
             for name, pt in equilibria.uncoupled_names(cfg.model)]
    (out / "uncoupled_equilibria.json").write_text(json.dumps(names, indent=1))
    if args.trajectory:
        from .integrate import Trajectory

        traj = Trajectory.from_csv(args.trajectory)
        if traj.dim != 2 * cfg.coupling.n_units:
            raise ConfigError(f"trajectory has {traj.dim} columns, config has {cfg.coupling.n_units} units")
        unit = args.unit - 1
        if not 0 <= unit < cfg.coupling.n_units:
            raise ConfigError(f"--unit must be in 1..{cfg.coupling.n_units}")
        ev = geometry.reinjection_events(traj, ms, unit, cfg.coupling, cfg.model)
        geometry.write_events_csv(ev, out / f"reinjection_unit{args.unit}.csv")
        _write_field(geometry.coupling_field_along(traj, unit, cfg.model, cfg.coupling, args.stride),
                     out / f"coupling_field_unit{args.unit}.csv")
    write_manifest(out, "manifolds", cfg, argv)
    return EXIT_OK


def _write_field(samples, path) -> None:
    rows = [[s.time, *s.position, *s.coupling, *s.local] for s in samples]
    np.savetxt(path, np.array(rows).reshape(-1, 7), delimiter=",", header="t,x,y,hx,hy,fx,fy",
               comments="", fmt="%.12g")


def cmd_repro(args, cfg: RunConfig, argv) -> int:
    """Regenerate the reference data sets, one subdirectory per target, under ``<outputs>/repro``."""
    root = _out_dir(args, cfg, "repro")
    base = RunConfig(model=cfg.model, coupling=CouplingConfig.all_to_all(2, 0.0),
                     integration=cfg.integration, census=cfg.census, outputs=str(root))
    if args.n_ics is not None:
        base.census = attractors.CensusSettings(**{**cfg.census.to_dict(), "n_ics": args.n_ics})
    targets = args.targets or ["portrait", "attractors", "bifurcations", "trapping", "counts", "single-unit"]
    for t in targets:
        log.info("repro: %s", t)
        _REPRO[t](root / t, base, args.workers)
    write_manifest(root, "repro", cfg, argv, {"targets": targets})
    return EXIT_OK


def _repro_portrait(out: Path, cfg: RunConfig, workers) -> None:
    ns = argparse.Namespace(out=str(out), trajectory=None, unit=1, stride=1)
    cmd_manifolds(ns, cfg, [])


def _census_at(eps_list, cfg: RunConfig, workers):
    return attractors.census(cfg.model, cfg.coupling, eps_list, cfg.census, cfg.integration, "eps", workers)


def _repro_attractors(out: Path, cfg: RunConfig, workers) -> None:
    out.mkdir(parents=True, exist_ok=True)
    points = _census_at([0.05, 0.065, 0.1, 0.117485, 0.15, 0.25, 0.3, 0.45], cfg, workers)
    attractors.write_census(points, 2, out)
    show = IntegrationSettings(**{**cfg.integration.to_dict(), "t_transient": 0.0, "t_total": 20.0,
                                  "sample_dt": 0.01})
    for pt in points:
        (out / f"representatives_eps_{pt.eps:.6f}.json").write_text(json.dumps(_representatives(pt), indent=1))
        c = cfg.coupling.with_eps(pt.eps, pt.eps)
        for r in pt.records:
            simulate(r.representative_state, cfg.model, c, show).to_csv(
                out / f"trajectory_eps_{pt.eps:.6f}_g{r.group_id}.csv")


def _repro_bifurcations(out: Path, cfg: RunConfig, workers) -> None:
    out.mkdir(parents=True, exist_ok=True)
    p = cfg.model
    c = cfg.coupling.with_eps(0.15, 0.15)
    seeds = {}
    for label in ("LA-LA", "LA-SA"):
        state = continuation._probe_attractor(continuation._default_seeds(p, label), p, c, label)
        if state is None:
            log.warning("repro: no %s attractor found at eps=0.15", label)
            continue
        seeds[label] = state
    events = []
    for label, state in seeds.items():
        orbit = continuation.orbit_from_state(state, p, c)
        for stop, side in ((0.0, "down"), (0.5, "up")):
            tag = f"{label}-{side}"
            branch, ev = continuation.continue_orbit(orbit, "eps", stop, branch_id=tag)
            continuation.write_branch_csv(branch, out / f"branch_{tag}.csv")
            events += ev
    eqs = equilibria.enumerate_equilibria(p, c)
    focus = [e for e in eqs if e.class_label == "focus-focus"]
    if focus:
        _, ev = equilibria.continue_branch(focus[0], p, c, "eps", 0.6, branch_id="focus-focus")
        events += ev
    continuation.write_events_csv(events, out / "events.csv")


def _lala_orbit_at(eps: float, p: ModelParams, c0: CouplingConfig):
    """LA-LA orbit at ``eps``, followed from 0.15 in small steps so it stays in the basin."""
    c = c0.with_eps(0.15, 0.15)
    state = continuation._probe_attractor(continuation._default_seeds(p, "LA-LA"), p, c, "LA-LA")
    if state is None:
        return None
    path = np.arange(0.15, eps, -0.01 if eps < 0.15 else 0.01).tolist()[1:] + [eps]
    orbit = continuation.orbit_from_state(state, p, c)
    for e in path:
        orbit = continuation.orbit_from_state(orbit.anchor, p, c0.with_eps(e, e))
    return orbit


def _repro_trapping(out: Path, cfg: RunConfig, workers) -> None:
    out.mkdir(parents=True, exist_ok=True)
    p = cfg.model
    ms = geometry.saddle_manifolds(p)
    geometry.write_manifolds_csv(ms, out / "manifolds.csv")
    runs = [("LA-LA", 0.065), ("LA-LA", 0.15), ("LA-SA", 0.15)]
    for label, eps in runs:
        c = cfg.coupling.with_eps(eps, eps)
        if label == "LA-LA":
            orbit = _lala_orbit_at(eps, p, cfg.coupling)
        else:
            state = continuation._probe_attractor(continuation._default_seeds(p, label), p, c, label)
            orbit = None if state is None else continuation.orbit_from_state(state, p, c)
        if orbit is None:
            log.warning("repro: no %s attractor at eps=%g", label, eps)
            continue
        show = IntegrationSettings(abs_tol=1e-10, rel_tol=1e-10, t_transient=0.0,
                                   t_total=3 * orbit.period, sample_dt=min(0.01, orbit.period / 500))
        traj = simulate(orbit.anchor, p, c, show)
        tag = f"{label}_eps_{eps:g}"
        traj.to_csv(out / f"trajectory_{tag}.csv")
        for unit in range(2):
            ev = geometry.reinjection_events(traj, ms, unit, c, p)
            geometry.write_events_csv(ev, out / f"reinjection_{tag}_unit{unit + 1}.csv")
            _write_field(geometry.coupling_field_along(traj, unit, p, c, 5),
                         out / f"coupling_field_{tag}_unit{unit + 1}.csv")


def _repro_counts(out: Path, cfg: RunConfig, workers) -> None:
    out.mkdir(parents=True, exist_ok=True)
    settings = attractors.CensusSettings(**{**cfg.census.to_dict(), "classify": False})
    points = attractors.census(cfg.model, cfg.coupling, parse_grid("0.05:0.35:0.01"), settings,
                               cfg.integration, "eps", workers)
    attractors.write_census(points, 2, out)


def _repro_single_unit(out: Path, cfg: RunConfig, workers) -> None:
    out.mkdir(parents=True, exist_ok=True)
    continuation.write_events_csv(continuation.single_unit_scan(p=cfg.model), out / "events.csv")


_REPRO = {"portrait": _repro_portrait, "attractors": _repro_attractors, "bifurcations": _repro_bifurcations,
          "trapping": _repro_trapping, "counts": _repro_counts, "single-unit": _repro_single_unit}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multistab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"multistab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="run configuration (JSON)")
        sp.add_argument("--out", help="output directory (default: <outputs>/<command>)")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    sp = common(sub.add_parser("simulate", help="integrate one trajectory"))
    sp.add_argument("--seed", type=int, help="draw the initial state from the census box with this seed")
    sp.add_argument("--state", help="initial state x1,y1,x2,y2,...")
    sp.add_argument("--branch-seed", help="JSON file with a 'state' or 'anchor'")

    sp = common(sub.add_parser("census", help="count attractors over a parameter grid"))
    sp.add_argument("--eps-grid", help="a:b:step (inclusive) or comma list")
    sp.add_argument("--param", choices=PARAMS, default="eps")
    sp.add_argument("--workers", type=int, default=None)

    sp = common(sub.add_parser("continue", help="continue a periodic orbit in a parameter"))
    sp.add_argument("--param", choices=PARAMS, default="eps")
    sp.add_argument("--branch-seed", help="JSON with 'state'/'anchor' (census representatives files work too)")
    sp.add_argument("--label", help="pick this attractor label from a representatives file")
    sp.add_argument("--state", help="seed state x1,y1,...")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--range", help="a:b:step or a,b; branch is followed down to a and up to b")
    sp.add_argument("--initial-step", type=float, default=1e-3)

    sp = common(sub.add_parser("lyapunov", help="Lyapunov spectrum from a state"))
    sp.add_argument("--state")
    sp.add_argument("--branch-seed")
    sp.add_argument("--label")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--t-average", type=float, default=20000.0)
    sp.add_argument("--renorm", type=float, default=1.0)
    sp.add_argument("--on-attractor", action="store_true", help="skip the settling transient")

    sp = common(sub.add_parser("manifolds", help="saddle manifolds and reinjection diagnostics"))
    sp.add_argument("--trajectory", help="trajectory CSV to scan for manifold crossings")
    sp.add_argument("--unit", type=int, default=1, help="1-based unit for the crossing diagnostics")
    sp.add_argument("--stride", type=int, default=1)

    sp = common(sub.add_parser("repro", help="regenerate the reference data sets"))
    sp.add_argument("--targets", nargs="*", choices=sorted(_REPRO))
    sp.add_argument("--n-ics", type=int, default=None)
    sp.add_argument("--workers", type=int, default=None)
    return ap


_COMMANDS = {"simulate": cmd_simulate, "census": cmd_census, "continue": cmd_continue,
             "lyapunov": cmd_lyapunov, "manifolds": cmd_manifolds, "repro": cmd_repro}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](args, cfg, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
