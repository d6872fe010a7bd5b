"""Command-line front end.

Every subcommand reads a JSON run configuration (``--config``), writes its
artifacts under ``--out`` and prints a run report as JSON on stdout. Exit
codes: 0 success, 2 invalid input, 3 numerical failure; failures also emit a
JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .integrate import (
    IntegrationError,
    IntegratorSettings,
    flow,
    flow_batch,
    monodromy,
    symplectic_defect,
)
from .lagrange import (
    collinear_points,
    energy_thresholds,
    equilibrium_state,
    lagrange_points,
    linearize_collinear,
)
from .models import J4, Cr3bp, SingularityError, model_from_config, model_to_config
from .porbit import (
    REFERENCE_GUESSES,
    ConvergenceError,
    continue_family,
    orbit_amplitude,
    orbit_path,
    refine_fixed_point,
    zero_path,
    instantaneous_zero,
)
from .symmap import (
    J_LOCAL,
    SpectrumError,
    effective_hamiltonian,
    normal_form,
    symplectic_eigenbasis,
    verify_proposition_1,
)
from .transit import (
    OrbitClass,
    Outcome,
    RealmWindow,
    boundary_set,
    classify_local,
    iterate_array,
    phase_frame,
    transit_cap,
    verify_transit,
    verify_transit_batch,
)

COMMANDS = ("lagrange", "find-po", "continue", "monodromy", "transit-demo", "cap-map", "pipeline")

_ORBIT_KEYS = {"guess", "theta0", "tol", "max_iter"}
_TRANSIT_KEYS = {"h", "c", "side", "samples", "center_angle", "half_width", "max_periods", "phases", "trajectories"}
_KEYS = {
    "lagrange": set(),
    "find-po": _ORBIT_KEYS | {"path_samples", "zero_path"},
    "continue": _ORBIT_KEYS | {"eps_schedule", "parameter"},
    "monodromy": _ORBIT_KEYS,
    "transit-demo": _ORBIT_KEYS | _TRANSIT_KEYS,
    "cap-map": _ORBIT_KEYS | {"h", "c", "grid", "side", "max_periods"},
    "pipeline": _ORBIT_KEYS | _TRANSIT_KEYS | {"path_samples"},
}
_COMMON = {"command", "model", "rel_tol", "abs_tol"}

NUMERICAL_ERRORS = (
    ConvergenceError,
    SingularityError,
    IntegrationError,
    SpectrumError,
    ArithmeticError,
    np.linalg.LinAlgError,
)


class ConfigError(ValueError):
    pass


class StageError(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.exc = exc


# -- config handling ------------------------------------------------------


def load_config(path, command) -> dict:
    if path is None:
        cfg = {}
    else:
        try:
            cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(cfg) - _COMMON - _KEYS[command]
    if extra:
        raise ConfigError(f"unknown keys for {command}: {sorted(extra)}")
    if "command" in cfg and cfg["command"] != command:
        raise ConfigError(f"config is for {cfg['command']!r}, not {command!r}")
    for key in ("rel_tol", "abs_tol", "tol", "h", "c", "half_width", "max_periods"):
        if key in cfg and not (isinstance(cfg[key], (int, float)) and cfg[key] > 0):
            raise ConfigError(f"{key} must be a positive number")
    return cfg


def _settings(cfg, args) -> IntegratorSettings:
    rel = args.rel_tol if args.rel_tol is not None else cfg.get("rel_tol", 1e-12)
    abs_ = args.abs_tol if args.abs_tol is not None else cfg.get("abs_tol", 1e-12)
    if not (rel > 0 and abs_ > 0):
        raise ConfigError("tolerances must be positive")
    return IntegratorSettings(rel_tol=float(rel), abs_tol=float(abs_))


def _model(cfg, default="bcp"):
    rec = cfg.get("model", {"model": default})
    if isinstance(rec, str):
        rec = {"model": rec}
    try:
        return model_from_config(rec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model: {exc}") from exc


def _guess(cfg, model):
    if "guess" in cfg:
        g = np.asarray(cfg["guess"], dtype=float)
        if g.shape != (4,):
            raise ConfigError("guess must have four components")
        return g
    if model.name in REFERENCE_GUESSES:
        return np.asarray(REFERENCE_GUESSES[model.name], dtype=float)
    raise ConfigError("no default guess for this model; pass 'guess'")


def _dump(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if not isinstance(v, (int, str)) else v for v in row])


# -- stages ---------------------------------------------------------------


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except NUMERICAL_ERRORS as exc:
        raise StageError(name, exc) from exc


def _orbit(cfg, model, settings):
    if not model.periodic:
        raise ConfigError("this command needs a periodic model (bcp or er3bp)")
    return _stage(
        "find-po",
        refine_fixed_point,
        model,
        _guess(cfg, model),
        theta0=float(cfg.get("theta0", 0.0)),
        tol=float(cfg.get("tol", 1e-11)),
        max_iter=int(cfg.get("max_iter", 12)),
        cfg=settings,
    )


def _reduction(orbit, settings):
    mono = _stage("monodromy", monodromy, orbit, settings)
    nf = _stage("normal-form", normal_form, mono)
    basis = _stage("normal-form", symplectic_eigenbasis, mono, nf, orbit_ref=orbit)
    eh = effective_hamiltonian(nf, orbit.period)
    c = basis.c
    lam = nf.lambda_matrix
    residuals = {
        "fixed_point": orbit.residual,
        "monodromy_symplectic": symplectic_defect(mono),
        "basis_symplectic": float(np.abs(c.T @ J4 @ c - J_LOCAL).max()),
        "similarity": float(np.linalg.norm(np.linalg.solve(c, mono @ c) - lam) / np.linalg.norm(lam)),
        "effective_flow_residual": verify_proposition_1(eh, nf),
    }
    record = {**nf.to_dict(), **eh.to_dict(), "C": [float(v) for v in c.ravel()], "residuals": residuals}
    return mono, nf, basis, eh, record


def _transit_demo(cfg, model, orbit, basis, eh, settings, out: Path, n_jobs):
    h = float(cfg.get("h", 1e-6))
    c = float(cfg.get("c", 1e-4))
    n = int(cfg.get("samples", 40))
    sides = cfg.get("side", "both")
    sides = ["n1", "n2"] if sides == "both" else [sides]
    phases = cfg.get("phases", [cfg.get("theta0", 0.0)])
    window = RealmWindow.around_l1(model.mu, float(cfg.get("half_width", 0.15)))
    max_periods = float(cfg.get("max_periods", 6.0))
    write_traj = bool(cfg.get("trajectories", True))
    counts = {o.value: 0 for o in Outcome}
    mismatches = []
    per_case = []
    if write_traj:
        (out / "trajectories").mkdir(parents=True, exist_ok=True)
    boundary_rows = []
    for ip, theta in enumerate(phases):
        frame = _stage("transit-demo", phase_frame, basis, orbit, float(theta), settings)
        for side in sides:
            bs = boundary_set(eh, h, c, n, side, float(cfg.get("center_angle", 0.0)))
            pts, labels = bs.all_points()
            ics = frame.to_physical(pts)
            outs = _stage(
                "transit-demo", verify_transit_batch, model, ics, float(theta), window, settings, max_periods, n_jobs
            )
            bad = 0
            for k, (z, x, lab, res) in enumerate(zip(pts, ics, labels, outs)):
                counts[res.classification.value] += 1
                boundary_rows.append([float(theta), side, *z, *x, lab.value, res.classification.value])
                if res.classification.value != lab.value:
                    bad += 1
                    mismatches.append(
                        {
                            "theta": float(theta),
                            "side": side,
                            "index": k,
                            "local": [float(v) for v in z],
                            "linear": lab.value,
                            "nonlinear": res.classification.value,
                            "entry": res.entry_side,
                            "exit": res.exit_side,
                        }
                    )
                if write_traj:
                    full = verify_transit(model, x, float(theta), window, settings, max_periods)
                    if full.trajectory is not None:
                        full.trajectory.to_csv(out / "trajectories" / f"phase{ip}_{side}_{k:03d}_{lab.value}.csv")
            per_case.append({"theta": float(theta), "side": side, "samples": len(pts), "mismatches": bad})
    _write_rows(
        out / "boundary_points.csv",
        ["theta", "side", "q1", "p1", "q2", "p2", "x", "y", "px", "py", "linear", "nonlinear"],
        boundary_rows,
    )
    summary = {
        "h": h,
        "c": c,
        "n_transit": counts["transit"],
        "n_nontransit": counts["nontransit"],
        "n_bounded": counts["bounded"],
        "n_undecided": counts["undecided"],
        "mismatches": mismatches,
        "cases": per_case,
    }
    _dump(out / "transit_summary.json", summary)
    return summary


def _map_batch(model, states, t0, span, settings):
    """Flow a batch over ``span``; members that fail come back as NaN rows."""
    try:
        final, stopped = flow_batch(model, states, t0, t0 + span, settings)
        return final
    except (SingularityError, IntegrationError):
        if len(states) == 1:
            return np.full((1, 4), np.nan)
        return np.vstack([_map_batch(model, states[i : i + 1], t0, span, settings) for i in range(len(states))])


# -- commands -------------------------------------------------------------


def cmd_lagrange(cfg, args, out: Path):
    model = _model(cfg, "cr3bp")
    if not isinstance(model, Cr3bp):
        raise ConfigError("lagrange expects a cr3bp model")
    mu = model.mu
    try:
        pts = lagrange_points(mu)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    lin = {w: linearize_collinear(mu, w) for w in ("L1", "L2")}
    payload = {
        "mu": mu,
        "points": pts.to_dict(),
        "thresholds": energy_thresholds(mu).to_dict(),
        "linearization": {w: {"lambda": v.lam, "nu": v.nu} for w, v in lin.items()},
    }
    _dump(out / "lagrange.json", payload)
    return payload


def cmd_find_po(cfg, args, out: Path):
    settings = _settings(cfg, args)
    model = _model(cfg)
    orbit = _orbit(cfg, model, settings)
    _dump(out / "orbit.json", orbit.to_dict())
    outputs = {"orbit": str(out / "orbit.json"), "residual": orbit.residual}
    n = int(cfg.get("path_samples", 400))
    path = _stage("find-po", orbit_path, orbit, n, settings)
    path.to_csv(out / "path.csv")
    outputs["path"] = str(out / "path.csv")
    if cfg.get("zero_path", False):
        l1 = equilibrium_state(collinear_points(model.mu).l1)
        z0 = _stage("find-po", instantaneous_zero, model, orbit.t0, l1)
        zp = _stage("find-po", zero_path, model, z0, n, orbit.t0)
        zp.to_csv(out / "zero_path.csv")
        # the flow from the frozen-time zero drifts away from the zero path
        grid = orbit.t0 + orbit.period * np.arange(1, n - 1) / (n - 1)
        drift = _stage("find-po", flow, model, z0, orbit.t0, orbit.t0 + orbit.period, settings, grid)
        drift.to_csv(out / "zero_flow.csv")
        outputs["zero_path"] = str(out / "zero_path.csv")
    return outputs


def cmd_continue(cfg, args, out: Path):
    settings = _settings(cfg, args)
    model = _model(cfg, "er3bp")
    sched = cfg.get("eps_schedule", {"start": 0.0, "stop": 1.0, "step": 0.05})
    if isinstance(sched, dict):
        try:
            n = int(round((sched["stop"] - sched["start"]) / sched["step"]))
            eps = [sched["start"] + k * sched["step"] for k in range(n + 1)]
        except (KeyError, TypeError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad eps_schedule: {exc}") from exc
    else:
        eps = [float(v) for v in sched]
    base = model_to_config(model)
    param = cfg.get("parameter", "e" if model.name == "er3bp" else "mu0")
    if param not in base or param == "model":
        raise ConfigError(f"model has no parameter {param!r}")
    full = base[param]

    def factory(e):
        rec = dict(base)
        rec[param] = full * e
        return model_from_config(rec)

    guess = cfg.get("guess")
    if guess is None:
        guess = equilibrium_state(collinear_points(model.mu).l1)
    fam = continue_family(
        factory, guess, eps, tol=float(cfg.get("tol", 1e-11)), parameter_name=f"eps_{param}",
        theta0=float(cfg.get("theta0", 0.0)), cfg=settings,
    )
    l1 = collinear_points(model.mu).l1
    lines = []
    for e, orbit in fam.samples:
        rec = {f"eps_{param}": e, **orbit.to_dict(), "amplitude": orbit_amplitude(orbit, (l1, 0.0))}
        lines.append(json.dumps(rec, sort_keys=True))
    (out / "family.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
    outputs = {"family": str(out / "family.jsonl"), "members": len(fam.samples), "failure": fam.failure}
    if fam.failure is not None:
        raise StageError("continue", ConvergenceError(json.dumps(fam.failure)))
    return outputs


def cmd_monodromy(cfg, args, out: Path):
    settings = _settings(cfg, args)
    model = _model(cfg)
    orbit = _orbit(cfg, model, settings)
    _, _, _, _, record = _reduction(orbit, settings)
    _dump(out / "orbit.json", orbit.to_dict())
    _dump(out / "normal_form.json", record)
    return {"normal_form": str(out / "normal_form.json"), "sigma": record["sigma"], "psi": record["psi"]}


def cmd_transit_demo(cfg, args, out: Path):
    settings = _settings(cfg, args)
    model = _model(cfg)
    orbit = _orbit(cfg, model, settings)
    _, _, basis, eh, _ = _reduction(orbit, settings)
    summary = _transit_demo(cfg, model, orbit, basis, eh, settings, out, args.threads)
    return {"summary": str(out / "transit_summary.json"), "mismatches": len(summary["mismatches"])}


def cmd_cap_map(cfg, args, out: Path):
    settings = _settings(cfg, args)
    model = _model(cfg)
    orbit = _orbit(cfg, model, settings)
    _, nf, basis, eh, _ = _reduction(orbit, settings)
    h = float(cfg.get("h", 1e-6))
    c = float(cfg.get("c", 1e-4))
    grid = tuple(int(v) for v in cfg.get("grid", (20, 16)))
    cap = transit_cap(basis, orbit, eh, h, c, grid, cfg.get("side", "n1"))
    rows = []
    stats = {}
    for k in (-1, 0, 1):
        local = iterate_array(cap.local, nf, k)
        phys = cap.physical if k == 0 else _map_batch(model, cap.physical, orbit.t0, k * orbit.period, settings)
        transit = sum(classify_local(z) is OrbitClass.TRANSIT for z in local)
        drift = float(np.abs(eh.energy(local) - h).max() / h)
        stats[str(k)] = {"linear_transit_fraction": transit / len(local), "relative_energy_drift": drift}
        rows += [[*z, *x, k] for z, x in zip(local, phys)]
    _write_rows(out / "cap_map.csv", ["q1", "p1", "q2", "p2", "x", "y", "px", "py", "iteration"], rows)
    _dump(out / "cap_map_summary.json", {"grid": list(grid), "h": h, "c": c, "iterations": stats})
    return {"cap_map": str(out / "cap_map.csv"), "iterations": stats}


def cmd_pipeline(cfg, args, out: Path):
    settings = _settings(cfg, args)
    model = _model(cfg)
    orbit = _orbit(cfg, model, settings)
    _dump(out / "orbit.json", orbit.to_dict())
    _, nf, basis, eh, record = _reduction(orbit, settings)
    _dump(out / "normal_form.json", record)
    path = _stage("find-po", orbit_path, orbit, int(cfg.get("path_samples", 400)), settings)
    path.to_csv(out / "path.csv")
    summary = _transit_demo(cfg, model, orbit, basis, eh, settings, out, args.threads)
    return {
        "orbit": str(out / "orbit.json"),
        "normal_form": str(out / "normal_form.json"),
        "summary": str(out / "transit_summary.json"),
        "sigma": record["sigma"],
        "psi": record["psi"],
        "mismatches": len(summary["mismatches"]),
    }


_HANDLERS = {
    "lagrange": cmd_lagrange,
    "find-po": cmd_find_po,
    "continue": cmd_continue,
    "monodromy": cmd_monodromy,
    "transit-demo": cmd_transit_demo,
    "cap-map": cmd_cap_map,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lagtransit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--rel-tol", type=float, dest="rel_tol")
        p.add_argument("--abs-tol", type=float, dest="abs_tol")
        p.add_argument("--threads", type=int, default=1, help="worker processes for ensembles")
    return parser


def _fail(code, kind, message, stage=None):
    rec = {"error": kind, "message": message}
    if stage:
        rec["stage"] = stage
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    start = time.perf_counter()
    out = Path(args.out)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            cfg = load_config(args.config, args.command)
            out.mkdir(parents=True, exist_ok=True)
            outputs = _HANDLERS[args.command](cfg, args, out)
        except StageError as exc:
            return _fail(3, type(exc.exc).__name__, str(exc.exc), exc.stage)
        except NUMERICAL_ERRORS as exc:
            return _fail(3, type(exc).__name__, str(exc))
        except (ConfigError, ValueError, TypeError, KeyError) as exc:
            return _fail(2, type(exc).__name__, str(exc))
    report = {
        "command": args.command,
        "inputs": cfg,
        "outputs": outputs,
        "wall_time": round(time.perf_counter() - start, 3),
        "warnings": [str(w.message) for w in caught],
    }
    print(json.dumps(report, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
