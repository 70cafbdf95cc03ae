"""Configuration-driven command line front end.

Commands run pipeline stages with dependency resolution and write
machine-readable CSV/JSON artifacts named ``<command>_<confighash>.*``.
Exit status: 0 all checks pass, 2 a verification verdict failed, 1 execution
or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, WeakKamError
from .model import model_from_config, verify_hypotheses
from .dynamics import aubry_orbits
from .orbit_hessian import fd_crosscheck, lambda_averages, unstable_hessian_curve
from .variational import (GridSpec, anchored_barrier, aubry_verify, barrier_matrix,
                          build_kernels, critical_value, min_cycle_residual)
from .viscous import regularity_report, residual_check, solve_cell
from .vv_analysis import (example_verify, orbit_window, rescale_check, slope_fit,
                          sweep)
from .stochastic import (DriftField, StaticCenter, exit_time_scaling, lax_residual)

COMMANDS = ("orbits", "critical", "barrier", "viscous", "sweep", "rescale",
            "example", "stochastic", "all")

DEFAULT_NUMERICS = {
    "vmax": 4.0,
    "cell_tol": 1e-6,
    "barrier_tol": 1e-7,
    "shoot_tol": 1e-10,
    "slope_tol": 0.15,
    "grid_tol": 0.02,
    "aubry_tol": 0.02,
    "lip_cap": 4.0,
    "max_sweeps": 400,
    "max_periods": 600,
}


def _require(cond, message, field):
    if not cond:
        raise ConfigError(message, field=field)


def validate_config(cfg: dict) -> dict:
    """Schema checks; raises ConfigError naming the offending field path."""
    _require(isinstance(cfg, dict), "config must be a JSON object", "")
    _require("model" in cfg, "missing model block", "model")
    _require("grid" in cfg, "missing grid block", "grid")
    grid = cfg["grid"]
    _require(isinstance(grid, dict) and "nx" in grid and "nt" in grid,
             "grid block must carry nx and nt", "grid")
    _require(int(grid["nx"]) >= 2 and int(grid["nt"]) >= 1,
             "grid sizes must be positive", "grid.nx")
    numerics = {**DEFAULT_NUMERICS, **cfg.get("numerics", {})}
    for key in ("vmax", "cell_tol", "barrier_tol", "shoot_tol", "slope_tol",
                "grid_tol", "aubry_tol", "lip_cap"):
        _require(float(numerics[key]) > 0, f"numerics.{key} must be positive",
                 f"numerics.{key}")
    sweep_block = cfg.get("sweep", {})
    eps_list = sweep_block.get("eps_list", [])
    if eps_list:
        _require(all(float(e) > 0 for e in eps_list),
                 "sweep.eps_list entries must be positive", "sweep.eps_list")
        _require(all(b < a for a, b in zip(eps_list, eps_list[1:])),
                 "sweep.eps_list must be strictly decreasing", "sweep.eps_list")
    stoch = cfg.get("stochastic", {})
    if stoch:
        for key in ("n_paths", "dt", "delta", "kappa"):
            _require(key in stoch, f"stochastic.{key} missing", f"stochastic.{key}")
        _require(float(stoch["dt"]) > 0, "stochastic.dt must be positive",
                 "stochastic.dt")
        s_eps = stoch.get("eps_list", eps_list)
        _require(all(b < a for a, b in zip(s_eps, s_eps[1:])),
                 "stochastic.eps_list must be strictly decreasing",
                 "stochastic.eps_list")
    cfg = dict(cfg)
    cfg["numerics"] = numerics
    return cfg


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", field="")
    return validate_config(raw)


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(canonical).hexdigest()[:12]


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_json_ready(v) for v in obj.tolist()]
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def emit_reports(results: dict, command: str, cfg: dict, out_dir: str,
                 wall_times: dict, csv_tables: dict | None = None) -> list[str]:
    """Write <command>_<hash>.json (+ .csv tables); returns the file list."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = f"{command}_{config_hash(cfg)}"
    formats = cfg.get("output", {}).get("formats", ["json", "csv"])
    written = []
    if "json" in formats:
        payload = {
            "command": command,
            "version": f"weakkam {__version__}",
            "config": cfg,
            "results": _json_ready(results),
            "wall_times": wall_times,
        }
        path = out / f"{tag}.json"
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
        written.append(str(path))
    if "csv" in formats and csv_tables:
        for name, (header, rows) in csv_tables.items():
            path = out / f"{tag}_{name}.csv"
            with open(path, "w") as fh:
                fh.write(",".join(header) + "\n")
                for row in rows:
                    fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                      for v in row) + "\n")
            written.append(str(path))
    return written


class _Pipeline:
    """Stage runner with memoized intermediate artifacts."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.numerics = cfg["numerics"]
        self.model = model_from_config(cfg["model"])
        self.grid = GridSpec(int(cfg["grid"]["nx"]), int(cfg["grid"]["nt"]))
        self._orbits = None
        self._kernels = None
        self._c0 = None
        self._fields = None
        self.wall = {}

    def _timed(self, key, fn):
        t0 = time.perf_counter()
        out = fn()
        self.wall[key] = round(time.perf_counter() - t0, 3)
        return out

    @property
    def orbits(self):
        if self._orbits is None:
            extra = self.cfg.get("numerics", {}).get("seeds")
            self._orbits = self._timed("orbits", lambda: aubry_orbits(
                self.model, shoot_tol=self.numerics["shoot_tol"],
                extra_seeds=extra))
        return self._orbits

    @property
    def kernels(self):
        if self._kernels is None:
            self._kernels = self._timed("kernels", lambda: build_kernels(
                self.model, self.grid, vmax=self.numerics["vmax"]))
        return self._kernels

    @property
    def c0(self):
        if self._c0 is None:
            self._c0 = self._timed("critical", lambda: critical_value(self.kernels))
        return self._c0

    @property
    def fields(self):
        if self._fields is None:
            window = orbit_window(self.orbits)
            def build():
                return [anchored_barrier(
                    self.kernels, self.c0.c, o.anchor.x, window=window,
                    barrier_tol=self.numerics["barrier_tol"],
                    max_sweeps=int(self.numerics["max_sweeps"]), orbit_ref=i)
                    for i, o in enumerate(self.orbits)]
            self._fields = self._timed("barriers", build)
        return self._fields

    # ---- stages -----------------------------------------------------------
    def stage_orbits(self):
        hyp = verify_hypotheses(self.model)
        rows = []
        for i, o in enumerate(self.orbits):
            rows.append({
                "index": i,
                "anchor_x": o.anchor.x,
                "anchor_p": o.anchor.p,
                "period": o.period,
                "winding": o.winding,
                "floquet_exponents": [[e.real, e.imag] for e in o.floquet_exponents],
                "hyperbolic": o.hyperbolic,
                "residual": o.residual,
            })
        results = {"orbits": rows, "hypotheses": {
            "min_h_pp": hyp.min_h_pp, "growth_min": hyp.growth_min,
            "ok": hyp.ok}}
        return results, {}, hyp.ok

    def stage_critical(self):
        cv = self.c0
        residual = min_cycle_residual(self.kernels, cv.c)
        results = {"c": cv.c, "c_karp": cv.c_karp, "c_power": cv.c_power,
                   "agreement": cv.agreement, "exact_regime": cv.exact_regime,
                   "shifted_min_cycle_mean": residual}
        ok = cv.agreement <= 1e-6 and residual >= -1e-6
        return results, {}, ok

    def stage_barrier(self):
        fields = self.fields
        residuals = aubry_verify(fields, self.orbits,
                                 aubry_tol=self.numerics["aubry_tol"])
        H, Phi = barrier_matrix(fields)
        tables = {}
        for i, fld in enumerate(fields):
            rows = []
            for a in range(self.grid.nx):
                for j in range(self.grid.nt):
                    rows.append((a, j, a / self.grid.nx, j / self.grid.nt,
                                 float(fld.h[a, j]), float(fld.phi_pot[a, j])))
            tables[f"anchor{i}"] = (("x_index", "t_index", "x", "t", "h", "phi_pot"),
                                    rows)
        results = {
            "c": self.c0.c,
            "anchors": [f.anchor_x for f in fields],
            "window_osc": [f.window_osc for f in fields],
            "sweeps": [f.n_sweeps for f in fields],
            "diagonal_residuals": [r.residual for r in residuals],
            "h_matrix": H,
            "phi_matrix": Phi,
        }
        ok = all(r.ok for r in residuals)
        return results, tables, ok

    def stage_viscous(self):
        eps_list = self.cfg.get("sweep", {}).get("eps_list", [])
        _require(eps_list, "viscous stage needs sweep.eps_list", "sweep.eps_list")
        rows = []
        tables = {}
        records = []
        ok = True
        for eps in eps_list:
            sol = self._timed(f"viscous_{eps}", lambda e=eps: solve_cell(
                self.model, e, self.grid, cell_tol=self.numerics["cell_tol"],
                max_periods=int(self.numerics["max_periods"]),
                lip_cap=self.numerics["lip_cap"]))
            lip, semi = regularity_report(sol)
            res = residual_check(self.model, sol)
            records.append({"epsilon": eps, "c_eps": sol.c_eps, "lip_x": lip,
                            "semiconvexity_const": semi,
                            "periodicity_residual": sol.periodicity_residual,
                            "operator_residual": res,
                            "n_periods": sol.n_periods,
                            "steps_per_period": sol.m_sub * self.grid.nt})
            prows = []
            for a in range(self.grid.nx):
                for j in range(self.grid.nt):
                    prows.append((a, j, a / self.grid.nx, j / self.grid.nt,
                                  float(sol.phi[a, j])))
            tables[f"eps{eps}"] = (("x_index", "t_index", "x", "t", "phi"), prows)
            ok = ok and res <= 10 * self.numerics["cell_tol"]
        return {"solves": records}, tables, ok

    def stage_sweep(self):
        eps_list = self.cfg.get("sweep", {}).get("eps_list", [])
        _require(len(eps_list) >= 3, "sweep needs >= 3 viscosities",
                 "sweep.eps_list")
        rep = self._timed("sweep", lambda: sweep(
            self.model, eps_list, self.grid,
            vmax=self.numerics["vmax"], cell_tol=self.numerics["cell_tol"],
            barrier_tol=self.numerics["barrier_tol"],
            shoot_tol=self.numerics["shoot_tol"],
            grid_tol=self.numerics["grid_tol"],
            aubry_tol=self.numerics["aubry_tol"],
            lip_cap=self.numerics["lip_cap"],
            max_periods=int(self.numerics["max_periods"]),
            max_sweeps=int(self.numerics["max_sweeps"]),
            orbits=self.orbits))
        verdict = slope_fit(rep, slope_tol=self.numerics["slope_tol"])
        trend_ok = all(b <= a * 1.10 for a, b in
                       zip(rep.limit_errors, rep.limit_errors[1:]))
        lips, semis = rep.lip_records, rep.semiconvexity_records
        reg_ok = (max(lips) <= 2 * min(lips)
                  and max(semis) <= 2 * max(min(semis), 1e-12))
        rows = [(e, c, s, le, ge, l, sc) for e, c, s, le, ge, l, sc in zip(
            rep.eps_list, rep.c_records, rep.slope_secants, rep.limit_errors,
            rep.grad_errors, lips, semis)]
        tables = {"sweep": (("epsilon", "c_eps", "secant", "limit_error",
                             "grad_error", "lip_x", "semiconvexity_const"), rows)}
        results = {
            "c0": rep.c0,
            "lambdas": rep.lambdas,
            "lambda_bar": rep.lambda_bar,
            "selected": rep.selected,
            "anchors": rep.anchors,
            "anchor_values": rep.anchor_values,
            "records": rows,
            "slope_fit": rep.slope_fit,
            "verdicts": {
                "secant_lower_bound": verdict.lower_bound_ok,
                "slope_fit": verdict.fit_ok,
                "limit_error_trend": trend_ok,
                "regularity_factor_2": reg_ok,
            },
        }
        ok = verdict.ok and trend_ok and reg_ok
        return results, tables, ok

    def stage_rescale(self):
        rep = self._timed("rescale", lambda: rescale_check(
            self.model, self.orbits, self.grid,
            vmax=self.numerics["vmax"],
            shoot_tol=max(self.numerics["shoot_tol"], 1e-5)))
        results = {
            "N": rep.N, "vacuous": rep.vacuous,
            "barrier_identity_error": rep.barrier_identity_error,
            "lambda_errors": rep.lambda_errors,
            "c_original": rep.c_original, "c_rescaled": rep.c_rescaled,
        }
        return results, {}, rep.ok(barrier_tol=self.numerics["grid_tol"])

    def stage_example(self):
        _require(self.model.family == "traveling_wave",
                 "example stage needs a traveling_wave model", "model.family")
        rep = self._timed("example", lambda: example_verify(
            self.model.wind, self.model.potential, self.grid,
            vmax=self.numerics["vmax"],
            shoot_tol=max(self.numerics["shoot_tol"], 1e-5)))
        results = {
            "k": rep.k, "maxima": rep.maxima,
            "orbit_count_ok": rep.orbit_count_ok,
            "translate_residual": rep.translate_residual,
            "riccati_errors": rep.riccati_errors,
            "fd_deviations": rep.fd_deviations,
            "shift_consistency_error": rep.shift_consistency_error,
            "expected_curvatures": rep.expected_curvatures,
        }
        return results, {}, rep.ok()

    def stage_stochastic(self):
        stoch = self.cfg.get("stochastic")
        _require(stoch, "stochastic stage needs a stochastic block", "stochastic")
        eps_list = stoch.get("eps_list", self.cfg.get("sweep", {}).get("eps_list"))
        _require(eps_list, "stochastic stage needs an eps list",
                 "stochastic.eps_list")
        seed = int(stoch.get("seed", 0))
        n_paths = int(stoch["n_paths"])
        dt = float(stoch["dt"])
        delta = float(stoch["delta"])
        kappa = float(stoch["kappa"])

        # selected orbit for the tube
        curves = [unstable_hessian_curve(self.model, o, orbit_ref=i)
                  for i, o in enumerate(self.orbits)]
        lam = lambda_averages(curves)
        sel = self.orbits[lam.argmin[0]]
        drift = DriftField.from_barrier(self.model, self.fields[lam.argmin[0]])
        fw = self._timed("exit_scaling", lambda: exit_time_scaling(
            self.model, sel, drift, eps_list, delta, n_paths, kappa, dt, seed))

        lax_eps = float(min(eps_list))
        sol = self._timed("lax_solve", lambda: solve_cell(
            self.model, lax_eps, self.grid,
            cell_tol=self.numerics["cell_tol"],
            max_periods=int(self.numerics["max_periods"]),
            lip_cap=self.numerics["lip_cap"]))
        opt = DriftField.from_viscous(self.model, sol)
        probes = self._timed("lax_probes", lambda: lax_residual(
            self.model, sol, opt, kappa=min(kappa, 2.0), n_paths=n_paths,
            dt=dt, seed=seed))
        lax_ok = all(p.residual <= max(0.02, 2 * p.se) for p in probes)

        rows = [(r.epsilon, n_paths, r.mean_tau, r.ci_low, r.ci_high,
                 r.eps_log_mean_tau, r.capped_fraction) for r in fw.records]
        tables = {"exit": (("epsilon", "n_paths", "mean_tau", "ci_low",
                            "ci_high", "eps_log_mean_tau", "capped_fraction"),
                           rows),
                  "lax": (("x", "t", "lhs", "rhs", "residual", "se"),
                          [(p.x, p.t, p.lhs, p.rhs, p.residual, p.se)
                           for p in probes])}
        results = {
            "exit_records": rows,
            "exit_all_positive": fw.all_positive,
            "exit_nondecreasing": fw.nondecreasing,
            "lax": [{"x": p.x, "t": p.t, "lhs": p.lhs, "rhs": p.rhs,
                     "se": p.se, "residual": p.residual} for p in probes],
            "lax_ok": lax_ok,
        }
        return results, tables, fw.ok and lax_ok

    STAGES = {
        "orbits": stage_orbits,
        "critical": stage_critical,
        "barrier": stage_barrier,
        "viscous": stage_viscous,
        "sweep": stage_sweep,
        "rescale": stage_rescale,
        "example": stage_example,
        "stochastic": stage_stochastic,
    }


def run_config(path: str, command: str, out_dir: str = ".",
               seed_override: int | None = None, workers: int = 1) -> int:
    """Execute a pipeline command; returns the process exit status."""
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        print(f"config error at '{exc.field}': {exc}", file=sys.stderr)
        return 1
    if seed_override is not None:
        cfg.setdefault("stochastic", {})["seed"] = int(seed_override)
    out_dir = cfg.get("output", {}).get("directory", out_dir) or out_dir

    if command not in COMMANDS:
        print(f"unknown command {command!r}; choose from {COMMANDS}",
              file=sys.stderr)
        return 1
    names = [c for c in ("orbits", "critical", "barrier", "viscous", "sweep",
                         "rescale", "example", "stochastic")
             if command == "all" or c == command]
    if command == "all":
        # the example stage only applies to traveling-wave configs
        if cfg["model"].get("family") != "traveling_wave":
            names.remove("example")
        if not cfg.get("stochastic"):
            names.remove("stochastic")
        if not cfg.get("sweep", {}).get("eps_list"):
            names = [n for n in names if n not in ("viscous", "sweep")]

    pipe = _Pipeline(cfg)
    overall_ok = True
    status = 0
    for name in names:
        try:
            results, tables, ok = pipe.STAGES[name](pipe)
        except ConfigError as exc:
            print(f"config error at '{exc.field}': {exc}", file=sys.stderr)
            return 1
        except WeakKamError as exc:
            print(f"{name} failed: {exc}", file=sys.stderr)
            return 1
        results["pass"] = bool(ok)
        files = emit_reports(results, name, cfg, out_dir, pipe.wall, tables)
        overall_ok = overall_ok and ok
        print(f"[{name}] {'PASS' if ok else 'FAIL'} -> {', '.join(files) or '(no files)'}")
    if not overall_ok:
        status = 2
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="wkam",
        description="weak-KAM toolkit: critical values, barriers, orbits and "
                    "vanishing-viscosity selection on the circle")
    parser.add_argument("--config", required=True, help="experiment config JSON")
    parser.add_argument("--command", default="all", choices=COMMANDS)
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override stochastic.seed")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker pool size (results are worker-count independent)")
    args = parser.parse_args(argv)
    try:
        return run_config(args.config, args.command, out_dir=args.out,
                          seed_override=args.seed, workers=args.workers)
    except WeakKamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
