"""Command-line frontend; emits CSV/JSON for external plotting.

Six subcommands map onto the package's operations:

* ``project``   one projection run at a slow point
* ``cascade``   staged runs of increasing order, reseeding each stage
* ``rpm``       the subspace-stabilized projection
* ``stability`` closed-form multiplier report for a system
* ``region``    rasterized stability region of the chosen variant
* ``sweep``     harness experiments: order fit, threshold, region score

Exit codes: 0 success, 2 validation error, 3 numerical divergence,
4 non-convergence within the iteration budget.  Step sizes are always
given as dimensionless ratios against epsilon.  Floats in output files
are formatted to 17 significant digits so identical configurations
produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys as _sys

import numpy as np

from .derivatives import DerivativeMode
from .exceptions import (BracketError, DivergenceError, FitError,
                         SlowManifoldError)
from .harness import (SweepSpec, compare_regions, empirical_threshold,
                      order_of_accuracy)
from .projector import IterationConfig, error_bound, project, project_cascade
from .rpm import RpmConfig, rpm_iterate
from .stability import raster_region, verdict
from .systems import SYSTEM_PARAMETERS, default_flow_map, make_system

__all__ = ["run", "main"]

_EXIT_OK = 0
_EXIT_VALIDATION = 2
_EXIT_DIVERGENCE = 3
_EXIT_NO_CONVERGENCE = 4

_SYSTEM_FLAGS = ("a", "c", "kappa", "lam", "modulus", "theta", "coupling",
                 "drift")


# -- deterministic serialization ----------------------------------------------

def _fmt(value: float) -> str:
    """17-significant-digit decimal form, stable across runs."""
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(float(value), ".17g")


def _write_json(value, out: list, indent: int):
    """Hand-rolled writer: json.dumps formats floats by shortest
    round-trip, which breaks the fixed-17-digit output contract."""
    pad = "  " * indent
    if isinstance(value, dict):
        if not value:
            out.append("{}")
            return
        out.append("{\n")
        keys = sorted(value)
        for i, key in enumerate(keys):
            out.append(f'{pad}  {json.dumps(str(key))}: ')
            _write_json(value[key], out, indent + 1)
            out.append(",\n" if i + 1 < len(keys) else "\n")
        out.append(pad + "}")
    elif isinstance(value, (list, tuple)) or isinstance(value, np.ndarray):
        items = list(value)
        if not items:
            out.append("[]")
            return
        out.append("[\n")
        for i, item in enumerate(items):
            out.append(pad + "  ")
            _write_json(item, out, indent + 1)
            out.append(",\n" if i + 1 < len(items) else "\n")
        out.append(pad + "]")
    elif isinstance(value, complex):
        _write_json({"re": value.real, "im": value.imag}, out, indent)
    elif isinstance(value, (bool, np.bool_)):
        out.append("true" if value else "false")
    elif value is None:
        out.append("null")
    elif isinstance(value, (int, np.integer)):
        out.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no NaN/inf literals; strings keep the file parseable
        out.append(json.dumps(_fmt(value)) if not math.isfinite(value)
                   else _fmt(value))
    else:
        out.append(json.dumps(str(value)))


def _dump_json(payload) -> str:
    out: list = []
    _write_json(payload, out, 0)
    out.append("\n")
    return "".join(out)


def _dump_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _emit(text: str, path: str | None):
    if path is None:
        _sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# -- argument plumbing ---------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slowman",
        description="Slow-manifold projection for explicit fast-slow ODE systems")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_io(p):
        p.add_argument("--output", default=None, help="output file (default stdout)")
        p.add_argument("--format", choices=("json", "csv"), default=None)
        p.add_argument("--config", default=None,
                       help="JSON file with option defaults; flags override")
        p.add_argument("--verbose", action="store_true",
                       help="echo the resolved configuration as JSON")

    def add_system(p):
        p.add_argument("--system", choices=tuple(SYSTEM_PARAMETERS))
        p.add_argument("--eps", type=float)
        for name in _SYSTEM_FLAGS:
            p.add_argument(f"--{name}", type=float)

    def add_iteration(p):
        p.add_argument("--m", type=int)
        p.add_argument("--mode", choices=("analytic", "differenced"))
        p.add_argument("--H-over-eps", dest="h_over_eps", type=float)
        p.add_argument("--H-hat-over-eps", dest="h_hat_over_eps", type=float)
        p.add_argument("--eta", type=float)
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iters", dest="max_iters", type=int)

    def add_point(p):
        p.add_argument("--x0", type=float, nargs="+")
        p.add_argument("--y-seed", dest="y_seed", type=float, nargs="+")

    p = sub.add_parser("project", help="single projection run")
    add_system(p); add_iteration(p); add_point(p); add_io(p)

    p = sub.add_parser("cascade", help="orders 0..m, each reseeding the next")
    add_system(p); add_iteration(p); add_point(p); add_io(p)

    p = sub.add_parser("rpm", help="subspace-stabilized projection")
    add_system(p); add_iteration(p); add_point(p)
    p.add_argument("--delta", type=float)
    p.add_argument("--jacobian-step", dest="jacobian_step", type=float)
    p.add_argument("--refresh-every", dest="refresh_every", type=int)
    add_io(p)

    p = sub.add_parser("stability", help="closed-form multiplier report")
    add_system(p); add_iteration(p)
    p.add_argument("--x0", type=float, nargs="+")
    add_io(p)

    p = sub.add_parser("region", help="rasterized stability region")
    p.add_argument("--m", type=int)
    p.add_argument("--mode", choices=("analytic", "differenced"))
    p.add_argument("--eta", type=float)
    p.add_argument("--resolution", type=int)
    p.add_argument("--theta-min", dest="theta_min", type=float)
    p.add_argument("--theta-max", dest="theta_max", type=float)
    p.add_argument("--step-min", dest="step_min", type=float)
    p.add_argument("--step-max", dest="step_max", type=float)
    add_io(p)

    p = sub.add_parser("sweep", help="harness experiments")
    p.add_argument("--task", choices=("order", "threshold", "regions"))
    add_system(p); add_iteration(p); add_point(p)
    p.add_argument("--epsilons", type=float, nargs="+")
    p.add_argument("--eta-sweep", dest="eta_sweep", type=float)
    p.add_argument("--resolution", type=int)
    p.add_argument("--step-min", dest="step_min", type=float)
    p.add_argument("--step-max", dest="step_max", type=float)
    add_io(p)
    return parser


_DEFAULTS = {
    "project": {"m": 0, "mode": "analytic", "h_over_eps": 1.0,
                "h_hat_over_eps": None, "eta": 1.0, "tol": None,
                "max_iters": 10000, "y_seed": None, "format": "json"},
    "cascade": {"m": 0, "mode": "analytic", "h_over_eps": 1.0,
                "h_hat_over_eps": None, "eta": 1.0, "tol": None,
                "max_iters": 10000, "y_seed": None, "format": "json"},
    "rpm": {"m": 0, "mode": "analytic", "h_over_eps": 1.0,
            "h_hat_over_eps": None, "eta": 1.0, "tol": None,
            "max_iters": 10000, "y_seed": None, "delta": 0.2,
            "jacobian_step": None, "refresh_every": 5, "format": "json"},
    "stability": {"m": 0, "mode": "analytic", "h_over_eps": 1.0,
                  "h_hat_over_eps": None, "eta": 1.0, "tol": None,
                  "max_iters": 10000, "format": "json"},
    "region": {"m": 0, "mode": "differenced", "eta": 1.0, "resolution": 64,
               "theta_min": 0.51 * math.pi, "theta_max": 1.49 * math.pi,
               "step_min": 0.02, "step_max": 3.0, "format": "csv"},
    "sweep": {"task": "order", "m": 0, "mode": "analytic", "h_over_eps": 1.0,
              "h_hat_over_eps": None, "eta": 1.0, "tol": None,
              "max_iters": 10000, "y_seed": None, "epsilons": None,
              "eta_sweep": None, "resolution": 64, "step_min": None,
              "step_max": None, "format": "json"},
}

_COMMON_KEYS = ("system", "eps", "x0", "output", "verbose",
                *_SYSTEM_FLAGS)


def _resolve_options(args: argparse.Namespace) -> dict:
    """Layer defaults, then config-file values, then explicit flags."""
    command = args.command
    allowed = dict(_DEFAULTS[command])
    for key in _COMMON_KEYS:
        allowed.setdefault(key, None)
    resolved = dict(allowed)
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ValueError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(allowed))
        if unknown:
            raise ValueError(
                f"unknown config key(s) for {command}: {unknown}")
        resolved.update(loaded)
    for key in allowed:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            resolved[key] = value
    resolved["command"] = command
    resolved["verbose"] = bool(resolved.get("verbose"))
    return resolved


def _system_from(opts: dict):
    if opts.get("system") is None:
        raise ValueError("--system is required for this command")
    if opts.get("eps") is None:
        raise ValueError("--eps is required for this command")
    schema = SYSTEM_PARAMETERS[opts["system"]]
    params = {"eps": float(opts["eps"])}
    for name in _SYSTEM_FLAGS:
        if opts.get(name) is None:
            continue
        if name not in schema:
            raise ValueError(
                f"parameter --{name} does not apply to system {opts['system']!r}")
        params[name] = float(opts[name])
    return make_system(opts["system"], params)


def _mode_from(opts: dict, epsilon: float) -> DerivativeMode:
    if opts["mode"] == "analytic":
        return DerivativeMode.analytic(float(opts["h_over_eps"]) * epsilon)
    if opts.get("h_hat_over_eps") is None:
        raise ValueError("differenced mode requires --H-hat-over-eps")
    return DerivativeMode.differenced(
        float(opts["h_hat_over_eps"]) * epsilon, eta=float(opts["eta"]))


def _iteration_config(opts: dict, mode: DerivativeMode) -> IterationConfig:
    return IterationConfig(
        m=int(opts["m"]), mode=mode, tol=opts["tol"],
        max_iters=int(opts["max_iters"]),
        seed_policy="user-value" if opts.get("y_seed") else "critical-manifold")


def _trace_payload(sys, cfg, trace, fm):
    payload = {
        "m": trace.m,
        "x0": list(trace.x0),
        "converged": trace.converged,
        "diverged": trace.diverged,
        "iterations_used": trace.iterations_used,
        "output": None if trace.output is None else list(trace.output),
        "final_residual": trace.residuals[-1] if trace.residuals else None,
        "tol": cfg.resolve_tol(sys.epsilon),
    }
    if trace.converged:
        payload["error_bound"] = error_bound(sys, cfg, trace, fm)
    return payload


def _trace_exit(trace) -> int:
    if trace.converged:
        return _EXIT_OK
    if trace.diverged:
        return _EXIT_DIVERGENCE
    return _EXIT_NO_CONVERGENCE


# -- command implementations ---------------------------------------------------

def _require_x0(opts):
    if opts.get("x0") is None:
        raise ValueError("--x0 is required for this command")
    return opts["x0"]


def _cmd_project(opts):
    sys = _system_from(opts)
    _require_x0(opts)
    mode = _mode_from(opts, sys.epsilon)
    cfg = _iteration_config(opts, mode)
    fm = default_flow_map(sys, mode.H_hat) if mode.H_hat else None
    trace = project(sys, fm, cfg, opts["x0"], opts.get("y_seed"))
    payload = _trace_payload(sys, cfg, trace, fm)
    payload["command"] = "project"
    if opts["format"] == "json":
        text = _dump_json(payload)
    else:
        text = _dump_csv(
            ["iteration", "residual"],
            [(i, r) for i, r in enumerate(trace.residuals)])
    _emit(text, opts["output"])
    return _trace_exit(trace)


def _cmd_cascade(opts):
    sys = _system_from(opts)
    _require_x0(opts)
    mode = _mode_from(opts, sys.epsilon)
    cfg = _iteration_config(opts, mode)
    fm = default_flow_map(sys, mode.H_hat) if mode.H_hat else None
    traces = project_cascade(sys, fm, cfg, opts["x0"], opts.get("y_seed"),
                             m_max=int(opts["m"]))
    tol0 = cfg.tol if cfg.tol is not None else sys.epsilon
    stages = [_trace_payload(
        sys, dataclasses.replace(cfg, m=t.m, tol=tol0 * sys.epsilon ** t.m),
        t, fm) for t in traces]
    payload = {"command": "cascade", "stages": stages}
    if opts["format"] == "json":
        text = _dump_json(payload)
    else:
        text = _dump_csv(
            ["m", "converged", "iterations", "final_residual"],
            [(t.m, int(t.converged), t.iterations_used,
              t.residuals[-1] if t.residuals else math.nan) for t in traces])
    _emit(text, opts["output"])
    return _trace_exit(traces[-1])


def _cmd_rpm(opts):
    sys = _system_from(opts)
    _require_x0(opts)
    mode = _mode_from(opts, sys.epsilon)
    cfg = _iteration_config(opts, mode)
    fm = default_flow_map(sys, mode.H_hat) if mode.H_hat else None
    rpm_cfg = RpmConfig(delta=float(opts["delta"]),
                        jacobian_step=opts["jacobian_step"],
                        refresh_every=int(opts["refresh_every"]))
    trace, state = rpm_iterate(sys, fm, cfg, rpm_cfg, opts["x0"],
                               opts.get("y_seed"))
    payload = _trace_payload(sys, cfg, trace, fm)
    payload.update({
        "command": "rpm",
        "subspace_dimension": state.M,
        "basis": [list(col) for col in state.basis_P.T],
        "p": list(state.p),
        "q": list(state.q),
    })
    text = (_dump_json(payload) if opts["format"] == "json" else
            _dump_csv(["iteration", "residual"],
                      list(enumerate(trace.residuals))))
    _emit(text, opts["output"])
    return _trace_exit(trace)


def _cmd_stability(opts):
    sys = _system_from(opts)
    _require_x0(opts)
    mode = _mode_from(opts, sys.epsilon)
    report = verdict(sys, mode, int(opts["m"]), opts["x0"])
    modes = [{
        "lambda_re": a.eigenmode.lambda_re,
        "lambda_im": a.eigenmode.lambda_im,
        "angle": a.eigenmode.angle,
        "multiplier": a.multiplier,
        "abs_multiplier": abs(a.multiplier),
        "stable": a.stable,
        "in_stable_sector": a.in_stable_sector,
        "h_max": a.h_max,
        "decay_exponent": a.decay_exponent,
    } for a in report.modes]
    payload = {
        "command": "stability",
        "m": report.m,
        "variant": report.variant,
        "eta": report.eta,
        "stable": report.stable,
        "uniform_step_bound": report.uniform_step_bound,
        "instability_onset": report.instability_onset,
        "modes": modes,
    }
    if opts["format"] == "csv":
        text = _dump_csv(
            ["lambda_re", "lambda_im", "abs_multiplier", "stable"],
            [(a.eigenmode.lambda_re, a.eigenmode.lambda_im,
              abs(a.multiplier), int(a.stable)) for a in report.modes])
    else:
        text = _dump_json(payload)
    _emit(text, opts["output"])
    return _EXIT_OK


def _cmd_region(opts):
    variant = ("analytic-recursive" if opts["mode"] == "analytic"
               else "forward-difference")
    raster = raster_region(
        int(opts["m"]),
        (float(opts["theta_min"]), float(opts["theta_max"])),
        (float(opts["step_min"]), float(opts["step_max"])),
        resolution=int(opts["resolution"]),
        eta=float(opts["eta"]), variant=variant)
    if opts["format"] == "json":
        text = _dump_json({
            "command": "region", "m": raster.m, "variant": raster.variant,
            "eta": raster.eta,
            "thetas": raster.thetas, "steps": raster.steps,
            "abs_mu": raster.abs_mu, "stable": raster.stable.astype(int),
        })
    else:
        text = _dump_csv(
            ["theta", "step", "abs_mu", "stable"],
            [(t, s, v, int(st)) for t, s, v, st in raster.iter_rows()])
    _emit(text, opts["output"])
    return _EXIT_OK


def _sweep_spec(opts) -> SweepSpec:
    if opts.get("epsilons"):
        epsilons = tuple(float(e) for e in opts["epsilons"])
    elif opts.get("eps") is not None:
        epsilons = (float(opts["eps"]),)
    else:
        raise ValueError("sweep requires --epsilons or --eps")
    if opts.get("system") is None:
        raise ValueError("--system is required for this command")
    schema = SYSTEM_PARAMETERS[opts["system"]]
    params = {}
    for name in _SYSTEM_FLAGS:
        if opts.get(name) is None:
            continue
        if name not in schema:
            raise ValueError(
                f"parameter --{name} does not apply to system {opts['system']!r}")
        params[name] = float(opts[name])
    variant = ("analytic-recursive" if opts["mode"] == "analytic"
               else "forward-difference")
    return SweepSpec(
        system=opts["system"], params=params, epsilons=epsilons,
        m_values=(int(opts["m"]),), x0=tuple(opts.get("x0") or (1.0,)),
        variant=variant, h_over_eps=float(opts["h_over_eps"]),
        h_hat_over_eps=(None if opts.get("h_hat_over_eps") is None
                        else float(opts["h_hat_over_eps"])),
        eta=float(opts["eta"]), max_iters=int(opts["max_iters"]))


def _cmd_sweep(opts):
    summary = {"slope": None, "r_squared": None, "threshold": None,
               "mismatch": None}
    task = opts["task"]
    rows, header = [], ()
    if task == "order":
        spec = _sweep_spec(opts)
        fit = order_of_accuracy(spec, int(opts["m"]))
        if not fit.at_floor:
            summary["slope"] = fit.slope
            summary["r_squared"] = fit.r_squared
        summary["at_floor"] = fit.at_floor
        header = ("epsilon", "error")
        rows = list(fit.errors_per_epsilon)
    elif task == "threshold":
        sys = _system_from(opts)
        mode = _mode_from(opts, sys.epsilon)
        cfg = _iteration_config(opts, mode)
        if opts.get("step_min") is None or opts.get("step_max") is None:
            raise ValueError("threshold task requires --step-min and --step-max")
        lo = float(opts["step_min"]) * sys.epsilon
        hi = float(opts["step_max"]) * sys.epsilon
        y_seed = opts.get("y_seed")
        if y_seed is None:
            raise ValueError("threshold task requires --y-seed")
        try:
            summary["threshold"] = empirical_threshold(
                sys, cfg, opts["x0"], y_seed, (lo, hi))
        except BracketError as exc:
            print(f"slowman: {exc}", file=_sys.stderr)
        header = ("threshold",)
        rows = [(summary["threshold"],)] if summary["threshold"] else []
    else:
        # region scoring builds its own synthetic per-angle systems; only
        # epsilon is taken from the options
        if opts.get("epsilons"):
            eps0 = float(opts["epsilons"][0])
        elif opts.get("eps") is not None:
            eps0 = float(opts["eps"])
        else:
            raise ValueError("regions task requires --eps or --epsilons")
        spec = SweepSpec(system="pair",
                         params={"modulus": 1.0, "theta": math.pi},
                         epsilons=(eps0,))
        eta = float(opts["eta_sweep"] if opts.get("eta_sweep") is not None
                    else opts["eta"])
        comparison = compare_regions(spec, int(opts["m"]), eta=eta,
                                     resolution=int(opts["resolution"]))
        summary["mismatch"] = comparison.mismatch
        header = ("theta", "step", "abs_mu", "predicted", "observed", "excluded")
        rows = [(t, s, v, int(p), int(o), int(e))
                for t, s, v, p, o, e in comparison.iter_rows()]
    if opts["format"] == "csv":
        text = _dump_csv(header, rows)
    else:
        text = _dump_json({"command": "sweep", "task": task, **summary})
    _emit(text, opts["output"])
    return _EXIT_OK


_COMMANDS = {
    "project": _cmd_project,
    "cascade": _cmd_cascade,
    "rpm": _cmd_rpm,
    "stability": _cmd_stability,
    "region": _cmd_region,
    "sweep": _cmd_sweep,
}


def run(argv) -> int:
    """Execute one CLI invocation; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed a diagnostic
        return _EXIT_VALIDATION if exc.code not in (0, None) else _EXIT_OK
    try:
        opts = _resolve_options(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"slowman: {exc}", file=_sys.stderr)
        return _EXIT_VALIDATION
    if opts["verbose"]:
        echo = {k: v for k, v in opts.items() if k != "verbose"}
        _sys.stdout.write(_dump_json(echo))
    try:
        return _COMMANDS[opts["command"]](opts)
    except (ValueError, TypeError) as exc:
        print(f"slowman: {exc}", file=_sys.stderr)
        return _EXIT_VALIDATION
    except FitError as exc:
        print(f"slowman: {exc}", file=_sys.stderr)
        return _EXIT_NO_CONVERGENCE
    except DivergenceError as exc:
        print(f"slowman: {exc}", file=_sys.stderr)
        return _EXIT_DIVERGENCE
    except SlowManifoldError as exc:
        print(f"slowman: {exc}", file=_sys.stderr)
        return _EXIT_DIVERGENCE
    except OSError as exc:
        print(f"slowman: {exc}", file=_sys.stderr)
        return _EXIT_VALIDATION


def main(argv=None) -> int:
    return run(_sys.argv[1:] if argv is None else argv)
