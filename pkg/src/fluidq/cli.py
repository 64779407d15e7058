"""Command-line front end.

    fluidq <fit|solve|decay|simulate|size> --config <path> [overrides]

The config is a JSON object whose keys are listed in ``DEFAULTS`` for each
command.  ``--set key=value`` (value parsed as JSON when possible) and the
dedicated flags override config fields; precedence is flags > config >
defaults.  Relative paths resolve against the config file's directory, and
``bundled:<name>`` names a file shipped in the package data directory.

Tables are CSV with ``#`` metadata lines (tool version, config hash);
reports are JSON.  Floats are written with ``repr`` so reruns are
byte-identical.  Exit codes: 0 success, 2 usage, 3 io, 4 parse, 5 model,
6 drift, 7 numeric.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .ctmc import (JOULES_PER_KWH, TIME_UNITS, ModelUnits, drift, invariant_distribution,
                   load_model, model_from_dict, model_to_dict)
from .errors import DriftError, FluidqError, InputFileError, ModelError, TraceFormatError
from .fit import BPA_EDGES, BinningSpec, FittedModel, build_model, fit_pipeline
from .fluid import lolp_curve, lolp_lower_bound
from .ldp import decay_rate_eig, decay_report
from .sim import (battery_replay, mean_holding_time, read_trace_csv, select_window,
                  simulate_ctmc, simulate_dtmc)
from .sizing import estimate_prefactor, incremental_size, size_estimate, size_exact

COMMANDS = ("fit", "solve", "decay", "simulate", "size")

DEFAULTS = {
    "fit": {
        "trace": None,
        "bin_edges": list(BPA_EDGES),
        "demand": None,
        "sample_interval": None,
        "power_unit": "MW",
        "time_unit": "s",
        "window": None,
        "min_transitions": 10,
        "pseudo_count": 0.0,
        "compare_bmax": [],
        "output_model": "model.json",
        "output_fit": "fit.json",
    },
    "solve": {
        "model": None,
        "bmax": None,
        "log_lolp": False,
        "units": "si",
        "output": "-",
    },
    "decay": {
        "model": None,
        "q_multiplier": 1.1,
        "n_samples": 41,
        "cgf_output": None,
        "output": "-",
    },
    "simulate": {
        "mode": "ctmc",
        "model": None,
        "fit": None,
        "trace": None,
        "demand": None,
        "window": None,
        "bmax": None,
        "horizon": None,
        "horizon_holding_times": None,
        "seeds": [0],
        "burn_in": 0.01,
        "batches": 20,
        "b0": None,
        "workers": 1,
        "units": "si",
        "output": "-",
    },
    "size": {
        "model": None,
        "delta": [],
        "epsilon": [],
        "base_delta": None,
        "exact": True,
        "rtol": 1e-6,
        "prefactor": False,
        "allow_negative_drift": False,
        "output": "-",
    },
}


NOT_HASHED = frozenset({"output", "output_model", "output_fit", "cgf_output", "workers"})


class ConfigError(FluidqError):
    category = "parse"


class Context:
    """Effective config plus where its relative paths resolve from."""

    def __init__(self, command: str, config: dict, base_dir: Path):
        self.command = command
        self.config = config
        self.base_dir = base_dir
        # destinations and worker count do not change the numbers
        hashed = {k: v for k, v in config.items() if k not in NOT_HASHED}
        canonical = json.dumps({"command": command, "config": hashed}, sort_keys=True,
                               separators=(",", ":"))
        self.config_hash = hashlib.sha256(canonical.encode()).hexdigest()

    def __getitem__(self, key):
        return self.config[key]

    def require(self, key):
        value = self.config.get(key)
        if value is None or value == []:
            raise ConfigError(f"{self.command}: config field {key!r} is required")
        return value

    def path(self, value) -> Path:
        if isinstance(value, str) and value.startswith("bundled:"):
            return Path(str(resources.files("fluidq") / "data" / value[len("bundled:"):]))
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def meta(self) -> dict:
        return {"tool": "fluidq", "version": __version__, "command": self.command,
                "config_sha256": self.config_hash}


# -- config ----------------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(command: str, path, overrides: dict) -> Context:
    config = copy.deepcopy(DEFAULTS[command])
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise InputFileError(f"cannot read config {path}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        doc.pop("command", None)
        _merge(config, doc, command, str(path))
        base = path.resolve().parent
    _merge(config, overrides, command, "command-line flags")
    return Context(command, config, base)


def _merge(config: dict, doc: dict, command: str, origin: str):
    unknown = sorted(set(doc) - set(DEFAULTS[command]))
    if unknown:
        raise ConfigError(f"{origin}: unknown field(s) for {command!r}: {', '.join(unknown)}",
                          hint=f"valid fields: {', '.join(sorted(DEFAULTS[command]))}")
    config.update(doc)


def _float_list(value, name) -> list[float]:
    if isinstance(value, dict):
        try:
            start, stop, num = float(value["start"]), float(value["stop"]), int(value["num"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: grid needs start, stop, num ({exc})") from exc
        if value.get("log", False):
            if not (start > 0 and stop > 0):
                raise ModelError(f"{name}: log grid needs positive endpoints")
            return [float(x) for x in np.geomspace(start, stop, num)]
        return [float(x) for x in np.linspace(start, stop, num)]
    if isinstance(value, (int, float)):
        return [float(value)]
    try:
        return [float(x) for x in value]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected a number, a list or a grid object") from exc


# -- output ----------------------------------------------------------------

def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_text(ctx: Context, target, text: str):
    if target in (None, "-"):
        sys.stdout.write(text)
        return
    p = ctx.path(target)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
    except OSError as exc:
        raise InputFileError(f"cannot write {p}: {exc}") from exc


def write_table(ctx: Context, target, columns, rows, extra_meta=None):
    buf = io.StringIO()
    meta = ctx.meta()
    meta.update(extra_meta or {})
    for key, value in meta.items():
        buf.write(f"# {key}: {_fmt(value)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    _write_text(ctx, target, buf.getvalue())


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(ctx: Context, target, doc: dict):
    doc = {"meta": ctx.meta(), **doc}
    _write_text(ctx, target, json.dumps(_clean(doc), indent=2) + "\n")


def say(msg: str):
    print(msg, file=sys.stderr)


# -- shared loaders --------------------------------------------------------

def _load_model(ctx: Context, key: str = "model"):
    ref = ctx.require(key)
    if isinstance(ref, dict):
        return model_from_dict(ref)
    return load_model(ctx.path(ref))


def _load_fit(ctx: Context) -> FittedModel:
    p = ctx.path(ctx.require("fit"))
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise InputFileError(f"cannot read fit file {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"fit file {p} is not valid JSON: {exc}") from exc
    try:
        return FittedModel.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FluidqError):
            raise
        raise TraceFormatError(f"malformed fit file {p}: {exc}") from exc


def _trace_segments(ctx: Context):
    trace = read_trace_csv(ctx.path(ctx.require("trace")))
    window = ctx["window"] or {}
    if window:
        segments = select_window(trace, window.get("months"), window.get("hours"))
        if not segments:
            raise ModelError("time window selects no samples")
    else:
        segments = [trace.values]
    return trace, segments


def _energy_factor(model_units: ModelUnits, units: str) -> tuple[float, str]:
    if units == "si":
        return 1.0, ""
    if units == "kwh":
        return model_units.joules_per_energy_unit() / JOULES_PER_KWH, "_kwh"
    raise ConfigError(f"units must be 'si' or 'kwh', got {units!r}")


# -- commands --------------------------------------------------------------

def cmd_fit(ctx: Context) -> int:
    """Fit a model to a power trace."""
    trace, segments = _trace_segments(ctx)
    time_unit = ctx["time_unit"]
    if time_unit not in TIME_UNITS:
        raise ModelError(f"unknown time unit {time_unit!r}")
    tau = ctx["sample_interval"]
    tau = trace.interval / TIME_UNITS[time_unit] if tau is None else float(tau)
    units = ModelUnits(ctx["power_unit"], time_unit)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fitted, model = fit_pipeline(segments, tau, BinningSpec(ctx["bin_edges"]),
                                     float(ctx.require("demand")),
                                     min_transitions=int(ctx["min_transitions"]),
                                     pseudo_count=float(ctx["pseudo_count"]), units=units)
    notes = [str(w.message) for w in caught]

    pi = invariant_distribution(model.q_matrix)
    delta = float(pi @ model.rates)

    comparison = []
    for b in _float_list(ctx["compare_bmax"], "compare_bmax"):
        solver = lolp_curve(model, [b])[0].lolp
        empirical = battery_replay(np.full(sum(len(s) for s in segments), tau),
                                   np.concatenate(segments) - float(ctx["demand"]), b,
                                   burn_in=0.0).empirical_lolp
        comparison.append({"bmax": b, "solver_lolp": solver, "trace_lolp": empirical})

    provenance = {"trace": ctx["trace"], "window": ctx["window"], "demand": ctx["demand"],
                  "sample_interval": tau, "min_transitions": ctx["min_transitions"],
                  "pseudo_count": ctx["pseudo_count"], "n_samples": int(sum(len(s) for s in segments)),
                  "n_segments": len(segments)}
    fit_doc = {**fitted.to_dict(), "provenance": provenance, "warnings": notes,
               "lolp_comparison": comparison}
    model_doc = {**model_to_dict(model), "provenance": {"fit": ctx["output_fit"], **provenance}}
    write_json(ctx, ctx["output_fit"], fit_doc)
    write_json(ctx, ctx["output_model"], model_doc)

    say(f"fitted {model.n} states ({len(fitted.dropped_states)} bins dropped)")
    say(f"drift: {delta:.6g} ({'positive' if delta > 0 else 'negative' if delta < 0 else 'zero'})")
    say(f"|S+| = {len(model.positive_states)}, |S-| = {len(model.negative_states)}")
    for note in notes:
        say(f"warning: {note}")
    for row in comparison:
        say(f"bmax {row['bmax']:g}: solver LOLP {row['solver_lolp']:.6g}, "
            f"trace LOLP {row['trace_lolp']:.6g}")
    return 0


def cmd_solve(ctx: Context) -> int:
    """LOLP/LLR table over a battery-size grid."""
    model = _load_model(ctx)
    grid = _float_list(ctx.require("bmax"), "bmax")
    factor, suffix = _energy_factor(model.units, ctx["units"])
    reports = lolp_curve(model, grid)
    extra = {"drift": reports[0].drift if reports else None,
             "energy_unit": "kWh" if suffix else model.units.to_dict()["energy"]}
    if extra["drift"] is not None and extra["drift"] < 0:
        lb = lolp_lower_bound(model)
        extra["lolp_lower_bound"] = lb.bound
        extra["lower_bound_tight"] = lb.tight
        say(f"negative drift: LOLP >= {lb.bound:.6g} at every battery size"
            f" ({'tight' if lb.tight else 'not tight'}: {len(model.negative_states)} discharging state(s))")
    columns = ["bmax" + suffix, "lolp", "llr", "overflow_prob", "overflow_rate"]
    if ctx["log_lolp"]:
        columns.append("log_lolp")
    rows = []
    for rep in reports:
        rows.append({"bmax" + suffix: rep.bmax * factor, "lolp": rep.lolp, "llr": rep.llr,
                     "overflow_prob": rep.overflow_prob, "overflow_rate": rep.overflow_rate,
                     "log_lolp": math.log(rep.lolp) if rep.lolp > 0 else None})
    write_table(ctx, ctx["output"], columns, rows, extra)
    return 0


def cmd_decay(ctx: Context) -> int:
    """Decay rate by both routes, with cgf samples."""
    model = _load_model(ctx)
    report = decay_report(model, float(ctx["q_multiplier"]), int(ctx["n_samples"]))
    write_json(ctx, ctx["output"], {"drift": drift(model), **report.to_dict()})
    if ctx["cgf_output"]:
        rows = [{"theta": t, "Lambda": v if math.isfinite(v) else None}
                for t, v in report.cgf_samples]
        write_table(ctx, ctx["cgf_output"], ["theta", "Lambda"], rows,
                    {"q_rate": report.q_rate})
    say(f"lambda (eigenvalue) = {report.lambda_eig:.12g}")
    say(f"lambda (cgf root)   = {report.lambda_ld:.12g}  relative gap {report.relative_gap:.2e}")
    return 0


SIM_COLUMNS = ["mode", "bmax", "seed", "horizon", "lolp", "stderr_lolp", "llr", "stderr_llr",
               "overflow_prob", "overflow_rate", "solver_lolp", "conservation_residual"]


def _sim_task(task):
    mode, payload, bmax, seed, opts = task
    if mode == "ctmc":
        model = model_from_dict(payload["model"])
        traj = simulate_ctmc(model.q_matrix, payload["horizon"], seed)
        durations, rates = traj.durations, model.rates[traj.states]
    elif mode == "dtmc":
        t = np.array(payload["t_matrix"])
        traj = simulate_dtmc(t, payload["tau"], payload["horizon"], seed)
        durations, rates = traj.durations, np.array(payload["rates"])[traj.states]
    else:
        durations, rates = payload["durations"], payload["rates"]
        seed = None
    stats = battery_replay(durations, rates, bmax, opts["b0"], burn_in=opts["burn_in"],
                           n_batches=opts["batches"], seed=seed)
    row = stats.to_row()
    row["conservation_residual"] = stats.conservation_residual
    return row


def cmd_simulate(ctx: Context) -> int:
    """Empirical LOLP from CTMC, DTMC or trace replay."""
    mode = ctx["mode"]
    if mode not in ("ctmc", "dtmc", "trace"):
        raise ConfigError(f"mode must be ctmc, dtmc or trace, got {mode!r}")
    grid = _float_list(ctx.require("bmax"), "bmax")
    seeds = sorted({int(s) for s in ctx["seeds"]})
    opts = {"b0": ctx["b0"], "burn_in": float(ctx["burn_in"]), "batches": int(ctx["batches"])}
    model = None
    if mode == "ctmc":
        model = _load_model(ctx)
        payload = {"model": model_to_dict(model), "horizon": _horizon(ctx, model)}
    elif mode == "dtmc":
        fitted = _load_fit(ctx)
        model = build_model(fitted, float(ctx.require("demand")))
        payload = {"t_matrix": fitted.t_matrix.tolist(), "tau": fitted.tau,
                   "rates": model.rates.tolist(), "horizon": _horizon(ctx, model)}
    else:
        trace, segments = _trace_segments(ctx)
        if len(segments) > 1:
            say(f"note: {len(segments)} window segments replayed back to back")
        values = np.concatenate(segments)
        payload = {"durations": np.full(values.size, trace.interval),
                   "rates": values - float(ctx.require("demand"))}
        seeds = [None]
        if ctx["model"] is not None:
            model = _load_model(ctx)
    units = model.units if model is not None else ModelUnits()
    factor, suffix = _energy_factor(units, ctx["units"])

    tasks = [(mode, payload, b, s, opts) for b in grid for s in seeds]
    workers = int(ctx["workers"])
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sim_task, tasks))
    else:
        rows = [_sim_task(t) for t in tasks]

    solver = {}
    if model is not None:
        solver = {rep.bmax: rep.lolp for rep in lolp_curve(model, grid)}
    out = []
    for b in grid:
        group = [r for r in rows if r["bmax"] == b]
        for r in group:
            r["mode"] = mode
            r["solver_lolp"] = solver.get(b)
            out.append(r)
        if len(group) > 1:
            lolps = np.array([r["lolp"] for r in group])
            llrs = np.array([r["llr"] for r in group])
            k = len(group)
            out.append({
                "mode": mode, "bmax": b, "seed": "pooled",
                "horizon": sum(r["horizon"] for r in group),
                "lolp": float(lolps.mean()), "stderr_lolp": float(lolps.std(ddof=1) / math.sqrt(k)),
                "llr": float(llrs.mean()), "stderr_llr": float(llrs.std(ddof=1) / math.sqrt(k)),
                "overflow_prob": float(np.mean([r["overflow_prob"] for r in group])),
                "overflow_rate": float(np.mean([r["overflow_rate"] for r in group])),
                "solver_lolp": solver.get(b),
                "conservation_residual": max(abs(r["conservation_residual"]) for r in group),
            })
    for r in out:
        r["bmax" + suffix] = r["bmax"] * factor
    columns = [c if c != "bmax" else "bmax" + suffix for c in SIM_COLUMNS]
    write_table(ctx, ctx["output"], columns, out,
                {"seeds": " ".join(str(s) for s in seeds if s is not None) or "none"})
    return 0


def _horizon(ctx: Context, model) -> float:
    if ctx["horizon"] is not None:
        h = float(ctx["horizon"])
    elif ctx["horizon_holding_times"] is not None:
        h = float(ctx["horizon_holding_times"]) * mean_holding_time(model.q_matrix)
    else:
        raise ConfigError("simulate: set horizon or horizon_holding_times")
    if not h > 0:
        raise ModelError("horizon must be positive")
    return h


def cmd_size(ctx: Context) -> int:
    """Battery size for LOLP targets."""
    model = _load_model(ctx)
    deltas = _float_list(ctx["delta"], "delta")
    epsilons = _float_list(ctx["epsilon"], "epsilon")
    if not deltas and not epsilons:
        raise ConfigError("size: give at least one delta or epsilon target")
    kwh = model.units.joules_per_energy_unit() / JOULES_PER_KWH
    d = drift(model)
    rtol = float(ctx["rtol"])
    allow_neg = bool(ctx["allow_negative_drift"])

    lam = decay_rate_eig(model) if d > 0 else None
    if d <= 0:
        if epsilons:
            raise DriftError("relative sizing needs positive drift (no decay rate otherwise)")
        bound = lolp_lower_bound(model).bound
        say(f"negative drift: LOLP >= {bound:.6g} at every battery size")

    def kw(x):
        return None if x is None else x * kwh

    targets = []
    for delta in deltas:
        est = size_estimate(lam, delta) if lam else None
        ex = size_exact(model, delta, rtol, allow_negative_drift=allow_neg) if ctx["exact"] else None
        off = ex - est if (ex is not None and est is not None) else None
        targets.append({"target_lolp": delta, "estimate_bmax": est, "exact_bmax": ex,
                        "offset": off, "estimate_bmax_kwh": kw(est), "exact_bmax_kwh": kw(ex),
                        "offset_kwh": kw(off)})

    increments = []
    if epsilons:
        base = ctx["base_delta"] if ctx["base_delta"] is not None else (deltas[0] if deltas else None)
        base_size = size_exact(model, base, rtol) if (base is not None and ctx["exact"]) else None
        for eps in epsilons:
            est = incremental_size(lam, eps)
            ex = None
            if base_size is not None:
                ex = size_exact(model, base * eps, rtol) - base_size
            increments.append({"epsilon": eps, "base_delta": base, "estimate": est, "exact": ex,
                               "estimate_kwh": kw(est), "exact_kwh": kw(ex),
                               "relative_error": (est / ex - 1.0) if ex else None})

    doc = {"drift": d, "lambda": lam, "energy_unit": model.units.to_dict()["energy"],
           "kwh_per_energy_unit": kwh, "targets": targets, "increments": increments}
    if ctx["prefactor"] and lam:
        pf = estimate_prefactor(model)
        doc["prefactor"] = {"log_c": pf.log_c, "offset": pf.offset, "offset_kwh": pf.offset * kwh,
                            "max_residual": pf.max_residual}
    write_json(ctx, ctx["output"], doc)
    for t in targets:
        say(f"delta {t['target_lolp']:g}: estimate {_fmt(t['estimate_bmax'])}, "
            f"exact {_fmt(t['exact_bmax'])} ({_fmt(t['exact_bmax_kwh'])} kWh)")
    return 0


HANDLERS = {"fit": cmd_fit, "solve": cmd_solve, "decay": cmd_decay,
            "simulate": cmd_simulate, "size": cmd_size}


# -- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fluidq",
        description="Loss-of-load probability and battery sizing for Markov modulated fluid models.",
        epilog="exit codes: 0 ok, 2 usage, 3 io, 4 parse, 5 model, 6 drift, 7 numeric")
    parser.add_argument("--version", action="version", version=f"fluidq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__doc__)
        p.add_argument("--config", "-c", help="JSON config document")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (value parsed as JSON if possible)")
        p.add_argument("--output", "-o", help="output path, '-' for stdout")
        if name in ("solve", "decay", "simulate", "size"):
            p.add_argument("--model", help="model JSON file")
        if name in ("solve", "simulate"):
            p.add_argument("--units", choices=["si", "kwh"], help="energy unit for output columns")
        if name in ("fit", "simulate"):
            p.add_argument("--trace", help="trace CSV file")
        if name == "simulate":
            p.add_argument("--seeds", help="comma-separated seeds")
            p.add_argument("--workers", type=int, help="worker processes")
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = _parse_value(value)
    for flag in ("model", "units", "trace", "workers"):
        value = getattr(args, flag, None)
        if value is not None:
            out[flag] = value
    if getattr(args, "output", None) is not None:
        out["output_model" if args.command == "fit" else "output"] = args.output
    if getattr(args, "seeds", None):
        try:
            out["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"--seeds: {exc}") from exc
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        ctx = load_config(args.command, args.config, _overrides(args))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            code = HANDLERS[args.command](ctx)
        for w in caught:
            say(f"warning: {w.message}")
        return code
    except FluidqError as exc:
        say(f"error[{exc.category}]: {exc}")
        if exc.hint:
            say(f"hint: {exc.hint}")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
