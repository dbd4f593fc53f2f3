"""Command-line front end.

Settings are merged in increasing priority: built-in defaults, the preset's
scenario, the YAML config file, then command-line flags.  Exit codes: 0
success, 2 configuration error, 3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Optional

import numpy as np
import yaml

from .baselines import (fixed_noma_perfect, fixed_noma_statistical,
                        tdma_perfect_solve, tdma_statistical_solve)
from .experiment import (SCHEMES, ExperimentSpec, emit, preset, run_experiment,
                         simulate_statistical)
from .fairness import AlphaSearchSpec, FairnessInfeasibleError, search_alpha
from .model import (ChannelRealization, ConfigError, PowerAllocation,
                    SystemConfig, convert_powers, db_to_linear,
                    sample_channels)
from .numerics import ConvergenceError
from .perfect import solve_perfect
from .statistical import solve_statistical

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "k": 6, "snr_db": 20.0, "beta": 2.0, "distances": None, "r0": 0.9,
    "alpha": 1.0, "fir": None, "eps1": 1e-5, "eps2": 1e-6, "blocks": 10_000,
    "seed": 42, "out": None, "format": "csv", "preset": None, "scheme": None,
    "solver": "ao", "regime": None, "sweep": None, "series": None,
    "strategy": "bisection", "pilot_blocks": 200, "gains": None, "block": 0,
}
_PRESET_KEYS = {"K": "k", "snr_db": "snr_db", "r0": "r0"}


class UsageError(Exception):
    """Invalid settings; maps to exit code 2."""


# ---------------------------------------------------------------------------
# Settings


def _floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _axis(value, name):
    """``axis=v1,v2`` (or a one-entry mapping) -> (axis, values)."""
    if value is None:
        return None, ()
    if isinstance(value, dict):
        if len(value) != 1:
            raise UsageError(f"{name} needs exactly one axis")
        (axis, vals), = value.items()
    else:
        axis, sep, vals = str(value).partition("=")
        if not sep:
            raise UsageError(f"{name} must look like axis=v1,v2,...")
    try:
        return axis.strip(), tuple(_floats(vals))
    except ValueError as exc:
        raise UsageError(f"bad {name} values: {exc}") from None


def load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    except yaml.YAMLError as exc:
        raise UsageError(f"malformed config file: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError("config file must be a flat key-value mapping")
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(map(str, unknown))}")
    return data


def parse_config(args: Optional[argparse.Namespace] = None) -> dict:
    """Merge defaults, preset, config file and flags into one settings dict."""
    flags = {} if args is None else {
        k: v for k, v in vars(args).items() if k in DEFAULTS and v is not None}
    path = None if args is None else getattr(args, "config", None)
    filed = load_config_file(path) if path else {}
    name = flags.get("preset", filed.get("preset"))
    settings = dict(DEFAULTS)
    if name is not None:
        try:
            _, scenario = preset(name)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        settings.update({_PRESET_KEYS[k]: v for k, v in scenario.items()})
    settings.update(filed)
    settings.update(flags)
    return settings


def build_config(s: dict) -> SystemConfig:
    """SystemConfig from merged settings; raises ConfigError on bad values."""
    try:
        K = s["k"]
        if isinstance(K, float) and K.is_integer():
            K = int(K)
        d = None if s["distances"] is None else tuple(_floats(s["distances"]))
        return SystemConfig(K=K, P=db_to_linear(float(s["snr_db"])),
                            beta=float(s["beta"]), distances=d,
                            r0=float(s["r0"]), alpha=float(s["alpha"]),
                            eps1=float(s["eps1"]), eps2=float(s["eps2"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def _schemes(s: dict):
    v = s["scheme"]
    if v is None:
        return None
    out = []
    for item in (v if isinstance(v, (list, tuple)) else [v]):
        out.extend(p.strip() for p in str(item).split(",") if p.strip())
    bad = [x for x in out if x not in SCHEMES]
    if bad:
        raise UsageError(f"unknown scheme(s) {bad}; choose from {SCHEMES}")
    return tuple(out)


def build_spec(s: dict) -> ExperimentSpec:
    """ExperimentSpec from merged settings (preset fields, then explicit ones)."""
    fields = {}
    if s["preset"] is not None:
        spec, _ = preset(s["preset"])
        fields = {f: getattr(spec, f) for f in spec.__dataclass_fields__}
    sweep_axis, sweep_values = _axis(s["sweep"], "sweep")
    series_axis, series_values = _axis(s["series"], "series")
    if sweep_axis:
        fields.update(sweep_axis=sweep_axis, sweep_values=sweep_values)
    elif not fields:
        fields.update(sweep_axis="snr_db", sweep_values=(float(s["snr_db"]),))
    if series_axis:
        fields.update(series_axis=series_axis, series_values=series_values)
    if s["regime"] is not None:
        fields["regime"] = s["regime"]
    schemes = _schemes(s)
    if schemes:
        fields["schemes"] = schemes
    fields.update(blocks=int(s["blocks"]), seed=int(s["seed"]),
                  solver=s["solver"], pilot_blocks=int(s["pilot_blocks"]))
    if s["fir"] is not None:
        fields["fir"] = float(s["fir"])
    try:
        return ExperimentSpec(**fields)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# Output helpers


def _clean(v):
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return float(f"{v:.9g}") if math.isfinite(v) else None
    return v


def _write_json(obj, out) -> None:
    text = json.dumps(_clean(obj), indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _emit_rows(rows, s) -> None:
    if s["out"] is None:
        emit(rows, sys.stdout, s["format"])
    else:
        emit(rows, s["out"], s["format"])


def _single_scheme(s, default="noma-opt") -> str:
    schemes = _schemes(s) or (default,)
    if len(schemes) != 1:
        raise UsageError("this command takes a single --scheme")
    return schemes[0]


# ---------------------------------------------------------------------------
# Commands


def cmd_solve_stat(s: dict) -> None:
    cfg = build_config(s)
    scheme = _single_scheme(s)
    if scheme == "noma-opt":
        rep = solve_statistical(cfg)
    elif scheme == "tdma-opt":
        rep = tdma_statistical_solve(cfg)
    else:
        rep = fixed_noma_statistical(cfg)
    out = {"scheme": scheme, "regime": "statistical", "K": cfg.K,
           "snr_db": float(s["snr_db"]), "r0": cfg.r0, "alpha": cfg.alpha,
           "objective": rep.objective, "sum_throughput": rep.total,
           "jain": rep.jain, "throughputs": rep.per_user}
    alloc = rep.allocation
    if isinstance(alloc, PowerAllocation):
        out["physical_powers"] = convert_powers(alloc, "physical", cfg).array \
            if alloc.kind != "physical" else alloc.array
    else:
        out["slot_powers"] = alloc.array
    out["info"] = {k: v for k, v in rep.info.items()
                   if isinstance(v, (int, float, np.floating, np.integer))}
    _write_json(out, s["out"])


def _channel(s, cfg) -> ChannelRealization:
    if s["gains"] is not None:
        g = _floats(s["gains"])
        if len(g) != cfg.K:
            raise UsageError(f"expected {cfg.K} gains, got {len(g)}")
        try:
            return ChannelRealization.from_gains(g)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return sample_channels(cfg, int(s["seed"]), int(s["block"]))


def cmd_solve_perfect(s: dict) -> None:
    cfg = build_config(s)
    scheme = _single_scheme(s)
    ch = _channel(s, cfg)
    if scheme == "noma-opt":
        rep = solve_perfect(ch, cfg, solver=s["solver"])
        powers = rep.allocation.physical().array
    elif scheme == "tdma-opt":
        rep = tdma_perfect_solve(ch, cfg)
        powers = rep.allocation.array
    else:
        rep = fixed_noma_perfect(ch, cfg)
        powers = rep.allocation.physical().array
    out = {"scheme": scheme, "regime": "perfect", "K": cfg.K,
           "snr_db": float(s["snr_db"]), "alpha": cfg.alpha,
           "gains_sorted": ch.H, "user_of_rank": list(ch.perm),
           "powers": powers, "rates": rep.per_user,
           "objective": rep.objective, "sum_rate": rep.total,
           "jain": rep.jain, "residual": rep.residual,
           "iterations": rep.iterations}
    _write_json(out, s["out"])


def cmd_simulate(s: dict) -> None:
    cfg = build_config(s)
    regime = s["regime"] or "perfect"
    schemes = _schemes(s) or SCHEMES
    if regime == "statistical":
        rows = [simulate_statistical(cfg, sc, int(s["blocks"]), int(s["seed"]))
                for sc in schemes]
    else:
        spec = ExperimentSpec(regime="perfect", sweep_axis="snr_db",
                              sweep_values=(float(s["snr_db"]),),
                              schemes=schemes, blocks=int(s["blocks"]),
                              seed=int(s["seed"]), solver=s["solver"],
                              fir=None if s["fir"] is None else float(s["fir"]),
                              pilot_blocks=int(s["pilot_blocks"]))
        rows = run_experiment(spec, cfg)
    _emit_rows(rows, s)


def cmd_search_alpha(s: dict) -> None:
    cfg = build_config(s)
    if s["fir"] is None:
        raise UsageError("search-alpha needs --fir")
    scheme = _single_scheme(s)
    if scheme == "noma-fixed":
        raise UsageError("the fixed split has no alpha to search")
    try:
        spec = AlphaSearchSpec(FIr=float(s["fir"]), scheme=scheme.split("-")[0],
                               regime=s["regime"] or "statistical",
                               strategy=s["strategy"],
                               pilot_blocks=int(s["pilot_blocks"]),
                               pilot_seed=int(s["seed"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    alpha, rep = search_alpha(spec, cfg)
    _write_json({"scheme": scheme, "regime": spec.regime, "FIr": spec.FIr,
                 "alpha": alpha, "fairness_index": rep.info["fi"],
                 "metric": rep.info["metric"], "objective": rep.objective,
                 "strategy": rep.info["strategy"],
                 "probes": len(rep.info["probes"])}, s["out"])


def cmd_experiment(s: dict) -> None:
    cfg = build_config(s)
    spec = build_spec(s)
    rows = run_experiment(spec, cfg)
    _emit_rows(rows, s)


COMMANDS = {
    "solve-stat": cmd_solve_stat,
    "solve-perfect": cmd_solve_perfect,
    "simulate": cmd_simulate,
    "search-alpha": cmd_search_alpha,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("scenario")
    g.add_argument("--k", type=int, help="number of users (default 6)")
    g.add_argument("--snr-db", type=float, help="transmit SNR in dB (default 20)")
    g.add_argument("--r0", type=float, help="target rate in BPCU (default 0.9)")
    g.add_argument("--alpha", type=float, help="fairness parameter (default 1)")
    g.add_argument("--beta", type=float, help="path-loss exponent (default 2)")
    g.add_argument("--distances", help="comma-separated d_1..d_K, decreasing")
    g.add_argument("--eps1", type=float, help="inner bisection tolerance")
    g.add_argument("--eps2", type=float, help="KKT residual tolerance")
    r = common.add_argument_group("run")
    r.add_argument("--fir", type=float, help="fairness index requirement")
    r.add_argument("--blocks", type=int, help="Monte Carlo blocks (default 10000)")
    r.add_argument("--seed", type=int, help="base seed (default 42)")
    r.add_argument("--scheme", action="append",
                   help="noma-opt, noma-fixed or tdma-opt (repeatable)")
    r.add_argument("--solver", choices=("ao", "baseline"),
                   help="perfect-CSIT NOMA solver")
    r.add_argument("--regime", choices=("statistical", "perfect"))
    r.add_argument("--strategy", choices=("bisection", "grid"),
                   help="alpha search strategy")
    r.add_argument("--pilot-blocks", type=int,
                   help="blocks averaged per alpha probe (perfect regime)")
    r.add_argument("--preset", help="fig1 .. fig7")
    r.add_argument("--sweep", help="axis=v1,v2,... (snr_db, r0, alpha, FIr, K)")
    r.add_argument("--series", help="axis=v1,v2,... (alpha, FIr, K)")
    r.add_argument("--gains", help="comma-separated channel gains (solve-perfect)")
    r.add_argument("--block", type=int, help="block index to sample (solve-perfect)")
    o = common.add_argument_group("io")
    o.add_argument("--config", help="YAML file with flag names as keys")
    o.add_argument("--out", help="output file (default stdout)")
    o.add_argument("--format", choices=("csv", "json-lines"))

    parser = argparse.ArgumentParser(
        prog="alphanoma",
        description="alpha-fair power allocation for downlink NOMA")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve-stat": "optimal powers from channel statistics",
        "solve-perfect": "optimal powers for one channel realization",
        "simulate": "Monte Carlo evaluation at one operating point",
        "search-alpha": "find alpha meeting a fairness requirement",
        "experiment": "run a sweep or a figure preset and emit rows",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = parse_config(args)
        COMMANDS[args.command](settings)
    # FairnessInfeasibleError subclasses ValueError, so it must come first
    except (ConvergenceError, FairnessInfeasibleError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
