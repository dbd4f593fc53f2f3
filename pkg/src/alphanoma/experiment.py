"""Monte Carlo experiment harness, figure presets and row emission.

A run sweeps one parameter (``sweep_axis``) and, optionally, draws one curve
per value of a second parameter (``series_axis``).  Each (scheme, series,
sweep) triple becomes one :class:`AggregateRow`.

Statistical-CSIT rows need no sampling: the allocation depends only on the
channel statistics and the throughput is exact, so they report one block
with zero standard error.  Perfect-CSIT rows solve every block and average.
All blocks of a run share the same gains (stream 0 of ``seed``) so curves are
compared on common random numbers; alpha searches use separate pilot blocks
(stream 1).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .baselines import (TdmaAllocation, fixed_noma_perfect_batch,
                        fixed_noma_statistical, tdma_perfect_batch,
                        tdma_statistical_solve)
from .fairness import (AlphaSearchSpec, FairnessInfeasibleError, finite_mean,
                       search_alpha)
from .model import (PowerAllocation, SystemConfig, block_rng, convert_powers,
                    db_to_linear, exponential_gains, gain_matrix, jain_index,
                    jain_rows, outage_events, utility_rows, utility_sum)
from .numerics import ConvergenceError
from .perfect import perfect_rates_batch, solve_baseline
from .statistical import solve_statistical

__all__ = [
    "AggregateRow",
    "COLUMNS",
    "ExperimentSpec",
    "PRESETS",
    "emit",
    "preset",
    "read_rows",
    "run_experiment",
    "simulate_statistical",
]

SCHEMES = ("noma-opt", "noma-fixed", "tdma-opt")
AXES = ("snr_db", "r0", "alpha", "FIr", "K")
SERIES_AXES = ("alpha", "FIr", "K")
FORMATS = ("csv", "json-lines")
COLUMNS = ("scheme", "regime", "sweep_axis", "sweep_value", "objective_mean",
           "metric_mean", "metric_units", "jain_mean", "jain_stderr",
           "metric_stderr", "iterations_mean", "residual_mean", "blocks",
           "failures", "seed")
EVAL_STREAM = 0


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: a sweep, optional series, schemes and sampling.

    ``fir`` fixes a fairness requirement for every row (alpha is then found
    per point by :func:`search_alpha`); it is ignored when FIr is the sweep
    or series axis.
    """

    regime: str = "statistical"
    sweep_axis: str = "snr_db"
    sweep_values: tuple = (20.0,)
    series_axis: Optional[str] = None
    series_values: tuple = ()
    schemes: tuple = SCHEMES
    blocks: int = 10_000
    seed: int = 42
    solver: str = "ao"
    fir: Optional[float] = None
    pilot_blocks: int = 200
    preset: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "sweep_values",
                           tuple(float(v) for v in self.sweep_values))
        object.__setattr__(self, "series_values",
                           tuple(float(v) for v in self.series_values))
        object.__setattr__(self, "schemes", tuple(self.schemes))
        if self.regime not in ("statistical", "perfect"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.sweep_axis not in AXES:
            raise ValueError(f"sweep axis must be one of {AXES}")
        if not self.sweep_values or not all(map(math.isfinite, self.sweep_values)):
            raise ValueError("sweep values must be finite and nonempty")
        if self.series_axis is not None:
            if self.series_axis not in SERIES_AXES:
                raise ValueError(f"series axis must be one of {SERIES_AXES}")
            if self.series_axis == self.sweep_axis:
                raise ValueError("series and sweep axes must differ")
            if not self.series_values or not all(map(math.isfinite, self.series_values)):
                raise ValueError("series values must be finite and nonempty")
        if not self.schemes or any(s not in SCHEMES for s in self.schemes):
            raise ValueError(f"schemes must be a nonempty subset of {SCHEMES}")
        if int(self.blocks) < 1 or int(self.blocks) != self.blocks:
            raise ValueError("blocks must be a positive integer")
        if self.solver not in ("ao", "baseline"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.pilot_blocks < 1:
            raise ValueError("pilot_blocks must be >= 1")


@dataclass(frozen=True)
class AggregateRow:
    scheme: str
    regime: str
    sweep_axis: str
    sweep_value: float
    objective_mean: float
    metric_mean: float
    metric_units: str
    jain_mean: float
    jain_stderr: float
    metric_stderr: float
    iterations_mean: float
    residual_mean: float
    blocks: int
    failures: int
    seed: int


# ---------------------------------------------------------------------------
# Presets

_SNR_GRID = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
_FIR_GRID = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
# Gamma_k must decrease: 2**r0 < 1.5**beta = 2.25 with the default distances
_R0_GRID = tuple(round(0.1 * i, 1) for i in range(1, 12))

PRESETS = {
    # sum throughput and FI vs r0 for three alphas
    "fig1": dict(regime="statistical", sweep_axis="r0", sweep_values=_R0_GRID,
                 series_axis="alpha", series_values=(100.0, 1.0, 0.1),
                 config=dict(K=6, snr_db=20.0)),
    # sum throughput vs SNR at two fairness requirements
    "fig2": dict(regime="statistical", sweep_axis="snr_db",
                 sweep_values=_SNR_GRID, series_axis="FIr",
                 series_values=(0.5, 1.0), schemes=("noma-opt", "tdma-opt"),
                 config=dict(K=6, r0=0.9)),
    # sum throughput vs FIr for two user counts
    "fig3": dict(regime="statistical", sweep_axis="FIr", sweep_values=_FIR_GRID,
                 series_axis="K", series_values=(5.0, 6.0),
                 schemes=("noma-opt", "tdma-opt"),
                 config=dict(r0=0.9, snr_db=20.0)),
    # convergence speed of AO vs the barrier baseline
    "fig4": dict(regime="perfect", sweep_axis="alpha",
                 sweep_values=(1.0, 2.0, 5.0), series_axis="K",
                 series_values=(4.0, 8.0), schemes=("noma-opt",),
                 config=dict(snr_db=20.0)),
    # ergodic sum rate and average FI vs SNR for three alphas
    "fig5": dict(regime="perfect", sweep_axis="snr_db", sweep_values=_SNR_GRID,
                 series_axis="alpha", series_values=(100.0, 1.0, 0.5),
                 config=dict(K=5)),
    # ergodic sum rate vs SNR at two fairness requirements
    "fig6": dict(regime="perfect", sweep_axis="snr_db", sweep_values=_SNR_GRID,
                 series_axis="FIr", series_values=(0.6, 1.0),
                 schemes=("noma-opt", "tdma-opt"), config=dict(K=5)),
    # ergodic sum rate vs FIr for three user counts
    "fig7": dict(regime="perfect", sweep_axis="FIr", sweep_values=_FIR_GRID,
                 series_axis="K", series_values=(4.0, 5.0, 6.0),
                 schemes=("noma-opt", "tdma-opt"), config=dict(snr_db=20.0)),
}


def preset(name: str, **overrides):
    """Return ``(ExperimentSpec, config overrides)`` for a named preset."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    fields = dict(PRESETS[name])
    config = dict(fields.pop("config"))
    fields.update(overrides)
    return ExperimentSpec(preset=name, **fields), config


# ---------------------------------------------------------------------------
# Running


def _apply(cfg: SystemConfig, axis: str, value: float) -> SystemConfig:
    if axis == "snr_db":
        return cfg.replace(P=db_to_linear(value))
    if axis == "r0":
        return cfg.replace(r0=value)
    if axis == "alpha":
        return cfg.replace(alpha=value)
    if axis == "K":
        if value != int(value):
            raise ValueError(f"K must be an integer, got {value}")
        return cfg.replace(K=int(value))
    return cfg


def _fmt(v: float) -> str:
    return f"{v:g}"


def _label(scheme: str, axis: Optional[str], value: Optional[float]) -> str:
    return scheme if axis is None else f"{scheme}[{axis}={_fmt(value)}]"


def _stderr(x: np.ndarray) -> float:
    x = x[np.isfinite(x)]
    if x.size < 2:
        return 0.0
    return float(np.std(x, ddof=1) / math.sqrt(x.size))


def _failed_row(label, spec, value, units, blocks) -> AggregateRow:
    nan = float("nan")
    return AggregateRow(label, spec.regime, spec.sweep_axis, value, nan, nan,
                        units, nan, nan, nan, nan, nan, blocks, blocks,
                        spec.seed)


def _search(spec, cfg, scheme, fir):
    strategy = "grid" if (scheme == "tdma-opt" and spec.regime == "statistical") \
        else "bisection"
    s = AlphaSearchSpec(FIr=fir, scheme=scheme.split("-")[0], regime=spec.regime,
                        strategy=strategy, pilot_blocks=spec.pilot_blocks,
                        pilot_seed=spec.seed)
    alpha, _ = search_alpha(s, cfg)
    return alpha


def _statistical_row(spec, cfg, scheme, label, value) -> AggregateRow:
    if scheme == "noma-opt":
        rep = solve_statistical(cfg)
    elif scheme == "tdma-opt":
        rep = tdma_statistical_solve(cfg)
    else:
        rep = fixed_noma_statistical(cfg)
    return AggregateRow(label, spec.regime, spec.sweep_axis, value,
                        rep.objective, rep.total, "BPCU", rep.jain, 0.0, 0.0,
                        float(rep.iterations), float(rep.residual), 1, 0,
                        spec.seed)


def _perfect_rates(spec, cfg, scheme, G):
    """Per-block rates, iteration counts, residual norms and failure flags."""
    B = G.shape[0]
    zeros = np.zeros(B)
    if scheme == "noma-fixed":
        return fixed_noma_perfect_batch(G, cfg.P), zeros, zeros, zeros.astype(bool)
    if scheme == "tdma-opt":
        return tdma_perfect_batch(G, cfg.P, cfg.alpha), zeros, zeros, zeros.astype(bool)
    if spec.solver == "ao" or cfg.alpha == 0:
        return perfect_rates_batch(G, cfg.P, cfg.alpha, eps2=cfg.eps2)
    R = np.full(G.shape, np.nan)
    its, res = np.zeros(B), np.full(B, np.nan)
    failed = np.zeros(B, dtype=bool)
    for i, h in enumerate(G):
        try:
            rep = solve_baseline(h, cfg)
        except (ConvergenceError, ValueError):
            failed[i] = True
            continue
        R[i], its[i], res[i] = rep.per_user, rep.iterations, rep.residual
    return R, its, res, failed


def _perfect_row(spec, cfg, scheme, label, value, G) -> AggregateRow:
    R, its, res, failed = _perfect_rates(spec, cfg, scheme, G)
    ok = ~np.any(np.isnan(R), axis=1)
    Rk = R[ok]
    obj = utility_rows(Rk, cfg.alpha)
    total = np.sum(Rk, axis=1)
    jain = jain_rows(Rk)
    return AggregateRow(label, spec.regime, spec.sweep_axis, value,
                        float(np.mean(obj)), float(np.mean(total)), "NPCU",
                        float(np.mean(jain)), _stderr(jain), _stderr(total),
                        float(np.mean(its[ok])), finite_mean(res[ok]),
                        int(G.shape[0]), int(np.sum(failed)), spec.seed)


def run_experiment(spec: ExperimentSpec, cfg: Optional[SystemConfig] = None,
                   progress=None) -> list:
    """Evaluate every (scheme, series, sweep) point; deterministic in ``spec.seed``.

    Solver failures are counted in the row's ``failures`` column (an
    unreachable fairness requirement fails the whole row) and the run
    continues.  ``progress`` is called with each finished row.
    """
    cfg = cfg or SystemConfig()
    series = [(spec.series_axis, v) for v in spec.series_values] or [(None, None)]
    gains = {}
    rows = []
    for scheme in spec.schemes:
        for s_axis, s_val in series:
            # the fixed split has no alpha; it is drawn once unless the series changes K
            if scheme == "noma-fixed" and s_axis == "FIr":
                if s_val != spec.series_values[0]:
                    continue
                label = scheme
            else:
                label = _label(scheme, s_axis, s_val)
            base = _apply(cfg, s_axis, s_val) if s_axis else cfg
            for value in spec.sweep_values:
                c = _apply(base, spec.sweep_axis, value)
                fir = (value if spec.sweep_axis == "FIr" else
                       s_val if s_axis == "FIr" else spec.fir)
                units = "BPCU" if spec.regime == "statistical" else "NPCU"
                n = 1 if spec.regime == "statistical" else spec.blocks
                if fir is not None and scheme != "noma-fixed":
                    try:
                        c = c.replace(alpha=_search(spec, c, scheme, fir))
                    except FairnessInfeasibleError:
                        row = _failed_row(label, spec, value, units, n)
                        rows.append(row)
                        if progress:
                            progress(row)
                        continue
                if spec.regime == "statistical":
                    row = _statistical_row(spec, c, scheme, label, value)
                else:
                    key = (c.K, c.distances, c.beta)
                    if key not in gains:
                        gains[key] = gain_matrix(c, spec.seed, spec.blocks,
                                                 EVAL_STREAM)
                    row = _perfect_row(spec, c, scheme, label, value, gains[key])
                rows.append(row)
                if progress:
                    progress(row)
    return rows


def simulate_statistical(cfg: SystemConfig, scheme: str, blocks: int,
                         seed: int, chunk: int = 100_000) -> AggregateRow:
    """Monte Carlo throughput of a statistical-CSIT allocation.

    Gains are drawn in physical user order (the decoding order is fixed by
    distance) and each user's outage is counted directly from its SINR at
    every SIC stage.  The Jain index is that of the per-user mean throughputs.
    """
    if scheme == "noma-opt":
        alloc = solve_statistical(cfg).allocation
    elif scheme == "tdma-opt":
        alloc = tdma_statistical_solve(cfg).allocation
    else:
        alloc = fixed_noma_statistical(cfg).allocation
    if isinstance(alloc, PowerAllocation) and alloc.kind != "physical":
        alloc = convert_powers(alloc, "physical", cfg)
    served = np.zeros(cfg.K)
    totals = []
    done = 0
    while done < blocks:
        n = min(chunk, blocks - done)
        G = exponential_gains(block_rng(seed, done // chunk, EVAL_STREAM + 2),
                              cfg, size=n)
        if isinstance(alloc, TdmaAllocation):
            out = G * alloc.array < 2.0 ** (cfg.K * cfg.r0) - 1.0
        else:
            out = outage_events(alloc, G, cfg.r0)
        ok = cfg.r0 * ~out
        served += ok.sum(axis=0)
        totals.append(ok.sum(axis=1))
        done += n
    tot = np.concatenate(totals).astype(float)
    F = served / blocks
    jain = jain_index(F) if np.any(F > 0) else float("nan")
    return AggregateRow(scheme, "statistical", "snr_db",
                        10.0 * math.log10(cfg.P), utility_sum(F, cfg.alpha),
                        float(np.mean(tot)), "BPCU", jain, 0.0, _stderr(tot),
                        0.0, 0.0, int(blocks), 0, int(seed))


# ---------------------------------------------------------------------------
# Emission


def _render(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def _json_value(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return float(f"{v:.9g}") if math.isfinite(v) else None
    return v


def emit(rows: Sequence[AggregateRow], path, fmt: str = "csv") -> None:
    """Write rows as CSV (header + one line per row) or JSON lines.

    ``path`` may be a filename or an open text stream.  Numbers carry nine
    significant digits and lines end with a single LF.
    """
    if not rows:
        raise ValueError("no rows to emit")
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    if hasattr(path, "write"):
        _write(rows, path, fmt)
        return
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        _write(rows, fh, fmt)


def _write(rows, fh, fmt):
    if fmt == "csv":
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            d = asdict(r)
            w.writerow([_render(d[c]) for c in COLUMNS])
    else:
        for r in rows:
            d = asdict(r)
            fh.write(json.dumps({c: _json_value(d[c]) for c in COLUMNS}) + "\n")


def read_rows(path, fmt: str = "csv") -> list:
    """Parse a file written by :func:`emit` back into AggregateRow objects."""
    out = []
    with open(os.fspath(path), newline="", encoding="utf-8") as fh:
        if fmt == "csv":
            records = list(csv.DictReader(fh))
        else:
            records = [json.loads(line) for line in fh if line.strip()]
    for rec in records:
        kw = {}
        for c in COLUMNS:
            v = rec[c]
            if c in ("blocks", "failures", "seed"):
                kw[c] = int(v)
            elif c in ("scheme", "regime", "sweep_axis", "metric_units"):
                kw[c] = v
            else:
                kw[c] = float("nan") if v is None else float(v)
        out.append(AggregateRow(**kw))
    return out
