"""Choosing alpha to meet a fairness-index requirement.

The achieved Jain index usually grows with alpha while the sum throughput
(or sum rate) shrinks, so the best alpha is the smallest one whose
allocation meets the requirement.  Bisection exploits this; when the probes
contradict the monotone shape the search falls back to a log-spaced grid.

A requirement of exactly 1 is only met in the limit alpha -> inf.  It is
read as "as fair as possible": the probe with the largest index wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .baselines import tdma_perfect_batch, tdma_statistical_solve
from .model import (ChannelRealization, SolveReport, SystemConfig, gain_matrix,
                    jain_rows, utility_rows)
from .perfect import perfect_rates_batch
from .statistical import solve_statistical

__all__ = [
    "AlphaSearchSpec",
    "FairnessInfeasibleError",
    "Probe",
    "evaluate_alpha",
    "search_alpha",
]

SCHEMES = ("noma", "tdma")
REGIMES = ("statistical", "perfect")
STRATEGIES = ("bisection", "grid")
PILOT_STREAM = 1
FI_TOL = 1e-9


class FairnessInfeasibleError(ValueError):
    """No probed alpha reaches the requirement."""

    def __init__(self, FIr: float, max_fi: float, alpha: float):
        super().__init__(f"fairness index {FIr:g} unreachable: best observed "
                         f"{max_fi:.9g} at alpha = {alpha:g}")
        self.FIr = FIr
        self.max_fi = max_fi
        self.alpha = alpha


@dataclass(frozen=True)
class AlphaSearchSpec:
    """What to search for and how.

    ``pilot_blocks`` seeded blocks (stream ``PILOT_STREAM`` of ``pilot_seed``)
    define the averaged Jain index in the perfect regime when no gains are
    supplied.  Bisection stops once ``hi / lo - 1 <= rtol``.
    """

    FIr: float
    scheme: str = "noma"
    regime: str = "statistical"
    alpha_range: tuple = (0.0, 200.0)
    strategy: str = "bisection"
    grid_steps: int = 60
    pilot_blocks: int = 200
    pilot_seed: int = 42
    rtol: float = 1e-3

    def __post_init__(self):
        lo, hi = (float(v) for v in self.alpha_range)
        object.__setattr__(self, "alpha_range", (lo, hi))
        if not 0 < self.FIr <= 1:
            raise ValueError(f"FIr must lie in (0, 1], got {self.FIr}")
        if not 0 <= lo < hi or not math.isfinite(hi):
            raise ValueError(f"alpha_range must satisfy 0 <= lo < hi, got {self.alpha_range}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.grid_steps < 2 or self.pilot_blocks < 1:
            raise ValueError("grid_steps >= 2 and pilot_blocks >= 1 required")

    @property
    def absolute(self) -> bool:
        return self.FIr >= 1.0 - FI_TOL


class Probe(NamedTuple):
    alpha: float
    fi: float
    metric: float
    report: SolveReport


def finite_mean(x) -> float:
    """Mean over the finite entries (residual norms are inf when a rate underflows)."""
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    return float(np.mean(x)) if x.size else float("nan")


def _pilot_gains(spec: AlphaSearchSpec, cfg: SystemConfig, H) -> np.ndarray:
    if H is None:
        return gain_matrix(cfg, spec.pilot_seed, spec.pilot_blocks, PILOT_STREAM)
    if isinstance(H, ChannelRealization):
        return H.H[None, :]
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape[1] != cfg.K or np.any(np.diff(H, axis=1) < 0):
        raise ValueError("gains must have K sorted columns")
    return H


def evaluate_alpha(spec: AlphaSearchSpec, cfg: SystemConfig, alpha: float,
                   H=None) -> Probe:
    """Solve at one alpha and measure (Jain index, sum metric).

    Statistical regime: the allocation's throughputs.  Perfect regime: the
    per-block optimum on each row of ``H`` (pilot blocks by default), with
    Jain index, sum rate and objective averaged over blocks.
    """
    c = cfg.replace(alpha=float(alpha))
    if spec.regime == "statistical":
        solve = solve_statistical if spec.scheme == "noma" else tdma_statistical_solve
        rep = solve(c)
        return Probe(float(alpha), rep.jain, rep.total, rep)
    G = _pilot_gains(spec, cfg, H)
    if spec.scheme == "noma":
        R, sweeps, norms, failed = perfect_rates_batch(G, c.P, c.alpha,
                                                       eps2=c.eps2)
    else:
        R = tdma_perfect_batch(G, c.P, c.alpha)
        sweeps, norms = np.zeros(len(G)), np.zeros(len(G))
        failed = np.zeros(len(G), bool)
    fi = float(np.mean(jain_rows(R)))
    metric = float(np.mean(np.sum(R, axis=1)))
    rep = SolveReport(allocation=None, per_user=np.mean(R, axis=0),
                      objective=float(np.mean(utility_rows(R, c.alpha))),
                      jain=fi, residual=finite_mean(norms),
                      iterations=int(round(float(np.mean(sweeps)))),
                      info={"blocks": len(G), "failures": int(np.sum(failed))})
    return Probe(float(alpha), fi, metric, rep)


def _grid(spec: AlphaSearchSpec) -> np.ndarray:
    lo, hi = spec.alpha_range
    pts = np.geomspace(max(lo, 1e-2), hi, spec.grid_steps)
    return np.unique(np.concatenate([[lo], pts[pts > lo]]))


def _select(probes, spec: AlphaSearchSpec) -> Probe:
    """Best feasible probe: largest metric, ties to the smaller alpha."""
    ordered = sorted(probes, key=lambda p: p.alpha)
    if spec.absolute:
        return max(ordered, key=lambda p: p.fi)
    feasible = [p for p in ordered if p.fi >= spec.FIr - FI_TOL]
    if not feasible:
        best = max(ordered, key=lambda p: p.fi)
        raise FairnessInfeasibleError(spec.FIr, best.fi, best.alpha)
    return max(feasible, key=lambda p: p.metric)


def _monotone(probes) -> bool:
    fis = [p.fi for p in sorted(probes, key=lambda p: p.alpha)]
    return all(b >= a - FI_TOL for a, b in zip(fis, fis[1:]))


def search_alpha(spec: AlphaSearchSpec, cfg: SystemConfig, H=None):
    """Return ``(alpha, report)`` for the best alpha meeting ``spec.FIr``.

    ``report.info`` records the probes and the strategy that produced the
    answer.  Raises FairnessInfeasibleError when no probe is feasible.
    """
    if spec.FIr < 1.0 / cfg.K - FI_TOL:
        raise ValueError(f"FIr must be at least 1/K = {1.0 / cfg.K:g}")
    cache = {}

    def probe(a):
        a = float(a)
        if a not in cache:
            cache[a] = evaluate_alpha(spec, cfg, a, H)
        return cache[a]

    lo, hi = spec.alpha_range
    used = spec.strategy
    if used == "bisection":
        p_lo, p_hi = probe(lo), probe(hi)
        if p_lo.fi >= spec.FIr - FI_TOL and not spec.absolute:
            pass
        elif spec.absolute or p_hi.fi < spec.FIr - FI_TOL:
            # the top of the range is the best a monotone curve can offer
            pass
        else:
            a, b = lo, hi
            a_pos = max(lo, 1e-2)
            if a_pos < b and probe(a_pos).fi < spec.FIr - FI_TOL:
                a = a_pos
            elif a_pos < b:
                b = a_pos
            while b / max(a, 1e-300) - 1.0 > spec.rtol and a > 0:
                mid = math.sqrt(a * b)
                if probe(mid).fi >= spec.FIr - FI_TOL:
                    b = mid
                else:
                    a = mid
                if not _monotone(cache.values()):
                    break
            if a == 0 and b > 0:
                # between 0 and the smallest positive grid point: plain halving
                while b - a > spec.rtol * b:
                    mid = 0.5 * (a + b)
                    if probe(mid).fi >= spec.FIr - FI_TOL:
                        b = mid
                    else:
                        a = mid
                    if not _monotone(cache.values()):
                        break
        if not _monotone(cache.values()):
            used = "grid"
    if used == "grid":
        for a in _grid(spec):
            probe(a)
    best = _select(cache.values(), spec)
    best.report.info.update(
        strategy=used, fi=best.fi, metric=best.metric,
        probes=[(p.alpha, p.fi, p.metric)
                for p in sorted(cache.values(), key=lambda p: p.alpha)])
    return best.alpha, best.report
