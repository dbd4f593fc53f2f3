"""Reference schemes: fixed-power NOMA and alpha-fair TDMA.

TDMA splits each block into K equal slots.  With statistical CSIT every user
must still deliver r0 bits per channel use on average while transmitting a
fraction 1/K of the time, so its per-slot target is ``K r0`` and its
throughput is ``r0 exp(-(2**(K r0) - 1) d_k^b / P_k)``.  With perfect CSIT
user k gets ``ln(1 + H_k P_k) / K`` nats per channel use.  In both regimes
the slot powers satisfy ``sum_k P_k / K <= P``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (ChannelRealization, CumulativePowers, PowerAllocation,
                    SolveReport, SystemConfig, jain_index,
                    outage_probability_maxform, rates, utility_sum)
from .numerics import ConvexProgram, golden_section_max, minimize_convex
from .statistical import (GRID_STEPS, _G, concave_waterfill,
                          exp_penalty_program, reciprocal_budget_powers)

__all__ = [
    "TdmaAllocation",
    "fixed_noma_perfect",
    "fixed_noma_powers",
    "fixed_noma_statistical",
    "tdma_perfect_batch",
    "tdma_perfect_solve",
    "tdma_statistical_solve",
    "waterfill",
]


@dataclass(frozen=True)
class TdmaAllocation:
    """Per-slot powers; the time-averaged power is ``sum(powers) / K``."""

    powers: tuple

    def __post_init__(self):
        v = tuple(float(x) for x in np.ravel(self.powers))
        if any(x < 0 or not np.isfinite(x) for x in v):
            raise ValueError("slot powers must be finite and nonnegative")
        object.__setattr__(self, "powers", v)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.powers, dtype=float)

    def average_power(self) -> float:
        return float(np.mean(self.array))


def _jain(x) -> float:
    return jain_index(x) if np.any(np.asarray(x) > 0) else float("nan")


# ---------------------------------------------------------------------------
# Fixed-power NOMA


def fixed_noma_powers(cfg: SystemConfig) -> PowerAllocation:
    """``P~_k = 2**(K-k) P / (2**K - 1)``: each user gets twice the next one's power."""
    K = cfg.K
    shares = 2.0 ** np.arange(K - 1, -1, -1) / (2.0 ** K - 1.0)
    powers = cfg.P * shares
    tail = np.concatenate([np.cumsum(powers[::-1])[::-1][1:], [0.0]])
    if np.any(powers - cfg.rhat0 * tail <= 0):
        warnings.warn("fixed NOMA split violates the SIC power ordering "
                      "(needs 2**r0 - 1 <= 1); affected users are always in "
                      "outage", RuntimeWarning, stacklevel=2)
    return PowerAllocation("physical", powers)


def fixed_noma_statistical(cfg: SystemConfig) -> SolveReport:
    """Throughputs of the fixed split using the general outage expression.

    The split need not satisfy the equivalent-power ordering, so each outage
    probability takes the max over all SIC stages instead of the last one.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        alloc = fixed_noma_powers(cfg)
    F = np.array([cfg.r0 * (1.0 - outage_probability_maxform(k, alloc, cfg))
                  for k in range(1, cfg.K + 1)])
    return SolveReport(allocation=alloc, per_user=F,
                       objective=utility_sum(F, cfg.alpha), jain=_jain(F))


def fixed_noma_perfect(H, cfg: SystemConfig) -> SolveReport:
    """Rates of the fixed split, largest power to the weakest channel."""
    h = H.H if isinstance(H, ChannelRealization) else np.asarray(H, float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        alloc = fixed_noma_powers(cfg.replace(K=h.size, distances=None,
                                              check_gamma=False))
    b = CumulativePowers.from_physical(alloc.array)
    R = rates(b, h)
    return SolveReport(allocation=b, per_user=R,
                       objective=utility_sum(R, cfg.alpha), jain=_jain(R))


def fixed_noma_perfect_batch(H, P: float) -> np.ndarray:
    """Rates (B, K) of the fixed split for sorted gains ``H`` of shape (B, K)."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    K = H.shape[1]
    shares = 2.0 ** np.arange(K - 1, -1, -1) / (2.0 ** K - 1.0)
    b = np.concatenate([np.cumsum((P * shares)[::-1])[::-1], [0.0]])
    return np.log1p(H * (b[:-1] - b[1:]) / (1.0 + H * b[1:]))


# ---------------------------------------------------------------------------
# TDMA, statistical CSIT


def tdma_outage_scale(cfg: SystemConfig) -> np.ndarray:
    """``c_k = (2**(K r0) - 1) d_k^b``: user k's throughput is ``r0 exp(-c_k/P_k)``."""
    return (2.0 ** (cfg.K * cfg.r0) - 1.0) * cfg.path_loss


def _tdma_report(x, cfg, c, **info) -> SolveReport:
    F = np.where(x > 0, cfg.r0 * np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    return SolveReport(allocation=TdmaAllocation(x * c), per_user=F,
                       objective=utility_sum(F, cfg.alpha), jain=_jain(F),
                       info=info)


def _tdma_search(cfg, a, w, steps):
    """alpha < 1 search over which user sits in the convex region.

    Work is cheaper for later users (``w`` decreasing), so an optimal
    allocation is nondecreasing in k.  Users before ``j`` get nothing and
    user ``j`` either joins the concave tail or takes a value below the
    convexity threshold (gridded and refined by golden section) while the
    users after it solve the tail.
    """
    K = w.size
    thr = a / 2.0
    P = cfg.P
    best_v, best_x = -math.inf, None
    for j in range(K):
        tail_w = w[j + 1:]
        floor = thr * float(np.sum(tail_w))
        if floor > P:
            continue
        top = P / w[j] if j == K - 1 else min(thr, (P - floor) / w[j])

        def assemble(xj):
            xj = np.atleast_1d(np.clip(xj, 0.0, top))
            out = np.zeros((xj.size, K))
            out[:, j] = xj
            if tail_w.size:
                left = np.maximum(P - w[j] * xj, floor)
                out[:, j + 1:] = concave_waterfill(a, tail_w, left)
            return out

        def value(xj):
            return np.sum(_G(assemble(xj), a), axis=1)

        grid = np.linspace(0.0, top, steps)
        vals = value(grid)
        i = int(np.argmax(vals))
        xj, v = float(grid[i]), float(vals[i])
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, steps - 1)]
        if hi > lo:
            q, _ = golden_section_max(lambda t: float(value(t)[0]), lo, hi,
                                      xtol=1e-12 * max(1.0, hi))
            vq = float(value(q)[0])
            if vq > v:
                xj, v = q, vq
        if v > best_v:
            best_v, best_x = v, assemble(xj)[0]
        # every active user above the threshold
        if thr * float(np.sum(w[j:])) <= P:
            x = np.zeros(K)
            x[j:] = concave_waterfill(a, w[j:], P)[0]
            v = float(np.sum(_G(x, a)))
            if v > best_v:
                best_v, best_x = v, x
    return best_x


def tdma_statistical_solve(cfg: SystemConfig, steps: int = GRID_STEPS
                           ) -> SolveReport:
    """alpha-fair TDMA slot powers from channel statistics."""
    c = tdma_outage_scale(cfg)
    # normalized x_k = P_k / c_k: throughput r0 exp(-1/x_k), budget w . x <= P
    w = c / cfg.K
    alpha = cfg.alpha
    if alpha == 1:
        x = reciprocal_budget_powers(w, cfg.P)
    elif alpha > 1:
        x0 = 0.9 * reciprocal_budget_powers(w, cfg.P)
        x = minimize_convex(exp_penalty_program(w, cfg.P, alpha), x0,
                            tol=1e-10).x
    else:
        x = _tdma_search(cfg, 1.0 - alpha, w, steps)
    return _tdma_report(np.asarray(x, dtype=float), cfg, c)


# ---------------------------------------------------------------------------
# TDMA, perfect CSIT


def waterfill(H, total: float) -> np.ndarray:
    """``p_k = max(0, mu - 1/H_k)`` with ``sum p = total``."""
    h = np.asarray(H, dtype=float)
    inv = 1.0 / h
    srt = np.sort(inv)
    mu = srt[0] + total
    for m in range(h.size, 0, -1):
        mu = (total + float(np.sum(srt[:m]))) / m
        if mu > srt[m - 1]:
            break
    return np.maximum(mu - inv, 0.0)


def _tdma_rate_program(h, P, alpha):
    """Convex program in the slot powers; same minimizer as ``-sum u_alpha(R)``.

    For alpha > 1 the utility sum spans hundreds of decades on weak channels,
    so the objective is replaced by ``log(sum R_k^(1-alpha)) / (alpha-1)``.
    """
    K = h.size

    def parts(p):
        r = np.log1p(h * p) / K
        dr = h / (K * (1.0 + h * p))
        return r, dr, -K * dr * dr

    if alpha > 1:
        a = alpha - 1.0

        def f(p):
            r = np.log1p(h * p) / K
            if np.any(r <= 0):
                return math.inf
            u = -a * np.log(r)
            m = float(np.max(u))
            return (m + math.log(float(np.sum(np.exp(u - m))))) / a

        def soft(p):
            r, dr, d2r = parts(p)
            u = -a * np.log(r)
            e = np.exp(u - np.max(u))
            return r, dr, d2r, e / np.sum(e)

        def grad(p):
            r, dr, _, s = soft(p)
            return -s * dr / r

        def hess(p):
            r, dr, d2r, s = soft(p)
            gu = -a * dr / r
            h2 = -a * (d2r * r - dr * dr) / (r * r)
            sg = s * gu
            return (np.diag(s * h2 + s * gu * gu) - np.outer(sg, sg)) / a
    else:
        def f(p):
            r = np.log1p(h * p) / K
            if np.any(r <= 0):
                return math.inf
            if alpha == 1:
                return -float(np.sum(np.log(r)))
            return -float(np.sum(r ** (1.0 - alpha))) / (1.0 - alpha)

        def grad(p):
            r, dr, _ = parts(p)
            return -(r ** -alpha) * dr

        def hess(p):
            r, dr, d2r = parts(p)
            return -np.diag(-alpha * r ** (-alpha - 1.0) * dr * dr
                            + r ** -alpha * d2r)

    return ConvexProgram(objective=f, gradient=grad, hessian=hess,
                         A=np.ones((1, K)), c=np.array([K * P]),
                         lower=np.zeros(K))


def tdma_perfect_solve(H, cfg: SystemConfig) -> SolveReport:
    """alpha-fair TDMA slot powers for one channel realization.

    alpha = 0 is water-filling over the slot budget ``K P``; otherwise the
    concave program is solved with the barrier method.
    """
    h = H.H if isinstance(H, ChannelRealization) else np.asarray(H, float)
    K = h.size
    if cfg.alpha == 0:
        p = waterfill(h, K * cfg.P)
        iters = 0
    else:
        sol = minimize_convex(_tdma_rate_program(h, cfg.P, cfg.alpha),
                              np.full(K, 0.9 * cfg.P), tol=1e-12)
        p, iters = sol.x, sol.iterations
    R = np.log1p(h * p) / K
    return SolveReport(allocation=TdmaAllocation(p), per_user=R,
                       objective=utility_sum(R, cfg.alpha), jain=_jain(R),
                       iterations=iters)


def _rate_from_price(logH, K, alpha, log_lam):
    """Per-user rate solving ``R^-alpha exp(-K R) = K lam / H``.

    With ``R = (alpha/K) v`` this is ``v + ln v = z``; Newton runs on
    ``s = ln v`` where the equation ``e^s + s = z`` is convex and monotone.
    """
    z = (logH - math.log(K) - log_lam) / alpha - math.log(alpha / K)
    s = np.where(z > 1.0, np.log(np.maximum(z - np.log(np.maximum(z, 1.0)), 1e-300)), z)
    for _ in range(100):
        es = np.exp(s)
        step = (es + s - z) / (es + 1.0)
        s = s - step
        if np.all(np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(s))):
            break
    return (alpha / K) * np.exp(s)


def tdma_perfect_batch(H, P: float, alpha: float) -> np.ndarray:
    """Optimal TDMA rates (B, K) for gains ``H`` of shape (B, K).

    Solves the same problem as :func:`tdma_perfect_solve` through its dual:
    for a power price ``lam`` each user's rate follows in closed form and
    ``lam`` is bisected (in log scale) until the slot budget ``K P`` binds.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Bn, K = H.shape
    if alpha == 0:
        p = np.stack([waterfill(h, K * P) for h in H])
        return np.log1p(H * p) / K
    logH = np.log(H)
    budget = K * P

    def spend(t):
        R = _rate_from_price(logH, K, alpha, t[:, None])
        return R, np.sum(np.expm1(K * R) / H, axis=1)

    lo = np.full(Bn, -1.0)
    hi = np.full(Bn, 1.0)
    for _ in range(200):
        _, s = spend(lo)
        low_ok = s >= budget
        _, s = spend(hi)
        high_ok = s <= budget
        if np.all(low_ok) and np.all(high_ok):
            break
        lo = np.where(low_ok, lo, lo - 2.0 * (hi - lo))
        hi = np.where(high_ok, hi, hi + 2.0 * (hi - lo))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        live = (lo < mid) & (mid < hi)
        if not np.any(live):
            break
        _, s = spend(mid)
        over = s > budget
        lo = np.where(live & over, mid, lo)
        hi = np.where(live & ~over, mid, hi)
    R, _ = spend(hi)
    return R
