"""Sum-throughput maximization with alpha-fairness under statistical CSIT.

Decision variables are the normalized powers ``P_k`` (see :mod:`.model`), in
which user k's throughput is ``r0 exp(-1/P_k)``.  The feasible set is

* the budget ``w . P <= P`` with ``w_k = r^0 Gamma_k``;
* the SIC ordering ``d_1^b P_1 >= d_2^b P_2 >= ... >= d_K^b P_K``;
* ``P_k >= 0``.

For ``alpha < 1`` each utility is a multiple of ``G(x) = exp(-(1-alpha)/x)``,
convex below ``(1-alpha)/2`` and concave above it.  The optimum then has a
pinned block: the first ``k0`` users sit below the threshold with equal
``d_k^b P_k``, and the remaining users solve a concave program.  The solver
searches ``k0`` exhaustively and the first power ``P_1`` on a grid followed by
golden-section refinement.

For ``alpha = 1`` the optimum is closed form, and for ``alpha > 1`` the
problem is convex.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import lambertw

from .model import (PowerAllocation, SolveReport, SystemConfig, convert_powers,
                    jain_index, throughputs, utility_sum)
from .numerics import (ConvexProgram, golden_section_max, minimize_convex)

__all__ = [
    "InfeasibleError",
    "MembershipError",
    "StructuredCandidate",
    "concave_waterfill",
    "solve_alpha_eq_1",
    "solve_alpha_gt_1",
    "solve_alpha_lt_1",
    "solve_fp4",
    "solve_statistical",
    "statistical_objective",
]

GRID_STEPS = 400


class InfeasibleError(ValueError):
    """No allocation satisfies the structural constraints."""


class MembershipError(ValueError):
    """``(k0, P1)`` lies outside the set of admissible structures."""


class StructuredCandidate(NamedTuple):
    k0: int
    P1: float
    tail: np.ndarray
    value: float


def statistical_objective(normP, cfg: SystemConfig, alpha: Optional[float] = None
                          ) -> float:
    """Sum of alpha-utilities of the throughputs of a normalized allocation."""
    a = cfg.alpha if alpha is None else alpha
    return utility_sum(throughputs(normP, cfg.r0), a)


def _report(x: np.ndarray, cfg: SystemConfig, **info) -> SolveReport:
    alloc = PowerAllocation("normalized", x)
    F = throughputs(x, cfg.r0)
    info.setdefault("physical", convert_powers(alloc, "physical", cfg).array)
    return SolveReport(allocation=alloc, per_user=F,
                       objective=utility_sum(F, cfg.alpha),
                       jain=jain_index(F) if np.any(F > 0) else float("nan"),
                       info=info)


# ---------------------------------------------------------------------------
# alpha = 1


def reciprocal_budget_powers(w: np.ndarray, P: float) -> np.ndarray:
    """Minimizer of ``sum 1/x_k`` subject to ``w . x <= P``: ``x_k = 1/sqrt(omega w_k)``."""
    sw = np.sqrt(np.asarray(w, dtype=float))
    root_omega = float(np.sum(sw)) / P
    return 1.0 / (root_omega * sw)


def solve_alpha_eq_1(cfg: SystemConfig) -> SolveReport:
    """Proportional-fair optimum in closed form.

    Stationarity of ``sum 1/P_k + omega (w . P - P)`` gives
    ``P_k = 1/sqrt(omega w_k)`` with ``sqrt(omega) = sum_k sqrt(w_k) / P``.
    The ordering holds automatically because ``d_k^b P_k`` is proportional
    to ``sqrt(d_k^b) (r^0+1)^(-(k-1)/2)``.
    """
    w = cfg.budget_weights
    x = reciprocal_budget_powers(w, cfg.P)
    omega = (float(np.sum(np.sqrt(w))) / cfg.P) ** 2
    return _report(x, cfg, omega=omega, regime="alpha=1")


def reciprocal_power_program(cfg: SystemConfig) -> ConvexProgram:
    """``min sum 1/P_k`` under budget and ordering, as a generic program."""
    w = cfg.budget_weights
    A, c = _ordering_rows(cfg.path_loss)
    A = np.vstack([w[None, :], A])
    c = np.concatenate([[cfg.P], c])
    return ConvexProgram(
        objective=lambda x: float(np.sum(1.0 / x)),
        gradient=lambda x: -1.0 / x**2,
        hessian=lambda x: np.diag(2.0 / x**3),
        A=A, c=c, lower=np.zeros(cfg.K))


def _ordering_rows(pl: np.ndarray):
    """Rows encoding ``pl_{k+1} x_{k+1} - pl_k x_k <= 0``."""
    K = pl.size
    A = np.zeros((max(K - 1, 0), K))
    for k in range(K - 1):
        A[k, k] = -pl[k]
        A[k, k + 1] = pl[k + 1]
    return A, np.zeros(K - 1)


def _interior_start(cfg: SystemConfig) -> np.ndarray:
    # proportional-fair point scaled into the interior: strictly ordered, budget slack
    return 0.9 * reciprocal_budget_powers(cfg.budget_weights, cfg.P)


# ---------------------------------------------------------------------------
# alpha > 1


def fp7_program(cfg: SystemConfig, alpha: float) -> ConvexProgram:
    """``min log(sum exp((alpha-1)/P_k)) / (alpha-1)`` under budget and ordering.

    Both transforms are monotone, so the minimizer matches
    ``sum exp((alpha-1)/P_k)``; the log keeps large alpha finite and the
    division keeps the gradient well scaled as alpha approaches 1.
    """
    return exp_penalty_program(cfg.budget_weights, cfg.P, alpha, cfg.path_loss)


def exp_penalty_program(w, P: float, alpha: float, pl=None) -> ConvexProgram:
    """Program of :func:`fp7_program` for budget weights ``w``.

    ``pl`` adds the ordering rows ``pl_{k+1} x_{k+1} <= pl_k x_k``.
    """
    a = alpha - 1.0
    w = np.asarray(w, dtype=float)

    def weights(x):
        g = a / x
        e = np.exp(g - float(np.max(g)))
        return g, e / float(np.sum(e))

    def f(x):
        g, _ = weights(x)
        m = float(np.max(g))
        return (m + math.log(float(np.sum(np.exp(g - m))))) / a

    def grad(x):
        _, pi = weights(x)
        return -pi / x**2

    def hess(x):
        _, pi = weights(x)
        d1 = -1.0 / x**2
        v = pi * d1
        return np.diag(pi * (2.0 / x**3 + a * d1 * d1)) - a * np.outer(v, v)

    A, c = w[None, :], np.array([P])
    if pl is not None:
        Ao, co = _ordering_rows(np.asarray(pl, dtype=float))
        A, c = np.vstack([A, Ao]), np.concatenate([c, co])
    return ConvexProgram(objective=f, gradient=grad, hessian=hess, A=A, c=c,
                         lower=np.zeros(w.size))


def solve_alpha_gt_1(cfg: SystemConfig, tol: float = 1e-10) -> SolveReport:
    """Convex program for alpha > 1 solved by the barrier method."""
    if not cfg.alpha > 1:
        raise ValueError("solve_alpha_gt_1 needs alpha > 1")
    sol = minimize_convex(fp7_program(cfg, cfg.alpha), _interior_start(cfg),
                          tol=tol)
    return _report(sol.x, cfg, regime="alpha>1", stationarity=sol.stationarity,
                   newton_steps=sol.iterations)


# ---------------------------------------------------------------------------
# alpha < 1: concave tails


def _G(x, a):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-a / x[pos])
    return out


_BRANCH = float(np.nextafter(-1.0 / math.e, 0.0))


def _inverse_gprime(y, a):
    """Solve ``G'(x) = (a/x^2) exp(-a/x) = y`` on the concave branch ``x >= a/2``."""
    # with z = a/x: z^2 e^-z = a y, z in (0, 2]  =>  z = -2 W0(-sqrt(a y)/2)
    arg = -np.sqrt(a * np.asarray(y, dtype=float)) / 2.0
    # scipy returns nan exactly at the branch point -1/e
    arg = np.maximum(arg, _BRANCH)
    z = -2.0 * np.real(lambertw(arg, 0))
    with np.errstate(divide="ignore"):
        return np.where(z > 0, a / np.maximum(z, 1e-300), np.inf)


def concave_waterfill(a: float, w: np.ndarray, budgets, cap0=None,
                      iters: int = 200) -> np.ndarray:
    """Maximize ``sum_k G(x_k)`` s.t. ``w . x <= B``, ``x_k >= a/2``, for each B.

    ``G(x) = exp(-a/x)`` is concave on the floor region, so the optimum is
    ``x_k = max(a/2, (G')^{-1}(lam w_k))`` with ``lam`` set by the binding
    budget.  ``lam`` is found per budget by safeguarded Newton on ``log lam``.
    ``cap0`` optionally bounds the first coordinate from above (one value per
    budget); with a single capped coordinate the leftover budget may stay
    unspent.  Budgets below ``(a/2) sum w`` raise ValueError.
    """
    w = np.asarray(w, dtype=float)
    B = np.atleast_1d(np.asarray(budgets, dtype=float))
    thr = a / 2.0
    floor_cost = thr * float(np.sum(w))
    if np.any(B < floor_cost * (1.0 - 1e-12)):
        raise ValueError("budget below the floor cost")
    upper = np.full((B.size, w.size), np.inf)
    if cap0 is not None:
        upper[:, 0] = np.maximum(np.broadcast_to(cap0, B.shape), thr)
    gp_max = 4.0 / (a * math.e**2)
    # budget(lam) is decreasing; brackets from sqrt(a/y)/e <= x <= sqrt(a/y)
    sw = float(np.sum(np.sqrt(w)))
    lo = np.log(a * sw**2 / (math.e**2 * np.maximum(B, 1e-300) ** 2)) - 1.0
    hi = np.full_like(B, math.log(gp_max / float(np.min(w))))
    lo = np.minimum(lo, hi)
    t = 0.5 * (lo + hi)
    tight = B <= floor_cost * (1.0 + 1e-14)
    if cap0 is not None and w.size == 1:
        # single coordinate: the budget or the cap binds
        x = np.minimum(B / w[0], upper[:, 0])[:, None]
        return np.maximum(x, thr)

    def alloc(tt):
        lam = np.exp(tt)[:, None]
        y = lam * w[None, :]
        x = np.where(y >= gp_max, thr, _inverse_gprime(np.minimum(y, gp_max), a))
        return np.minimum(np.maximum(x, thr), upper)

    for _ in range(iters):
        x = alloc(t)
        spend = x @ w
        over = spend > B
        lo = np.where(over, t, lo)
        hi = np.where(over, hi, t)
        # d spend / d log lam = lam sum w_k^2 / G''(x_k) over unclipped users
        e = np.exp(-a / x)
        g2 = e * (a * a / x**4 - 2.0 * a / x**3)
        free = (x > thr * (1.0 + 1e-9)) & (x < upper)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(free, w[None, :] ** 2 / g2, 0.0)
        deriv = np.exp(t) * np.sum(terms, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            tn = t - (spend - B) / deriv
        bad = ~np.isfinite(tn) | (tn <= lo) | (tn >= hi)
        tn = np.where(bad, 0.5 * (lo + hi), tn)
        done = (np.abs(spend - B) <= 1e-14 * B) | (hi - lo <= 1e-15 * np.maximum(1.0, np.abs(t)))
        t = np.where(done, t, tn)
        if np.all(done | tight):
            break
    # settle on the budget-feasible side of the bracket
    x = alloc(t)
    spend = x @ w
    x = np.where((spend > B * (1.0 + 1e-12))[:, None], alloc(hi), x)
    x[tight] = thr
    return x


def _membership(cfg: SystemConfig, k0: int, P1: float, thr: float):
    """Return ``(s, budget_left)`` or raise MembershipError."""
    K = cfg.K
    pl = cfg.path_loss
    w = cfg.budget_weights
    if not 0 <= k0 <= K:
        raise MembershipError(f"k0={k0} outside 0..{K}")
    if k0 == 0:
        left = cfg.P
        if thr * float(np.sum(w)) > left * (1 + 1e-12):
            raise MembershipError("floor powers exceed the budget (k0=0)")
        return None, left
    if P1 < 0:
        raise MembershipError("P1 must be nonnegative")
    if P1 > thr * pl[k0 - 1] / pl[0] * (1 + 1e-12):
        raise MembershipError(
            f"pinned user {k0} would exceed the convexity threshold")
    s = pl[0] * P1
    left = cfg.P - s * ((cfg.rhat0 + 1.0) ** k0 - 1.0)
    floor = thr * float(np.sum(w[k0:]))
    if left < floor * (1 - 1e-12) - 1e-15 * cfg.P:
        raise MembershipError(
            "budget left after the pinned block cannot cover the tail floors")
    if k0 < K and s < thr * pl[k0] * (1 - 1e-12):
        raise MembershipError(
            "ordering across the pinned/free boundary cannot hold")
    return s, left


def _tail_program(a, w, pl, left, s_cap):
    thr = a / 2.0
    n = w.size
    A, c = _ordering_rows(pl)
    rows = [w[None, :], A]
    cs = [[left], c]
    if s_cap is not None:
        e = np.zeros((1, n))
        e[0, 0] = pl[0]
        rows.append(e)
        cs.append([s_cap])

    def f(x):
        return -float(np.sum(np.exp(-a / x)))

    def grad(x):
        return -(a / x**2) * np.exp(-a / x)

    def hess(x):
        return -np.diag(np.exp(-a / x) * (a * a / x**4 - 2.0 * a / x**3))

    return ConvexProgram(objective=f, gradient=grad, hessian=hess,
                         A=np.vstack(rows), c=np.concatenate(cs),
                         lower=np.full(n, thr))


def _tail_general(a, w, pl, left, s_cap):
    """Concave tail with ordering and cross-boundary constraints enforced."""
    thr = a / 2.0
    eta = left / (thr * float(np.sum(w))) - 1.0
    if s_cap is not None:
        eta = min(eta, s_cap / (thr * pl[0]) - 1.0)
    if eta <= 1e-10:
        return np.full(w.size, thr)
    x0 = np.full(w.size, thr * (1.0 + 0.5 * min(eta, 1.0)))
    sol = minimize_convex(_tail_program(a, w, pl, left, s_cap), x0, tol=1e-11)
    return np.maximum(sol.x, thr)


def _ordered(x, pl, s_cap):
    v = pl * x
    ok = np.all(v[:, 1:] <= v[:, :-1] * (1 + 1e-12), axis=1)
    if s_cap is not None:
        ok &= v[:, 0] <= np.asarray(s_cap) * (1 + 1e-12)
    return ok


def _relaxed_tails(cfg, a, k0, lefts, s_caps):
    """Batch tails without the within-tail ordering; returns ``(x, ordered)``.

    The relaxed value bounds the exact one from above and equals it wherever
    ``ordered`` holds.
    """
    w = cfg.budget_weights[k0:]
    pl = cfg.path_loss[k0:]
    caps = None if s_caps is None else np.asarray(s_caps) / pl[0]
    x = concave_waterfill(a, w, lefts, cap0=caps)
    return x, _ordered(x, pl, s_caps)


def _exact_tail(cfg, a, k0, left, s_cap):
    return _tail_general(a, cfg.budget_weights[k0:], cfg.path_loss[k0:],
                         float(left), None if s_cap is None else float(s_cap))


def _tails(cfg, a, k0, lefts, s_caps):
    """Batch tail solve for fixed (k0, P1); returns tails (B, K-k0)."""
    x, ok = _relaxed_tails(cfg, a, k0, lefts, s_caps)
    for i in np.flatnonzero(~ok):
        x[i] = _exact_tail(cfg, a, k0, lefts[i],
                           None if s_caps is None else s_caps[i])
    return x


def solve_fp4(cfg: SystemConfig, k0: int, P1: float = 0.0,
              alpha: Optional[float] = None):
    """Best concave tail for the structure ``(k0, P1)``.

    Returns ``(tail, value)`` where ``tail`` holds ``P_{k0+1} .. P_K`` and
    ``value = sum_tail exp(-(1-alpha)/P_k)``.  ``P1`` is ignored when k0 = 0.
    """
    a = 1.0 - (cfg.alpha if alpha is None else alpha)
    if not a > 0:
        raise ValueError("solve_fp4 needs alpha < 1")
    s, left = _membership(cfg, k0, P1, a / 2.0)
    if k0 == cfg.K:
        return np.zeros(0), 0.0
    x = _tails(cfg, a, k0, np.array([left]),
               None if s is None else np.array([s]))[0]
    return x, float(np.sum(_G(x, a)))


def _pinned_value(cfg, a, k0, P1):
    pl = cfg.path_loss
    P1 = np.atleast_1d(P1)
    x = pl[0] * P1[:, None] / pl[None, :k0]
    return x, np.sum(_G(x, a), axis=1)


def _candidates_for_k0(cfg, a, k0, steps=GRID_STEPS, incumbent=-np.inf):
    """Best candidate for fixed k0 (grid + golden section), or None.

    Grid points whose relaxed bound cannot beat ``incumbent`` are skipped, so
    None is also returned when the whole k0 slice is dominated.
    """
    K = cfg.K
    pl = cfg.path_loss
    w = cfg.budget_weights
    thr = a / 2.0
    growth = (cfg.rhat0 + 1.0) ** k0 - 1.0
    if k0 == 0:
        if thr * float(np.sum(w)) > cfg.P:
            return None
        x = _tails(cfg, a, 0, np.array([cfg.P]), None)[0]
        return StructuredCandidate(0, float(x[0]), x, float(np.sum(_G(x, a))))
    hi = min(thr * pl[k0 - 1] / pl[0], cfg.P / (pl[0] * growth))
    if k0 == K:
        x, val = _pinned_value(cfg, a, K, hi)
        return StructuredCandidate(K, float(hi), np.zeros(0), float(val[0]))
    lo = thr * pl[k0] / pl[0]
    hi = min(hi, (cfg.P - thr * float(np.sum(w[k0:]))) / (pl[0] * growth))
    if hi < lo:
        return None

    floor = thr * float(np.sum(w[k0:]))

    def setup(P1s):
        P1s = np.clip(np.atleast_1d(np.asarray(P1s, dtype=float)), lo, hi)
        s = pl[0] * P1s
        lefts = np.maximum(cfg.P - s * growth, floor)
        return P1s, s, lefts

    def evaluate(P1s):
        P1s, s, lefts = setup(P1s)
        tails = _tails(cfg, a, k0, lefts, s)
        _, pv = _pinned_value(cfg, a, k0, P1s)
        return tails, pv + np.sum(_G(tails, a), axis=1)

    if hi - lo <= 1e-15 * max(1.0, hi):
        grid = np.array([lo])
    else:
        grid = np.linspace(lo, hi, steps)
    # exact tails only where the relaxed bound could still win
    P1s, s, lefts = setup(grid)
    tails, ok = _relaxed_tails(cfg, a, k0, lefts, s)
    _, pv = _pinned_value(cfg, a, k0, P1s)
    bound = pv + np.sum(_G(tails, a), axis=1)
    vals = np.where(ok, bound, -np.inf)
    best_known = max(float(np.max(vals)), incumbent)
    for i in sorted(np.flatnonzero(~ok), key=lambda j: (-bound[j], j)):
        if bound[i] <= best_known:
            break
        tails[i] = _exact_tail(cfg, a, k0, lefts[i], s[i])
        vals[i] = pv[i] + float(np.sum(_G(tails[i], a)))
        best_known = max(best_known, vals[i])
    i = int(np.argmax(vals))
    if not vals[i] > incumbent:
        return None
    best_p, best_v, best_t = float(grid[i]), float(vals[i]), tails[i]
    if grid.size > 1:
        a_lo = grid[max(i - 1, 0)]
        a_hi = grid[min(i + 1, grid.size - 1)]
        p, _ = golden_section_max(lambda q: float(evaluate(q)[1][0]), a_lo, a_hi,
                                  xtol=1e-12 * max(1.0, a_hi))
        t2, v2 = evaluate(p)
        if v2[0] > best_v:
            best_p, best_v, best_t = float(p), float(v2[0]), t2[0]
    return StructuredCandidate(k0, best_p, best_t, best_v)


def solve_alpha_lt_1(cfg: SystemConfig, steps: int = GRID_STEPS) -> SolveReport:
    """Exhaustive search over the pinned structure for 0 <= alpha < 1.

    Besides ``(k0, P1)`` the search covers the number ``m`` of active users.
    Under the SIC ordering a user with zero power forces every later user to
    zero, so switched-off users always form a suffix; at low SNR shutting
    them off beats spreading a small budget over the convex region.
    """
    if not 0 <= cfg.alpha < 1:
        raise ValueError("solve_alpha_lt_1 needs 0 <= alpha < 1")
    a = 1.0 - cfg.alpha
    best: Optional[StructuredCandidate] = None
    best_m = cfg.K
    evaluated = []
    for m in range(cfg.K, 0, -1):
        sub = cfg if m == cfg.K else cfg.replace(K=m, distances=cfg.distances[:m])
        for k0 in range(m + 1):
            cand = _candidates_for_k0(sub, a, k0, steps,
                                      -np.inf if best is None else best.value)
            if cand is None:
                continue
            evaluated.append((m, cand.k0, cand.value))
            if best is None or cand.value > best.value:
                best, best_m = cand, m
    if best is None or not np.isfinite(best.value):
        raise InfeasibleError("no admissible pinned structure")
    pl = cfg.path_loss
    pinned = pl[0] * best.P1 / pl[:best.k0] if best.k0 else np.zeros(0)
    x = np.concatenate([pinned, best.tail, np.zeros(cfg.K - best_m)])
    return _report(x, cfg, regime="alpha<1", k0=best.k0, P1=float(x[0]),
                   active=best_m, candidates=evaluated)


def solve_statistical(cfg: SystemConfig) -> SolveReport:
    """Dispatch on alpha to the closed form, the convex program or the search."""
    if cfg.alpha == 1:
        return solve_alpha_eq_1(cfg)
    if cfg.alpha > 1:
        return solve_alpha_gt_1(cfg)
    return solve_alpha_lt_1(cfg)
