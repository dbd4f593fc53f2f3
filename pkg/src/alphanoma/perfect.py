"""alpha-fair rate allocation with perfect CSIT.

Users are sorted by channel gain, ``H_1 <= ... <= H_K``.  The decision
variables are the cumulative powers ``b_k = sum_{i>=k} P~_i`` with ``b_1 = P``
and ``b_{K+1} = 0``; user k then gets ``R_k = ln((1 + H_k b_k)/(1 + H_k b_{k+1}))``
nats per channel use.

At the optimum every ``b_{k+1}`` solves

    R_{k+1}/R_k = ((b_{k+1} + 1/H_k) / (b_{k+1} + 1/H_{k+1}))**(1/alpha)

given its neighbours.  :func:`solve_ao` sweeps ``k = 1..K-1`` solving these
one-dimensional equations by bisection until the residual vector is small;
:func:`solve_baseline` solves the same problem with the generic barrier
method and serves as an independent check.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np

from .model import (ChannelRealization, CumulativePowers, SolveReport,
                    SystemConfig, jain_index, rates, utility_sum)
from .numerics import (Bracket, ConvergenceError, ConvexProgram, bisect,
                       minimize_convex)

__all__ = [
    "AOResult",
    "KKTState",
    "ao_batch",
    "inner_function",
    "inner_root",
    "kkt_residual",
    "perfect_rates_batch",
    "rates_batch",
    "solve_ao",
    "solve_baseline",
    "solve_perfect",
    "solve_sum_rate_alpha0",
]

MAX_SWEEPS = 10_000


class KKTState(NamedTuple):
    b: CumulativePowers
    t: int
    residual: np.ndarray
    norm: float


def _gains(H) -> np.ndarray:
    h = H.H if isinstance(H, ChannelRealization) else np.asarray(H, dtype=float)
    if np.any(h <= 0) or np.any(np.diff(h) < 0):
        raise ValueError("channel gains must be positive and sorted ascending")
    return h


def _bvec(b) -> np.ndarray:
    return b.array if isinstance(b, CumulativePowers) else np.asarray(b, float)


def kkt_residual(b, H, alpha: float) -> np.ndarray:
    """``f_k = R_{k+1}/R_k - ((b_{k+1} + 1/H_k)/(b_{k+1} + 1/H_{k+1}))**(1/alpha)``.

    Returns the K-1 values for k = 1..K-1.  Needs a strictly decreasing ``b``
    so that every rate is positive.
    """
    if not alpha > 0:
        raise ValueError("the residual needs alpha > 0")
    bb = _bvec(b)
    h = _gains(H)
    if np.any(np.diff(bb) >= 0):
        raise ValueError("b must be strictly decreasing (every rate positive)")
    R = rates(bb, h)
    mid = bb[1:-1]
    ratio = (mid + 1.0 / h[:-1]) / (mid + 1.0 / h[1:])
    return R[1:] / R[:-1] - ratio ** (1.0 / alpha)


def inner_function(x, b_k: float, b_k2: float, h_k: float, h_k1: float,
                   alpha: float):
    """The residual ``f_k`` as a function of ``x = b_{k+1}`` alone."""
    r_next = math.log1p(h_k1 * (x - b_k2) / (1.0 + h_k1 * b_k2))
    r_k = math.log1p(h_k * (b_k - x) / (1.0 + h_k * x))
    ratio = (x + 1.0 / h_k) / (x + 1.0 / h_k1)
    if r_k == 0.0:
        return math.inf
    return r_next / r_k - ratio ** (1.0 / alpha)


def _tied_root(b_k, b_k2, h):
    # equal gains: the condition is R_{k+1} = R_k for any alpha
    return (math.sqrt((1.0 + h * b_k) * (1.0 + h * b_k2)) - 1.0) / h


def inner_root(b_k: float, b_k2: float, k: int, H, alpha: float,
               eps1: float = 1e-5, full_output: bool = False):
    """Root of ``f_k`` in ``b_{k+1}`` on ``(b_{k+2}, b_k)`` for 1-based k.

    The function rises from a negative value at ``b_{k+2}`` to ``+inf`` at
    ``b_k``, so bisection stops at ``|f_k| <= eps1`` or once the bracket no
    longer splits.
    """
    h = _gains(H)
    K = h.size
    if not 1 <= k <= K - 1:
        raise IndexError(f"k={k} outside 1..{K - 1}")
    if not b_k2 < b_k:
        raise ValueError(f"degenerate bracket: b_k2={b_k2} >= b_k={b_k}")
    if not alpha > 0:
        raise ValueError("inner_root needs alpha > 0")
    hk, hk1 = float(h[k - 1]), float(h[k])
    if hk == hk1:
        x = _tied_root(b_k, b_k2, hk)
        if full_output:
            return x, 0
        return x
    res = bisect(lambda x: inner_function(x, b_k, b_k2, hk, hk1, alpha),
                 Bracket(float(b_k2), float(b_k), eps1), increasing=True,
                 full_output=True)
    if full_output:
        return res.root, res.iterations
    return res.root


# ---------------------------------------------------------------------------
# Alternating optimization over many blocks


class AOResult(NamedTuple):
    b: np.ndarray          # (B, K+1)
    sweeps: np.ndarray     # (B,)
    norms: np.ndarray      # (B,)
    converged: np.ndarray  # (B,) bool, residual norm <= eps2
    trace: Optional[list]  # per-sweep copies of b for B == 1
    bisections: int        # largest inner iteration count seen
    stalled: Optional[np.ndarray] = None  # (B,) bool, exact fixed point above eps2


def _batch_root(lo, hi, hk, hk1, inv_alpha, b_k, b_k2):
    """Vectorized bisection for ``R_{k+1} q^(-1/alpha) - R_k = 0``.

    Same root as the ratio form; this product form is finite on the whole
    closed bracket and increasing in x.  Runs until no bracket can split.
    """
    lo = lo.copy()
    hi = hi.copy()
    base_next = 1.0 + hk1 * b_k2
    iters = 0
    while True:
        mid = 0.5 * (lo + hi)
        live = (lo < mid) & (mid < hi)
        if not np.any(live):
            break
        iters += 1
        r_next = np.log1p(hk1 * (mid - b_k2) / base_next)
        r_k = np.log1p(hk * (b_k - mid) / (1.0 + hk * mid))
        q = (mid + 1.0 / hk) / (mid + 1.0 / hk1)
        g = r_next * np.exp(-np.log(q) * inv_alpha) - r_k
        up = g > 0
        hi = np.where(live & up, mid, hi)
        lo = np.where(live & ~up, mid, lo)
    return 0.5 * (lo + hi), iters


def _scalar_root(b_k, b_k2, hk, hk1, inv_alpha):
    """Scalar twin of :func:`_batch_root`; returns ``(root, iterations)``."""
    lo, hi = b_k2, b_k
    base_next = 1.0 + hk1 * b_k2
    ik, ik1 = 1.0 / hk, 1.0 / hk1
    log1p, log, exp = math.log1p, math.log, math.exp
    it = 0
    while True:
        mid = 0.5 * (lo + hi)
        if not (lo < mid < hi):
            break
        it += 1
        g = (log1p(hk1 * (mid - b_k2) / base_next)
             * exp(-log((mid + ik) / (mid + ik1)) * inv_alpha)
             - log1p(hk * (b_k - mid) / (1.0 + hk * mid)))
        if g > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi), it


def _ao_single(h, P, alpha, eps2, max_sweeps, b0, keep_trace):
    K = h.size
    hs = [float(v) for v in h]
    if b0 is None:
        b = [P] + [0.0] * K
    else:
        b = [float(v) for v in np.ravel(b0)]
        if b[0] != P or b[-1] != 0:
            raise ValueError("start must have b_1 = P and b_{K+1} = 0")
    inv_alpha = 1.0 / alpha
    trace = [np.array(b)] if keep_trace else None
    max_bis = 0
    norm = math.inf
    sweeps = 0
    stalled = False
    for sweeps in range(1, max_sweeps + 1):
        prev = list(b)
        for k in range(1, K):
            hk, hk1 = hs[k - 1], hs[k]
            if hk == hk1:
                b[k] = _tied_root(b[k - 1], b[k + 1], hk)
            else:
                b[k], it = _scalar_root(b[k - 1], b[k + 1], hk, hk1, inv_alpha)
                max_bis = max(max_bis, it)
        arr = np.array(b)
        if keep_trace:
            trace.append(arr)
        norm = float(_residual_norms(arr[None, :], h[None, :], alpha)[0])
        if norm <= eps2:
            break
        if b == prev:
            stalled = True
            break
    return arr, sweeps, norm, trace, max_bis, stalled


def _residual_norms(b, H, alpha):
    R = np.log1p(H * (b[:, :-1] - b[:, 1:]) / (1.0 + H * b[:, 1:]))
    mid = b[:, 1:-1]
    ratio = (mid + 1.0 / H[:, :-1]) / (mid + 1.0 / H[:, 1:])
    # a vanishing weakest rate makes the norm inf; callers treat that as unsolved
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        f = R[:, 1:] / R[:, :-1] - ratio ** (1.0 / alpha)
        return np.sqrt(np.sum(f * f, axis=1))


def ao_batch(H, P: float, alpha: float, eps2: float = 1e-6,
             max_sweeps: int = MAX_SWEEPS, b0=None,
             keep_trace: bool = False) -> AOResult:
    """Run the alternating KKT sweeps on a batch of sorted gain vectors.

    ``H`` has shape (B, K).  Each sweep updates ``b_2 .. b_K`` in order,
    bracketing ``b_{k+1}`` by the freshly updated ``b_k`` and the previous
    sweep's ``b_{k+2}``.  Blocks stop individually once the Euclidean norm
    of the residual vector is at most ``eps2`` or a sweep changes nothing
    (see :func:`solve_ao`).  ``b0`` (B, K+1) overrides
    the all-zero start; it must be strictly decreasing with ``b0[:, 0] = P``.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Bn, K = H.shape
    if not alpha > 0:
        raise ValueError("alternating optimization needs alpha > 0")
    if b0 is None:
        b = np.zeros((Bn, K + 1))
        b[:, 0] = P
    else:
        b = np.array(b0, dtype=float).reshape(Bn, K + 1)
        if np.any(b[:, 0] != P) or np.any(b[:, -1] != 0):
            raise ValueError("start must have b_1 = P and b_{K+1} = 0")
    sweeps = np.zeros(Bn, dtype=int)
    norms = np.full(Bn, np.inf)
    trace = [b[0].copy()] if keep_trace else None
    max_bis = 0
    stalled = np.zeros(Bn, dtype=bool)
    if K == 1:
        return AOResult(b, sweeps, np.zeros(Bn), np.ones(Bn, bool), trace, 0,
                        stalled)
    inv_alpha = 1.0 / alpha
    active = np.arange(Bn)
    for _ in range(max_sweeps):
        if active.size == 0:
            break
        bb = b[active]
        prev = bb.copy()
        Ha = H[active]
        for k in range(1, K):
            # 0-based column k holds b_{k+1}
            b_k, b_k2 = bb[:, k - 1], bb[:, k + 1]
            hk, hk1 = Ha[:, k - 1], Ha[:, k]
            x, it = _batch_root(b_k2, b_k, hk, hk1, inv_alpha, b_k, b_k2)
            tied = hk == hk1
            if np.any(tied):
                x[tied] = (np.sqrt((1.0 + hk[tied] * b_k[tied])
                                   * (1.0 + hk[tied] * b_k2[tied])) - 1.0) / hk[tied]
            bb[:, k] = x
            max_bis = max(max_bis, it)
        b[active] = bb
        sweeps[active] += 1
        if keep_trace:
            trace.append(b[0].copy())
        nrm = _residual_norms(bb, Ha, alpha)
        norms[active] = nrm
        still = np.all(bb == prev, axis=1) & ~(nrm <= eps2)
        stalled[active[still]] = True
        active = active[~(nrm <= eps2) & ~still]
    converged = norms <= eps2
    return AOResult(b, sweeps, norms, converged, trace, max_bis, stalled)


def _perfect_report(b, h, alpha, **kw) -> SolveReport:
    R = rates(b, h)
    return SolveReport(allocation=CumulativePowers(b), per_user=R,
                       objective=utility_sum(R, alpha),
                       jain=jain_index(R) if np.any(R > 0) else float("nan"),
                       **kw)


def solve_ao(H, cfg: SystemConfig, b0=None, keep_trace: bool = True,
             max_sweeps: int = MAX_SWEEPS) -> SolveReport:
    """Alternating optimization for one channel realization.

    Stops when the residual norm reaches ``cfg.eps2`` or when a sweep leaves
    every ``b_k`` bit-for-bit unchanged.  The second case occurs for small
    alpha, where the weakest user's rate is so small that the ratio residual
    cannot be evaluated below ``eps2`` in floating point; it is reported as
    ``info["stalled"]``.  Raises ConvergenceError (with the trace attached as
    ``best``) when neither happens within ``max_sweeps`` sweeps.
    """
    h = _gains(H)
    K = h.size
    if not cfg.alpha > 0:
        raise ValueError("solve_ao needs alpha > 0; use solve_sum_rate_alpha0")
    if K == 1:
        return _perfect_report(np.array([cfg.P, 0.0]), h, cfg.alpha,
                               trace=[np.array([cfg.P, 0.0])])
    b, sweeps, norm, trace, bis, stalled = _ao_single(
        h, float(cfg.P), cfg.alpha, cfg.eps2, max_sweeps, b0, keep_trace)
    if not (norm <= cfg.eps2 or stalled):
        raise ConvergenceError(
            f"alternating optimization stalled at residual {norm:.3g} "
            f"after {sweeps} sweeps", best=trace or b, iterations=sweeps)
    return _perfect_report(b, h, cfg.alpha, residual=norm, iterations=sweeps,
                           trace=trace,
                           info={"bisections": bis, "stalled": stalled})


# ---------------------------------------------------------------------------
# Generic-solver baseline


def rate_program(h: np.ndarray, P: float, alpha: float) -> ConvexProgram:
    """``min -sum u_alpha(R_k)`` over ``(b_2, .., b_K)`` with ``P >= b_2 >= .. >= b_K >= 0``."""
    K = h.size
    n = K - 1

    def full(y):
        return np.concatenate([[P], y, [0.0]])

    def parts(y):
        b = full(y)
        R = np.log1p(h * (b[:-1] - b[1:]) / (1.0 + h * b[1:]))
        p = h / (1.0 + h * b[:-1])      # dR_k/db_k
        q = h / (1.0 + h * b[1:])       # -dR_k/db_{k+1}
        return R, p, q

    def u(R):
        if alpha == 1:
            return np.log(R)
        return R ** (1.0 - alpha) / (1.0 - alpha)

    def f(y):
        R, _, _ = parts(y)
        if np.any(R <= 0):
            return math.inf
        return -float(np.sum(u(R)))

    def grad(y):
        R, p, q = parts(y)
        d1 = R ** (-alpha)
        g = np.zeros(K + 1)
        g[:-1] -= d1 * p
        g[1:] += d1 * q
        return g[1:-1]

    def hess(y):
        R, p, q = parts(y)
        d1 = R ** (-alpha)
        d2 = -alpha * R ** (-alpha - 1.0)
        Hm = np.zeros((K + 1, K + 1))
        for k in range(K):
            v = np.zeros(K + 1)
            v[k], v[k + 1] = p[k], -q[k]
            Hm -= d2[k] * np.outer(v, v)
            Hm[k, k] += d1[k] * p[k] ** 2
            Hm[k + 1, k + 1] -= d1[k] * q[k] ** 2
        return Hm[1:-1, 1:-1]

    A = np.zeros((K, n))
    c = np.zeros(K)
    A[0, 0], c[0] = 1.0, P                  # b_2 <= P
    for j in range(n - 1):                  # b_{j+3} <= b_{j+2}
        A[j + 1, j + 1], A[j + 1, j] = 1.0, -1.0
    A[K - 1, n - 1] = -1.0                  # b_K >= 0
    return ConvexProgram(objective=f, gradient=grad, hessian=hess, A=A, c=c)


def solve_baseline(H, cfg: SystemConfig, tol: float = 1e-12) -> SolveReport:
    """Same problem via the barrier method from an equal-power start."""
    h = _gains(H)
    K = h.size
    if not cfg.alpha > 0:
        raise ValueError("solve_baseline needs alpha > 0")
    if K == 1:
        return _perfect_report(np.array([cfg.P, 0.0]), h, cfg.alpha)
    y0 = cfg.P * np.arange(K - 1, 0, -1) / K
    sol = minimize_convex(rate_program(h, cfg.P, cfg.alpha), y0, tol=tol)
    b = np.concatenate([[cfg.P], sol.x, [0.0]])
    try:
        resid = float(np.linalg.norm(kkt_residual(b, h, cfg.alpha)))
    except ValueError:
        resid = math.inf
    return _perfect_report(b, h, cfg.alpha, residual=resid,
                           iterations=sol.iterations,
                           info={"stationarity": sol.stationarity})


def solve_sum_rate_alpha0(H, cfg: SystemConfig) -> SolveReport:
    """Unweighted sum rate: the whole budget goes to the strongest user."""
    h = _gains(H)
    K = h.size
    b = np.full(K + 1, cfg.P)
    b[-1] = 0.0
    return _perfect_report(b, h, 0.0)


def solve_perfect(H, cfg: SystemConfig, solver: str = "ao") -> SolveReport:
    """Dispatch on alpha and the requested solver (``ao`` or ``baseline``)."""
    if cfg.alpha == 0:
        return solve_sum_rate_alpha0(H, cfg)
    if solver == "ao":
        return solve_ao(H, cfg)
    if solver == "baseline":
        return solve_baseline(H, cfg)
    raise ValueError(f"unknown solver {solver!r}")


def perfect_rates_batch(H, P: float, alpha: float, eps2: float = 1e-6,
                        max_sweeps: int = MAX_SWEEPS):
    """Optimal rates (B, K) for sorted gains ``H`` plus the AO run statistics.

    Returns ``(R, sweeps, norms, failed)``; ``failed`` marks blocks that
    neither reached ``eps2`` nor stalled at a floating-point fixed point.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Bn, K = H.shape
    if alpha == 0:
        b = np.zeros((Bn, K + 1))
        b[:, :K] = P
        return (rates_batch(b, H), np.zeros(Bn, int), np.zeros(Bn),
                np.zeros(Bn, bool))
    res = ao_batch(H, P, alpha, eps2=eps2, max_sweeps=max_sweeps)
    return (rates_batch(res.b, H), res.sweeps, res.norms,
            ~(res.converged | res.stalled))


def rates_batch(b, H) -> np.ndarray:
    """Row-wise :func:`rates` for cumulative powers (B, K+1) and gains (B, K)."""
    return np.log1p(H * (b[:, :-1] - b[:, 1:]) / (1.0 + H * b[:, 1:]))
