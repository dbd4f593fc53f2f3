"""Small numerical kernels: monotone bisection, a log-barrier convex
minimizer for linearly constrained smooth problems, and grid search.

Everything here is deterministic and stateless; problem sizes in this
package never exceed a few dozen variables.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import nnls

__all__ = [
    "Bracket",
    "BracketError",
    "ConvergenceError",
    "ConvexProgram",
    "ConvexSolution",
    "InfeasibleStartError",
    "RootResult",
    "bisect",
    "golden_section_max",
    "grid_search",
    "minimize_convex",
]


class BracketError(ValueError):
    """The supplied interval does not bracket a sign change."""


class InfeasibleStartError(ValueError):
    """Starting point is not strictly inside the constraint set."""


class ConvergenceError(RuntimeError):
    """Iteration cap reached; ``best`` holds the last accepted iterate."""

    def __init__(self, message: str, best=None, iterations: int = 0):
        super().__init__(message)
        self.best = best
        self.iterations = iterations


# ---------------------------------------------------------------------------
# Bisection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Bracket:
    lo: float
    hi: float
    tol: float = 1e-9

    def __post_init__(self):
        if not (self.lo < self.hi):
            raise BracketError(f"empty bracket: lo={self.lo!r} >= hi={self.hi!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


class RootResult(NamedTuple):
    root: float
    value: float
    iterations: int
    width: float


def bisect(f: Callable[[float], float], bracket: Bracket,
           increasing: Optional[bool] = None, full_output: bool = False,
           max_iter: int = 2000):
    """Find the root of a monotone function by interval halving.

    Parameters
    ----------
    f : callable
        Strictly monotone on ``(bracket.lo, bracket.hi)``.
    bracket : Bracket
        Search interval and absolute tolerance on ``|f(x)|``.
    increasing : bool, optional
        Direction of monotonicity. When omitted, ``f`` is evaluated at both
        endpoints to detect the sign change; pass it explicitly when ``f`` is
        singular at an endpoint.
    full_output : bool
        Return a :class:`RootResult` instead of the bare root.

    The loop stops once ``|f(mid)| <= tol`` or the interval can no longer be
    split in floating point. Every iteration halves the interval, so the
    iteration count equals ``log2(initial width / final width)``.
    """
    lo, hi, tol = float(bracket.lo), float(bracket.hi), bracket.tol
    if increasing is None:
        flo, fhi = f(lo), f(hi)
        if flo == 0.0:
            return RootResult(lo, 0.0, 0, hi - lo) if full_output else lo
        if fhi == 0.0:
            return RootResult(hi, 0.0, 0, hi - lo) if full_output else hi
        if np.sign(flo) == np.sign(fhi):
            raise BracketError(
                f"no sign change on [{lo}, {hi}]: f(lo)={flo:.6g}, f(hi)={fhi:.6g}")
        increasing = fhi > flo

    it = 0
    mid, fm = 0.5 * (lo + hi), math.nan
    while it < max_iter:
        mid = 0.5 * (lo + hi)
        if not (lo < mid < hi):
            break
        fm = f(mid)
        it += 1
        if (fm > 0) == increasing:
            hi = mid
        else:
            lo = mid
        if abs(fm) <= tol:
            break
    if full_output:
        return RootResult(mid, fm, it, hi - lo)
    return mid


# ---------------------------------------------------------------------------
# Convex minimization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvexProgram:
    """``min f(x)`` subject to ``A @ x <= c`` and ``lower <= x <= upper``.

    ``hessian`` is optional; without it a central-difference Hessian of the
    supplied gradient is used.
    """

    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    A: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None
    lower: Optional[Sequence[float]] = None
    upper: Optional[Sequence[float]] = None
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    _rows: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rows, rhs = [], []
        n = None
        if self.A is not None:
            A = np.atleast_2d(np.asarray(self.A, dtype=float))
            n = A.shape[1]
            rows.append(A)
            rhs.append(np.asarray(self.c, dtype=float).reshape(-1))
        for bound, sign in ((self.lower, -1.0), (self.upper, 1.0)):
            if bound is None:
                continue
            bound = np.asarray(bound, dtype=float).reshape(-1)
            n = bound.size if n is None else n
            keep = np.isfinite(bound)
            eye = np.eye(n)[keep]
            rows.append(sign * eye)
            rhs.append(sign * bound[keep])
        if rows:
            A = np.vstack(rows)
            c = np.concatenate(rhs)
        else:
            A, c = None, None
        object.__setattr__(self, "_rows", (A, c))

    @property
    def constraint_matrix(self):
        return self._rows


class ConvexSolution(NamedTuple):
    x: np.ndarray
    value: float
    multipliers: np.ndarray
    stationarity: float
    gap: float
    iterations: int


def _fd_hessian(grad, x):
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        h = 1e-6 * max(abs(x[i]), 1e-3)
        e = np.zeros(n)
        e[i] = h
        H[:, i] = (grad(x + e) - grad(x - e)) / (2 * h)
    return 0.5 * (H + H.T)


def _newton_direction(H, g):
    scale = max(np.max(np.abs(np.diag(H))), 1e-300)
    tau = 0.0
    eye = np.eye(H.shape[0])
    for _ in range(60):
        try:
            L = np.linalg.cholesky(H + tau * eye)
        except np.linalg.LinAlgError:
            tau = max(1e-14 * scale, 10.0 * tau)
            continue
        y = np.linalg.solve(L, -g)
        return np.linalg.solve(L.T, y)
    return -g / scale


def minimize_convex(prog: ConvexProgram, x0, tol: float = 1e-8,
                    max_iter: int = 100_000, mu: float = 20.0,
                    callback: Optional[Callable[[np.ndarray], None]] = None) -> ConvexSolution:
    """Log-barrier interior-point method with damped Newton centering.

    ``x0`` must satisfy every inequality strictly. The outer loop stops once
    the barrier duality gap ``m / t`` is below ``tol * max(1, |f(x)|)``.  The reported
    stationarity is ``||grad f + A^T lam||_inf / max(1, ||grad f||_inf)``
    with ``lam`` fitted by nonnegative least squares on the near-active rows.
    Non-convex objectives are tolerated through Hessian regularization, which
    yields a KKT point.

    Raises
    ------
    InfeasibleStartError
        ``x0`` violates (or touches) a constraint.
    ConvergenceError
        More than ``max_iter`` Newton steps were taken.
    """
    f, grad = prog.objective, prog.gradient
    hess = prog.hessian or (lambda z: _fd_hessian(grad, z))
    A, c = prog.constraint_matrix
    x = np.array(x0, dtype=float)
    n = x.size
    if A is None:
        A = np.zeros((0, n))
        c = np.zeros(0)
    m = A.shape[0]

    s = c - A @ x
    if np.any(s <= 0):
        i = int(np.argmin(s))
        raise InfeasibleStartError(f"start violates constraint row {i} (slack {s[i]:.3g})")
    fx = f(x)
    if not np.isfinite(fx):
        raise InfeasibleStartError("objective is not finite at the start point")

    g = grad(x)
    if m == 0:
        t = 1.0
    else:
        gphi = A.T @ (1.0 / s)
        gg = float(g @ g)
        t = -float(g @ gphi) / gg if gg > 0 else 1.0
        if not np.isfinite(t) or t <= 0:
            t = 1.0
        t = min(max(t, 1e-6), 1e6)

    total = 0
    while True:
        for _ in range(100):
            g = grad(x)
            inv_s = 1.0 / s
            gt = t * g + A.T @ inv_s
            Ht = t * hess(x) + (A.T * inv_s**2) @ A
            dx = _newton_direction(Ht, gt)
            lam2 = -float(gt @ dx)
            # at large t the decrement loses accuracy before the step does
            small_step = float(np.max(np.abs(dx))) <= 1e-13 * (
                1.0 + float(np.max(np.abs(x))))
            if not lam2 * 0.5 > 1e-14 or small_step:
                break
            total += 1
            if total > max_iter:
                raise ConvergenceError("minimize_convex: iteration cap exceeded",
                                       best=x.copy(), iterations=total)
            Adx = A @ dx
            pos = Adx > 0
            step = 1.0
            if np.any(pos):
                step = min(1.0, 0.99 * float(np.min(s[pos] / Adx[pos])))
            F0 = t * fx - np.sum(np.log(s))
            # near the center t*f is too large for Armijo to resolve the
            # decrease; fall back to a residual-norm test there
            local = lam2 < 1e-4
            gnorm = float(np.linalg.norm(gt)) if local else 0.0
            accepted = False
            for _ in range(60):
                xn = x + step * dx
                sn = c - A @ xn
                if np.all(sn > 0):
                    fn = f(xn)
                    if np.isfinite(fn):
                        Fn = t * fn - np.sum(np.log(sn))
                        if Fn <= F0 - 0.25 * step * lam2:
                            accepted = True
                        elif local:
                            gn = t * grad(xn) + A.T @ (1.0 / sn)
                            accepted = float(np.linalg.norm(gn)) < gnorm
                        if accepted:
                            break
                step *= 0.5
            if not accepted:
                break
            x, s, fx = xn, sn, fn
            if callback is not None:
                callback(x.copy())
        if m == 0 or m / t <= tol * max(1.0, abs(fx)) or t >= 1e16:
            break
        t *= mu

    g = grad(x)
    lam, stat = _kkt_multipliers(g, A, c, s, t)
    return ConvexSolution(x, float(fx), lam, stat, m / t if m else 0.0, total)


def _kkt_multipliers(g, A, c, s, t):
    """Nonnegative least-squares multipliers on the near-active rows.

    Barrier estimates ``1/(t s)`` lose accuracy once the slack is computed by
    cancellation, so stationarity is measured with fitted multipliers instead.
    The residual is relative to ``max(1, |grad f|)``.
    """
    m = A.shape[0]
    lam = np.zeros(m)
    scale = max(1.0, float(np.max(np.abs(g)))) if g.size else 1.0
    if m:
        barrier = 1.0 / (t * s)
        active = (s <= 1e-5 * (1.0 + np.abs(c))) | (barrier >= 1e-7 * scale)
        if np.any(active):
            sol, _ = nnls(A[active].T, -g)
            lam[active] = sol
    r = g + A.T @ lam
    return lam, float(np.max(np.abs(r))) / scale if g.size else 0.0


# ---------------------------------------------------------------------------
# Search helpers
# ---------------------------------------------------------------------------

def grid_search(f: Callable[..., float], bounds: Sequence[tuple], steps):
    """Exhaustive search for the maximum of ``f`` on a 1-D or 2-D grid.

    ``bounds`` is a list of ``(lo, hi)`` pairs and ``steps`` the number of
    grid points per axis (an int applies to every axis). Ties resolve to the
    lexicographically smallest grid point. Returns ``(argmax, max)`` where
    ``argmax`` is a float in 1-D and a tuple otherwise.
    """
    bounds = list(bounds)
    if not 1 <= len(bounds) <= 2:
        raise ValueError("grid_search supports 1-D or 2-D boxes")
    if isinstance(steps, int):
        steps = (steps,) * len(bounds)
    axes = []
    for (lo, hi), n in zip(bounds, steps):
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
            raise ValueError(f"empty box [{lo}, {hi}]")
        if n < 2:
            raise ValueError("need at least 2 grid steps per axis")
        axes.append(np.linspace(lo, hi, n))
    best_x, best_v = None, -math.inf
    for point in itertools.product(*axes):
        v = f(*point)
        if best_x is None or v > best_v:
            best_x, best_v = point, v
    if len(bounds) == 1:
        return float(best_x[0]), best_v
    return tuple(float(p) for p in best_x), best_v


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(f: Callable[[float], float], lo: float, hi: float,
                       xtol: float = 1e-10, max_iter: int = 200):
    """Maximize a unimodal function on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = lo, hi
    x1 = b - _INVPHI * (b - a)
    x2 = a + _INVPHI * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if b - a <= xtol * max(1.0, abs(a) + abs(b)):
            break
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INVPHI * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INVPHI * (b - a)
            f2 = f(x2)
    return (x1, f1) if f1 >= f2 else (x2, f2)
