import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from alphanoma.model import SystemConfig, gamma_coefficients
from alphanoma.numerics import minimize_convex
from alphanoma.statistical import (
    MembershipError, reciprocal_power_program, reciprocal_budget_powers, solve_alpha_eq_1,
    solve_alpha_gt_1, solve_alpha_lt_1, solve_fp4, solve_statistical,
)

from oracles import brute_force_statistical

K6_20DB = dict(K=6, P=100.0, r0=0.9)


def _budget(cfg, x):
    return cfg.rhat0 * float(np.sum(gamma_coefficients(cfg) * x))


def _random_configs(n, Ks, seed):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        K = int(rng.choice(Ks))
        snr = rng.uniform(0, 30)
        r0 = rng.uniform(0.1, 1.0)
        out.append(SystemConfig.from_snr_db(snr, K=K, r0=r0))
    return out


# -- alpha = 1 ---------------------------------------------------------------

def test_proportional_fair_single_user():
    cfg = SystemConfig(K=1, r0=1.0, distances=(1.0,), P=7.0)
    rep = solve_alpha_eq_1(cfg)
    assert rep.allocation.array[0] == pytest.approx(7.0)
    assert rep.info["omega"] == pytest.approx(1 / 49)


def test_proportional_fair_two_users():
    cfg = SystemConfig(K=2, r0=1.0, distances=(1.5, 1.0), P=10.0)
    rep = solve_alpha_eq_1(cfg)
    x = rep.allocation.array
    assert rep.info["omega"] == pytest.approx(0.0849258, rel=1e-5)
    np.testing.assert_allclose(x, [2.28765, 2.42641], atol=2e-5)
    assert 2.25 * x[0] + 2 * x[1] == pytest.approx(10.0, rel=1e-12)


@pytest.mark.parametrize("cfg", _random_configs(6, [2, 4, 6, 8], 1))
def test_proportional_fair_matches_generic_solver(cfg):
    rep = solve_alpha_eq_1(cfg)
    sol = minimize_convex(reciprocal_power_program(cfg), 0.5 * reciprocal_budget_powers(cfg.budget_weights, cfg.P),
                          tol=1e-12)
    assert sol.value == pytest.approx(float(np.sum(1 / rep.allocation.array)), rel=1e-6)
    np.testing.assert_allclose(sol.x, rep.allocation.array, rtol=1e-5)


def test_dispatch_alpha_one():
    cfg = SystemConfig(**K6_20DB, alpha=1.0)
    a, b = solve_statistical(cfg), solve_alpha_eq_1(cfg)
    np.testing.assert_array_equal(a.allocation.array, b.allocation.array)


# -- alpha > 1 ---------------------------------------------------------------

def test_alpha_gt1_continuity():
    cfg = SystemConfig(K=2, P=100.0, r0=0.9, alpha=1.001)
    x = solve_alpha_gt_1(cfg).allocation.array
    ref = solve_alpha_eq_1(cfg.replace(alpha=1.0)).allocation.array
    np.testing.assert_allclose(x, ref, rtol=1e-4)


def test_alpha_gt1_linear_approach():
    # the gap shrinks linearly in alpha - 1 (not fast enough for 1e-4 at K=6)
    cfg = SystemConfig(**K6_20DB)
    ref = solve_alpha_eq_1(cfg).allocation.array
    gaps = [np.max(np.abs(solve_alpha_gt_1(cfg.replace(alpha=1 + e)).allocation.array
                          - ref)) for e in (1e-2, 1e-3, 1e-4)]
    for g1, g2 in zip(gaps, gaps[1:]):
        assert 8 < g1 / g2 < 12
    assert gaps[-1] < 1e-4


def test_alpha_100_equal_throughputs():
    rep = solve_statistical(SystemConfig(**K6_20DB, alpha=100.0))
    F = rep.per_user
    assert (F.max() - F.min()) / F.max() <= 0.01
    assert rep.jain >= 0.99


def test_alpha_gt1_rejects_small_alpha():
    with pytest.raises(ValueError):
        solve_alpha_gt_1(SystemConfig(alpha=0.5))


def test_alpha2_two_users_brute_force():
    cfg = SystemConfig(K=2, P=100.0, r0=0.9, alpha=2.0)
    rep = solve_statistical(cfg)
    bf = brute_force_statistical(2, cfg.P, cfg.r0, 2.0, cfg.distances)
    assert abs(rep.objective - bf) <= 1e-3


# -- alpha < 1 ---------------------------------------------------------------

def test_fp4_full_pin_is_empty():
    cfg = SystemConfig(K=3, P=100.0, alpha=0.5)
    thr = 0.25
    tail, value = solve_fp4(cfg, 3, 0.5 * thr * cfg.path_loss[2] / cfg.path_loss[0])
    assert tail.size == 0 and value == 0.0


def test_fp4_k0_zero_grid_oracle():
    cfg = SystemConfig(K=2, P=10.0, r0=0.9, alpha=0.0)
    tail, value = solve_fp4(cfg, 0)
    w, pl = cfg.budget_weights, cfg.path_loss
    # 2-D grid: floors 1/2, budget, ordering pl1 x1 >= pl2 x2
    x1 = np.linspace(0.5, cfg.P / w[0], 2000)[:, None]
    x2 = np.linspace(0.5, cfg.P / w[1], 2000)[None, :]
    ok = (w[0] * x1 + w[1] * x2 <= cfg.P) & (pl[0] * x1 >= pl[1] * x2)
    grid = np.where(ok, np.exp(-1 / x1) + np.exp(-1 / x2), -np.inf).max()
    assert value >= grid - 1e-9
    assert value - grid <= 1e-3


def test_fp4_single_variable_oracle():
    cfg = SystemConfig(K=2, P=10.0, r0=0.9, alpha=0.2)
    a = 0.8
    pl, w = cfg.path_loss, cfg.budget_weights
    # admissible P1 lies in [(a/2) pl_2/pl_1, a/2]
    P1 = 0.3
    tail, value = solve_fp4(cfg, 1, P1)
    left = cfg.P - w[0] * P1
    hi = min(left / w[1], pl[0] * P1 / pl[1])
    res = minimize_scalar(lambda x: -math.exp(-a / x), bounds=(a / 2, hi),
                          method="bounded", options={"xatol": 1e-12})
    # bounded Brent stops a little short of the active bound
    assert value >= -res.fun - 1e-12
    assert value == pytest.approx(-res.fun, abs=1e-7)
    assert tail[0] == pytest.approx(hi, rel=1e-9)
    assert value == pytest.approx(math.exp(-a / hi), rel=1e-12)


def test_fp4_membership_error():
    cfg = SystemConfig(K=2, P=10.0, alpha=0.2)
    with pytest.raises(MembershipError):
        solve_fp4(cfg, 1, 10.0)


def test_alpha_lt1_continuity():
    cfg = SystemConfig(**K6_20DB, alpha=0.999)
    x = solve_alpha_lt_1(cfg).allocation.array
    ref = solve_alpha_eq_1(cfg.replace(alpha=1.0)).allocation.array
    np.testing.assert_allclose(x, ref, rtol=1e-3)


def test_alpha_lt1_two_users_brute_force():
    cfg = SystemConfig(K=2, P=100.0, r0=0.9, alpha=0.1)
    rep = solve_statistical(cfg)
    bf = brute_force_statistical(2, cfg.P, cfg.r0, 0.1, cfg.distances)
    assert abs(rep.objective - bf) <= 1e-3


@pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0, 4.0])
def test_single_user_full_budget(alpha):
    cfg = SystemConfig(K=1, P=5.0, r0=0.7, alpha=alpha, distances=(1.3,))
    x = solve_statistical(cfg).allocation.array
    assert x[0] == pytest.approx(cfg.P / (cfg.rhat0 * gamma_coefficients(cfg)[0]))


def test_sum_throughput_decreases_with_alpha():
    totals = [solve_statistical(SystemConfig(**K6_20DB, alpha=a)).total
              for a in (0.1, 1.0, 100.0)]
    assert totals[0] >= totals[1] >= totals[2]


def test_jain_non_decreasing_in_alpha():
    cfg = SystemConfig(**K6_20DB)
    fi = [solve_statistical(cfg.replace(alpha=a)).jain for a in (1, 2, 5, 20, 100)]
    assert all(b >= a - 1e-12 for a, b in zip(fi, fi[1:]))
    assert fi[-1] > 0.99


# -- invariants on random configs -------------------------------------------

CASES = [(cfg, a) for cfg, a in zip(
    _random_configs(24, [2, 3, 4, 6], 7),
    [0.0, 0.1, 0.5, 0.9, 1.0, 2.0, 5.0, 100.0] * 3)]


@pytest.mark.parametrize("cfg,alpha", CASES)
def test_structural_invariants(cfg, alpha):
    cfg = cfg.replace(alpha=alpha)
    rep = solve_statistical(cfg)
    x = rep.allocation.array
    assert _budget(cfg, x) == pytest.approx(cfg.P, rel=1e-6)
    s = cfg.path_loss * x
    assert np.all(np.diff(s) <= 1e-9 * max(1.0, s.max()))
    active = x > 0
    # switched-off users form a suffix; ordering P_1 <= ... holds on the rest
    assert np.all(active[:active.sum()])
    xa = x[active]
    assert np.all(np.diff(xa) >= -1e-9 * max(1.0, xa.max()))
    if alpha < 1:
        pinned = (x > 0) & (x < (1 - alpha) / 2 * (1 - 1e-9))
        if pinned.sum() > 1:
            np.testing.assert_allclose(s[pinned], s[pinned][0], rtol=1e-6)


BRUTE = [(cfg, a) for cfg, a in zip(
    _random_configs(20, [2, 3], 11), [0.0, 0.1, 0.5, 1.0, 2.0] * 4)]


@pytest.mark.parametrize("cfg,alpha", BRUTE)
def test_brute_force_equivalence(cfg, alpha):
    cfg = cfg.replace(alpha=alpha)
    rep = solve_statistical(cfg)
    bf = brute_force_statistical(cfg.K, cfg.P, cfg.r0, alpha, cfg.distances)
    assert rep.objective >= bf - 1e-3
    assert rep.objective <= bf + 1e-3
