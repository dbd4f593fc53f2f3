import math

import numpy as np
import pytest

from alphanoma.baselines import (
    TdmaAllocation, fixed_noma_perfect, fixed_noma_perfect_batch,
    fixed_noma_powers, fixed_noma_statistical, tdma_outage_scale,
    tdma_perfect_batch, tdma_perfect_solve, tdma_statistical_solve,
)
from alphanoma.model import SystemConfig, gain_matrix
from alphanoma.numerics import ConvexProgram, minimize_convex

from oracles import mc_outage, tdma_brute_force, waterfilling


@pytest.mark.parametrize("K,P,expected", [(3, 7.0, (4, 2, 1)), (1, 5.0, (5,)),
                                          (2, 3.0, (2, 1))])
def test_fixed_noma_examples(K, P, expected):
    np.testing.assert_allclose(fixed_noma_powers(SystemConfig(K=K, P=P)).array, expected)


@pytest.mark.parametrize("K", [1, 2, 4, 7])
def test_fixed_noma_shape_is_snr_free(K):
    a = fixed_noma_powers(SystemConfig(K=K, P=1.0)).array
    b = fixed_noma_powers(SystemConfig(K=K, P=1234.5)).array
    np.testing.assert_allclose(b / 1234.5, a, rtol=1e-14)
    assert b.sum() == pytest.approx(1234.5, rel=1e-14)


def test_fixed_noma_ordering_warning():
    # 2**r0 - 1 >= 2 breaks P~_{K-1} > r^0 P~_K
    with pytest.warns(RuntimeWarning):
        fixed_noma_powers(SystemConfig(K=3, r0=1.6, check_gamma=False))


def test_fixed_noma_statistical_matches_monte_carlo():
    cfg = SystemConfig(K=4, P=100.0, r0=0.9)
    rep = fixed_noma_statistical(cfg)
    rng = np.random.default_rng(17)
    n = 40_000
    G = rng.exponential(1.0, (n, cfg.K)) / cfg.path_loss
    hits = mc_outage(rep.allocation.array, G, cfg.rhat0).mean(axis=0)
    p = 1 - rep.per_user / cfg.r0
    sigma = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(hits - p) <= 3 * sigma + 1e-12)


def test_fixed_noma_perfect_batch_matches_single():
    cfg = SystemConfig.from_snr_db(20.0, K=5)
    G = gain_matrix(cfg, 3, 4)
    R = fixed_noma_perfect_batch(G, cfg.P)
    for i, h in enumerate(G):
        np.testing.assert_allclose(R[i], fixed_noma_perfect(h, cfg).per_user, rtol=1e-13)


def test_tdma_allocation_validation():
    assert TdmaAllocation((1.0, 3.0)).average_power() == 2.0
    with pytest.raises(ValueError):
        TdmaAllocation((1.0, -1.0))


def _tdma_budget(rep, cfg):
    return rep.allocation.average_power()


def test_tdma_statistical_alpha1_closed_form():
    cfg = SystemConfig(K=4, P=100.0, r0=0.5, alpha=1.0)
    rep = tdma_statistical_solve(cfg)
    p = rep.allocation.array
    assert _tdma_budget(rep, cfg) == pytest.approx(cfg.P, rel=1e-12)
    # slot power proportional to sqrt(d^beta)
    ratio = p / np.sqrt(cfg.path_loss)
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12)
    # independent check: min sum c_k / p_k subject to mean(p) <= P
    c = tdma_outage_scale(cfg)
    prog = ConvexProgram(objective=lambda x: float(np.sum(c / x)),
                         gradient=lambda x: -c / x**2,
                         hessian=lambda x: np.diag(2 * c / x**3),
                         A=np.full((1, cfg.K), 1.0 / cfg.K), c=np.array([cfg.P]),
                         lower=np.zeros(cfg.K))
    sol = minimize_convex(prog, np.full(cfg.K, 0.5 * cfg.P), tol=1e-12)
    np.testing.assert_allclose(sol.x, p, rtol=1e-6)


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 3.0])
def test_tdma_statistical_single_user(alpha):
    cfg = SystemConfig(K=1, P=20.0, r0=0.9, alpha=alpha)
    rep = tdma_statistical_solve(cfg)
    assert rep.allocation.array[0] == pytest.approx(cfg.P)
    assert rep.per_user[0] == pytest.approx(0.9 * math.exp(-(2**0.9 - 1) / 20.0))


@pytest.mark.parametrize("K,alpha,snr", [(2, 0.5, 20.0), (2, 0.0, 10.0), (2, 2.0, 5.0),
                                         (3, 0.1, 25.0), (3, 1.0, 15.0), (3, 100.0, 20.0)])
def test_tdma_statistical_brute_force(K, alpha, snr):
    cfg = SystemConfig.from_snr_db(snr, K=K, r0=0.5, alpha=alpha)
    rep = tdma_statistical_solve(cfg)
    bf = tdma_brute_force(tdma_outage_scale(cfg), cfg.P, cfg.r0, alpha)
    # the grid only bounds the optimum from below
    assert rep.objective >= bf - 1e-3
    assert rep.objective - bf <= 1e-3 * max(1.0, abs(bf))
    assert _tdma_budget(rep, cfg) == pytest.approx(cfg.P, rel=1e-6)


def test_tdma_perfect_waterfilling():
    rng = np.random.default_rng(5)
    for K in (2, 4, 7):
        h = np.sort(rng.exponential(1.0, K))
        cfg = SystemConfig(K=K, P=float(rng.uniform(0.1, 20)), alpha=0.0)
        rep = tdma_perfect_solve(h, cfg)
        np.testing.assert_allclose(rep.allocation.array, waterfilling(h, K * cfg.P),
                                   atol=1e-6)


def test_tdma_perfect_single_user():
    cfg = SystemConfig(K=1, P=3.0, alpha=2.0)
    rep = tdma_perfect_solve([0.7], cfg)
    assert rep.allocation.array[0] == pytest.approx(3.0, rel=1e-6)
    assert rep.per_user[0] == pytest.approx(math.log(1 + 0.7 * 3.0), rel=1e-6)


def test_tdma_perfect_large_alpha_fair():
    cfg = SystemConfig.from_snr_db(20.0, K=5, alpha=100.0)
    for h in gain_matrix(cfg, 42, 5):
        rep = tdma_perfect_solve(h, cfg)
        assert rep.jain >= 0.99


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 2.0, 100.0])
def test_tdma_perfect_batch_matches_barrier(alpha):
    cfg = SystemConfig.from_snr_db(15.0, K=4, alpha=alpha)
    G = gain_matrix(cfg, 11, 6)
    R = tdma_perfect_batch(G, cfg.P, alpha)
    for i, h in enumerate(G):
        rep = tdma_perfect_solve(h, cfg)
        assert rep.allocation.average_power() == pytest.approx(cfg.P, rel=1e-6)
        np.testing.assert_allclose(R[i], rep.per_user, rtol=1e-6, atol=1e-12)
