import numpy as np
import pytest

from alphanoma.fairness import (
    AlphaSearchSpec, FairnessInfeasibleError, _grid, evaluate_alpha, search_alpha,
)
from alphanoma.model import SystemConfig

CFG = SystemConfig(K=6, P=100.0, r0=0.9)


def test_lowest_requirement_is_alpha_lo():
    alpha, rep = search_alpha(AlphaSearchSpec(FIr=1 / 6), CFG)
    assert alpha == 0.0
    assert rep.jain >= 1 / 6


def test_absolute_fairness_needs_large_alpha():
    alpha, rep = search_alpha(AlphaSearchSpec(FIr=1.0), CFG)
    assert alpha >= 50
    assert rep.jain >= 0.999


@pytest.mark.parametrize("fir", [0.6, 0.8, 1.0])
def test_noma_beats_tdma_at_moderate_fairness(fir):
    a_n, noma = search_alpha(AlphaSearchSpec(FIr=fir), CFG)
    a_t, tdma = search_alpha(AlphaSearchSpec(FIr=fir, scheme="tdma"), CFG)
    assert noma.total > tdma.total


def test_tdma_can_switch_off_weak_users():
    # at FIr = 0.5 TDMA serves only the four strongest users and out-earns
    # NOMA, whose SIC ordering can only switch off users from the strong end
    a_t, tdma = search_alpha(AlphaSearchSpec(FIr=0.5, scheme="tdma"), CFG)
    assert np.all(tdma.per_user[:2] == 0)
    _, noma = search_alpha(AlphaSearchSpec(FIr=0.5), CFG)
    assert np.all(noma.per_user > 0)


@pytest.mark.parametrize("fir", [0.3, 0.6, 0.8, 0.95, 0.999])
@pytest.mark.parametrize("scheme", ["noma", "tdma"])
def test_returned_alpha_meets_requirement(fir, scheme):
    spec = AlphaSearchSpec(FIr=fir, scheme=scheme)
    alpha, rep = search_alpha(spec, CFG)
    assert rep.jain >= fir - 1e-9
    assert rep.info["fi"] == rep.jain


@pytest.fixture(scope="module")
def grid_run():
    return search_alpha(AlphaSearchSpec(FIr=0.9, strategy="grid"), CFG)


def test_grid_picks_best_feasible_probe(grid_run):
    alpha, rep = grid_run
    feasible = [(a, fi, m) for a, fi, m in rep.info["probes"] if fi >= 0.9 - 1e-9]
    best = max(m for _, _, m in feasible)
    assert rep.info["metric"] == best
    assert alpha == min(a for a, _, m in feasible if m == best)


@pytest.mark.parametrize("fir", [0.7, 0.9, 0.99])
def test_bisection_agrees_with_grid_when_monotone(fir, grid_run):
    probes = grid_run[1].info["probes"]
    fis = [fi for _, fi, _ in probes]
    assert all(b >= a - 1e-9 for a, b in zip(fis, fis[1:]))
    # the probe grid does not depend on FIr; pick its answer directly
    feasible = [(m, -a) for a, fi, m in probes if fi >= fir - 1e-9]
    a_g = -max(feasible)[1]
    a_b, _ = search_alpha(AlphaSearchSpec(FIr=fir), CFG)
    grid = _grid(AlphaSearchSpec(FIr=fir))
    step = grid[2] / grid[1]
    assert a_b <= a_g * (1 + 1e-3)
    assert a_g <= a_b * step * (1 + 1e-3)


def test_tdma_fi_not_monotone_falls_back_to_grid():
    _, rep = search_alpha(AlphaSearchSpec(FIr=0.9, scheme="tdma"), CFG)
    assert rep.info["strategy"] == "grid"


def test_infeasible_requirement():
    spec = AlphaSearchSpec(FIr=0.99, alpha_range=(0.0, 0.5))
    with pytest.raises(FairnessInfeasibleError) as exc:
        search_alpha(spec, CFG)
    assert exc.value.max_fi < 0.99


def test_requirement_below_jain_floor():
    with pytest.raises(ValueError):
        search_alpha(AlphaSearchSpec(FIr=0.1), CFG)


@pytest.mark.parametrize("kw", [dict(FIr=0.0), dict(FIr=1.2), dict(FIr=0.5, scheme="cdma"),
                                dict(FIr=0.5, alpha_range=(3, 1)),
                                dict(FIr=0.5, strategy="random")])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        AlphaSearchSpec(**kw)


def test_perfect_regime_pilot_average():
    cfg = SystemConfig.from_snr_db(20.0, K=4)
    spec = AlphaSearchSpec(FIr=0.8, regime="perfect", pilot_blocks=16)
    alpha, rep = search_alpha(spec, cfg)
    assert rep.jain >= 0.8 - 1e-9
    assert rep.info["blocks"] == 16
    again = evaluate_alpha(spec, cfg, alpha)
    assert again.fi == rep.jain


def test_perfect_regime_explicit_gains():
    cfg = SystemConfig.from_snr_db(10.0, K=3)
    H = np.array([[0.05, 0.4, 1.1], [0.2, 0.3, 2.0]])
    spec = AlphaSearchSpec(FIr=0.9, regime="perfect", scheme="tdma")
    alpha, rep = search_alpha(spec, cfg, H)
    assert rep.info["blocks"] == 2
    assert rep.jain >= 0.9 - 1e-9
    with pytest.raises(ValueError):
        search_alpha(spec, cfg, H[:, ::-1])
