import math

import numpy as np
import pytest
from scipy import stats

from leasetrust.cashflow import LeaseContract, Portfolio, price_trust, pv_table
from leasetrust.montecarlo import (
    BLOCK,
    SimulationConfig,
    _rng,
    empirical_cte,
    sample_hazard_vector,
    sample_termination,
    simulate_apv_distribution,
    simulate_trust,
)
from leasetrust.studies import (
    constant_hazard_model,
    geometric_curve,
    random_hazard_effect,
    synthetic_portfolio,
    two_lease_fixture,
)
from leasetrust.survival import (
    HazardCovariance,
    HazardModel,
    build_support_window,
    remaining_lifetime_pmf,
)


@pytest.fixture(scope="module")
def two_lease():
    return two_lease_fixture()


def _certain_model():
    w = build_support_window(0, 5, 10, 16)
    lam = np.full(10, 0.3)
    lam[[2, 5]] = 1.0  # ages 3 and 6 end with certainty
    lam[4] = 0.0  # nobody ends at age 5
    return HazardModel.from_hazards(w, lam)


# -- termination sampling ----------------------------------------------------

def test_sample_termination_examples():
    geo = constant_hazard_model()
    assert sample_termination(geo, 6, 0.5) == 4
    assert sample_termination(geo, 6, 0.4879) == 3
    assert sample_termination(geo, 6, 1e-12) == 1
    assert sample_termination(geo, 6, 1.0) == 18
    certain = _certain_model()
    assert all(sample_termination(certain, 2, u) == 1 for u in (1e-9, 0.3, 0.999999))


def test_sample_termination_frequencies():
    geo = constant_hazard_model()
    pmf = remaining_lifetime_pmf(geo, 6)
    n = 100_000
    k = sample_termination(geo, 6, np.random.default_rng(8).random(n))
    counts = np.bincount(k, minlength=len(pmf) + 1)[1:]
    assert counts.sum() == n
    se = np.sqrt(n * pmf * (1 - pmf))
    assert np.all(np.abs(counts - n * pmf) <= 3 * se + 1e-9)


# -- cash-flow bands ---------------------------------------------------------

def test_degenerate_bands_have_zero_width():
    model = _certain_model()
    curve = geometric_curve(10)
    contracts = (LeaseContract("a", 100.0, 1000.0, 2), LeaseContract("b", 50.0, 2000.0, 4))
    cfg = SimulationConfig(replicates=50, seed=3, horizon=4)
    bands = simulate_trust(Portfolio(contracts, model.window), model, curve, cfg)
    # a: ends in month 1 with residual Z(2); b: ends in month 2 with residual Z(5)
    expected = np.array([150 + curve(2) * 1000, 50 + curve(5) * 2000, 0.0, 0.0])
    assert np.allclose(bands.mean, expected)
    assert np.allclose(bands.bands[2.5], expected) and np.allclose(bands.bands[97.5], expected)
    assert np.all(bands.width() == 0)


def _exact_monthly_moments(portfolio, model, curve, horizon):
    """Mean and variance of each month's trust cash flow, by enumeration."""
    mean, var = np.zeros(horizon), np.zeros(horizon)
    for c in portfolio.contracts:
        pmf = remaining_lifetime_pmf(model, c.age)
        alive = 1 - np.concatenate(([0.0], np.cumsum(pmf)))  # Pr(K >= month)
        for month in range(1, min(horizon, len(pmf)) + 1):
            R, res = c.payment, curve(c.age + month - 1) * c.vehicle_value
            p_alive, p_end = alive[month - 1], pmf[month - 1]
            m1 = R * p_alive + res * p_end
            m2 = R**2 * p_alive + (2 * R * res + res**2) * p_end
            mean[month - 1] += m1
            var[month - 1] += m2 - m1**2
    return mean, var


def test_band_mean_matches_exact_expectation(two_lease):
    model, portfolio, curve = two_lease
    n = 20_000
    bands = simulate_trust(portfolio, model, curve, SimulationConfig(replicates=n, seed=12, horizon=20))
    mean, var = _exact_monthly_moments(portfolio, model, curve, 20)
    se = np.sqrt(var / n)
    assert np.all(np.abs(bands.mean - mean) <= 3 * se)


def test_band_brackets_mean_where_residuals_are_common(two_lease):
    # When a month's residual arrives with probability under 2.5% the upper
    # band is just the payments and the mean can sit above it, so the
    # ordering is only checked where residuals are reasonably likely.
    model, portfolio, curve = two_lease
    bands = simulate_trust(portfolio, model, curve, SimulationConfig(replicates=20_000, seed=12, horizon=18))
    p_none = np.ones(18)
    for c in portfolio.contracts:
        pmf = remaining_lifetime_pmf(model, c.age)
        p_none[: len(pmf)] *= 1 - pmf[:18]
    common = 1 - p_none >= 0.05
    assert common.sum() >= 10
    assert np.all(bands.bands[2.5][common] <= bands.mean[common])
    assert np.all(bands.mean[common] <= bands.bands[97.5][common])


def test_bands_cover_fresh_paths(two_lease):
    model, portfolio, curve = two_lease
    bands = simulate_trust(portfolio, model, curve, SimulationConfig(replicates=1000, seed=1, horizon=18))
    inside = []
    for s in range(100):
        actual = simulate_trust(portfolio, model, curve,
                                SimulationConfig(replicates=1, seed=10_000 + s, horizon=18)).mean
        inside.append(np.mean((actual >= bands.bands[2.5]) & (actual <= bands.bands[97.5])))
    assert np.mean(inside) >= 0.90


def test_band_csv_layout(tmp_path, two_lease):
    model, portfolio, curve = two_lease
    bands = simulate_trust(portfolio, model, curve, SimulationConfig(replicates=10, seed=1, horizon=3))
    path = tmp_path / "bands.csv"
    bands.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "month,mean,p2.5,p97.5"
    assert len(lines) == 4


# -- reproducibility and seeding ---------------------------------------------

def test_reproducible(two_lease):
    model, portfolio, curve = two_lease
    cfg = SimulationConfig(replicates=3000, seed=77, horizon=18)
    a = simulate_apv_distribution(portfolio, model, curve, 0.03, cfg)
    b = simulate_apv_distribution(portfolio, model, curve, 0.03, cfg)
    assert np.array_equal(a.values, b.values)
    assert a.to_json() == b.to_json()
    c = simulate_apv_distribution(portfolio, model, curve, 0.03,
                                  SimulationConfig(replicates=3000, seed=78, horizon=18))
    assert not np.array_equal(a.values, c.values)


def test_blocks_are_order_independent(two_lease):
    model, portfolio, curve = two_lease
    n = BLOCK + 300
    cfg = SimulationConfig(replicates=n, seed=5, horizon=18)
    run = simulate_apv_distribution(portfolio, model, curve, 0.03, cfg, keep_contracts=True)
    # rebuild the second block by itself, before the first
    tables = [pv_table(c, curve, 0.03, model.max_age) for c in portfolio.contracts]
    u = _rng(5, 1, 0).random((300, 2))
    k = np.column_stack([sample_termination(model, c.age, u[:, j])
                         for j, c in enumerate(portfolio.contracts)])
    rebuilt = np.column_stack([tables[j][k[:, j] - 1] for j in range(2)])
    assert np.allclose(run.contract_values[BLOCK:], rebuilt, rtol=1e-13)
    # a shorter run is a prefix of a longer one
    short = simulate_apv_distribution(portfolio, model, curve, 0.03,
                                      SimulationConfig(replicates=100, seed=5, horizon=18))
    assert np.array_equal(short.values, run.values[:100])


def test_single_replicate(two_lease):
    model, portfolio, curve = two_lease
    e = simulate_apv_distribution(portfolio, model, curve, 0.03,
                                  SimulationConfig(replicates=1, seed=0, horizon=18))
    assert e.mean == e.median and e.sd == 0.0


def test_rejects_contract_without_remaining_support(two_lease):
    model, _, curve = two_lease
    w = build_support_window(0, 20, 24, 20 + 1 + 10)  # xi = 24
    short = HazardModel.from_hazards(w, np.full(12, 0.2))  # max age 12
    with pytest.raises(ValueError):
        simulate_trust(Portfolio((LeaseContract("z", 1.0, 1.0, 13),), w), short, curve,
                       SimulationConfig(replicates=2))


def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(replicates=0)
    with pytest.raises(ValueError):
        SimulationConfig(horizon=0)
    with pytest.raises(ValueError):
        SimulationConfig(percentiles=(101.0,))


# -- PV distribution ---------------------------------------------------------

def test_mc_mean_and_independence(two_lease):
    model, portfolio, curve = two_lease
    price = price_trust(portfolio, model, curve, 0.03)
    n = 200_000
    e = simulate_apv_distribution(portfolio, model, curve, 0.03,
                                  SimulationConfig(replicates=n, seed=2022, horizon=18),
                                  keep_contracts=True)
    assert abs(e.mean - price.apv_trust) <= 3 * price.sd_trust / math.sqrt(n)
    assert e.sd == pytest.approx(price.sd_trust, rel=0.01)
    rho = np.corrcoef(e.contract_values, rowvar=False)[0, 1]
    assert abs(rho) < 3 / math.sqrt(n) + 1e-3
    assert e.cte >= e.mean


def test_empirical_cte():
    v = np.arange(1, 101, dtype=float)
    assert empirical_cte(v, 0.05) == np.mean([96, 97, 98, 99, 100])
    assert empirical_cte(v, 0.05, "lower") == 3.0
    assert empirical_cte(v, 0.001) == 100.0
    with pytest.raises(ValueError):
        empirical_cte(v, 0.0)
    with pytest.raises(ValueError):
        empirical_cte(v, 0.1, "middle")


def test_clt_shape_large_portfolio():
    model, portfolio, curve = synthetic_portfolio()
    assert len(portfolio) >= 100
    e = simulate_apv_distribution(portfolio, model, curve, 0.01,
                                  SimulationConfig(replicates=20_000, seed=4, horizon=24))
    price = price_trust(portfolio, model, curve, 0.01)
    assert abs(stats.skew(e.values)) < 0.2
    assert abs(stats.kurtosis(e.values)) < 0.5
    assert e.mean == pytest.approx(price.apv_trust, rel=1e-3)
    assert e.sd == pytest.approx(price.sd_trust, rel=0.03)


# -- random hazards ----------------------------------------------------------

def _fitted_like(lam, c, n):
    w = build_support_window(0, 5, len(lam), len(lam) + 6)
    lam = np.asarray(lam)
    return HazardModel(w, lam, lam * c, np.full(len(lam), c), n=n)


def test_hazard_sampling_collapses_with_vanishing_variance():
    model = _fitted_like([0.2, 0.3, 0.5, 1.0], 0.5, 10)
    cov = HazardCovariance(np.zeros(4), 10)
    drawn = sample_hazard_vector(model, cov, np.random.default_rng(0))
    assert np.array_equal(drawn.lam, model.lam)


def test_hazard_sampling_moments_and_independence():
    model = _fitted_like([0.2, 0.3, 0.25, 0.4, 0.5], 0.6, 400)
    cov = HazardCovariance(np.full(5, 0.3), 400)
    rng = np.random.default_rng(21)
    draws = np.array([sample_hazard_vector(model, cov, rng).lam for _ in range(10_000)])
    se = np.sqrt(cov.variance / 10_000)
    assert np.all(np.abs(draws.mean(axis=0) - model.lam) < 3 * se)
    corr = np.corrcoef(draws, rowvar=False)
    assert np.all(np.abs(corr[~np.eye(5, dtype=bool)]) < 3 / math.sqrt(10_000))


def test_hazard_sampling_clamps_and_rejects_undefined():
    model = _fitted_like([0.01, 0.99, 0.5], 0.5, 2)
    cov = HazardCovariance(np.full(3, 5.0), 2)
    rng = np.random.default_rng(1)
    for _ in range(50):
        lam = sample_hazard_vector(model, cov, rng).lam
        assert np.all((lam >= 0) & (lam <= 1))
    with pytest.raises(ValueError):
        sample_hazard_vector(model, HazardCovariance(np.array([0.1, np.nan, 0.1]), 2, (2,)), rng)


def test_random_hazard_requires_covariance(two_lease):
    model, portfolio, curve = two_lease
    with pytest.raises(ValueError):
        simulate_trust(portfolio, model, curve, SimulationConfig(replicates=2, random_hazard=True))


def test_random_hazard_widens_bands():
    fixed, sampled = random_hazard_effect(replicates=200)
    assert sampled > fixed
