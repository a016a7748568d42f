import math

import numpy as np
import pytest

from leasetrust.oracle import (
    OracleDistribution,
    geometric_oracle,
    brute_force_conditional,
    consistency_ladder,
    covariance_matrices,
    cross_moments,
    generate_dataset,
    make_truncated_geometric,
    propose,
    replication_study,
    true_conditional_quantities,
    true_hazard_model,
)
from leasetrust.survival import build_support_window


def test_truncated_geometric():
    pmf = make_truncated_geometric(0.2, 24)
    assert pmf[0] == pytest.approx(0.2)
    assert pmf[-1] == pytest.approx(0.8**23)
    assert abs(pmf.sum() - 1) <= 1e-12
    point = make_truncated_geometric(1.0, 24)
    assert point[0] == 1.0 and point[1:].sum() == 0.0
    with pytest.raises(ValueError):
        make_truncated_geometric(0.0, 5)


def test_oracle_validation():
    w = build_support_window(0, 3, 4, 6)
    with pytest.raises(ValueError):
        OracleDistribution(np.full(4, 0.3), np.full(3, 1 / 3), w)
    with pytest.raises(ValueError):
        OracleDistribution(np.full(4, 0.25), np.full(2, 0.5), w)


def test_generated_triples_are_valid():
    oracle = geometric_oracle()
    obs = generate_dataset(oracle, 5000, np.random.default_rng(0))
    obs.validate(oracle.window)
    assert np.all(obs.y <= obs.t)
    assert np.all(obs.t <= 17)
    assert np.all(obs.t[~obs.event] == obs.y[~obs.event] + 7)


def test_acceptance_rate_matches_enumeration():
    oracle = geometric_oracle()
    n = 100_000
    x, y = propose(oracle, n, np.random.default_rng(3))
    alpha = oracle.alpha_accept
    se = math.sqrt(alpha * (1 - alpha) / n)
    assert abs(np.mean(x >= y) - alpha) < 3 * se
    naive = sum(px * py for xv, px in zip(oracle.xs, oracle.pmf_x)
                for yv, py in zip(oracle.ys, oracle.pmf_y) if yv <= xv)
    assert alpha == pytest.approx(naive, rel=1e-14)


def test_generate_rejects_impossible_truncation():
    w = build_support_window(3, 2, 4, 8)  # Y in 4..5
    pmf_x = np.array([0.5, 0.5, 0.0, 0.0])
    oracle = OracleDistribution(pmf_x, np.array([0.5, 0.5]), w)
    with pytest.raises(ValueError):
        generate_dataset(oracle, 10, np.random.default_rng(0))


def test_true_quantities_match_brute_force():
    for oracle in (geometric_oracle(), geometric_oracle(p=0.05, delta=2, m=7, omega=15, epsilon=14)):
        fast = true_conditional_quantities(oracle)
        slow = brute_force_conditional(oracle)
        assert np.allclose(fast.f_star, slow.f_star, rtol=1e-12, atol=0)
        assert np.allclose(fast.c_tau, slow.c_tau, rtol=1e-12, atol=0)
        assert np.all(fast.f_star <= fast.c_tau)


def test_lambda_tau_equals_raw_hazard():
    oracle = geometric_oracle()
    q = true_conditional_quantities(oracle)
    raw = np.array([oracle.pmf_x[a - 1] / oracle.pmf_x[a - 1 :].sum() for a in q.ages])
    assert np.allclose(q.lam, raw, rtol=1e-12)
    assert np.allclose(q.lam, 0.2)


def test_no_truncation_no_censoring():
    w = build_support_window(0, 1, 12, 40)
    pmf_x = make_truncated_geometric(0.3, 12)
    oracle = OracleDistribution(pmf_x, np.array([1.0]), w)
    q = true_conditional_quantities(oracle)
    assert oracle.alpha_accept == pytest.approx(1.0)
    assert np.allclose(q.f_star, pmf_x)
    assert np.allclose(q.c_tau, [pmf_x[i:].sum() for i in range(12)])


def test_event_mass_equals_uncensored_probability():
    oracle = geometric_oracle()
    q = true_conditional_quantities(oracle)
    tau = oracle.window.tau
    num = den = 0.0
    for xv, px in zip(oracle.xs, oracle.pmf_x):
        for yv, py in zip(oracle.ys, oracle.pmf_y):
            if yv <= xv:
                den += px * py
                if xv <= yv + tau:
                    num += px * py
    assert q.f_star.sum() == pytest.approx(num / den, rel=1e-12)


def test_cross_moment_identities():
    oracle = geometric_oracle()
    q = true_conditional_quantities(oracle)
    ages = [int(a) for a in q.ages]
    for i, k in enumerate(ages):
        assert cross_moments(oracle, k, k)[0] == pytest.approx(q.c_tau[i], rel=1e-13)
        for k2 in ages:
            c, r = cross_moments(oracle, k, k2)
            assert (c, r) == cross_moments(oracle, k2, k)
            top = max(k, k2) - ages[0]
            # the step that makes the hazard estimates asymptotically uncorrelated
            assert abs(q.f_star[top] * c - r * q.c_tau[top]) <= 1e-12


def test_covariance_matrices():
    oracle = geometric_oracle()
    sigma, sigma_c = covariance_matrices(oracle)
    q = true_conditional_quantities(oracle)
    assert np.count_nonzero(sigma - np.diag(np.diag(sigma))) == 0
    assert np.allclose(np.diag(sigma), q.f_star * (q.c_tau - q.f_star) / q.c_tau**3)
    assert np.allclose(np.diag(sigma_c), q.c_tau * (1 - q.c_tau))
    assert np.allclose(sigma_c, sigma_c.T)


def test_true_hazard_model_round_trip():
    model = true_hazard_model(geometric_oracle())
    assert model.n == 0
    assert np.allclose(model.lam, 0.2)


def test_small_replication_study_shapes():
    oracle = geometric_oracle()
    rr = replication_study(oracle, 2000, 50, 9)
    L = len(oracle.window.support)
    assert rr.lam_hats.shape == (50, L)
    assert rr.band_theory.shape == rr.band_emp.shape == (L, 2)
    rows = list(rr.rows())
    assert len(rows) == L and rows[0]["age"] == 1
    # same seed, same result
    again = replication_study(oracle, 2000, 50, 9)
    assert np.array_equal(rr.lam_hats, again.lam_hats)


def test_zero_hazard_index_has_zero_variance():
    # X never ends at age 3, so lambda_tau(3) = 0 and its estimate is always 0
    pmf_x = np.array([0.3, 0.3, 0.0, 0.2, 0.2])
    oracle = OracleDistribution(pmf_x, np.full(3, 1 / 3), build_support_window(0, 3, 5, 9))
    rr = replication_study(oracle, 500, 30, 4)
    assert rr.lam_var[2] == 0.0
    assert rr.var_rel_error()[2] == 0.0


def test_consistency_ladder_small():
    errs = consistency_ladder(geometric_oracle(), [200, 2000, 20000], 30, seed=1)
    vals = [errs[n] for n in (200, 2000, 20000)]
    assert vals[0] > vals[1] > vals[2]
