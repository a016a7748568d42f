"""Reference fixtures and validation studies with pass/fail tolerances."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.stats import norm

from .cashflow import (
    DepreciationCurve,
    LeaseContract,
    Portfolio,
    apv_contract,
    cte_normal,
    price_trust,
    pv_realized,
    var_pv_contract,
)
from .ingest import LeaseRecord, derive_observations
from .montecarlo import (
    SimulationConfig,
    empirical_cte,
    simulate_apv_distribution,
    simulate_trust,
)
from .oracle import (
    OracleDistribution,
    geometric_oracle,
    make_truncated_geometric,
    propose,
    replication_study,
)
from .survival import (
    HazardModel,
    asymptotic_covariance,
    build_support_window,
    estimate_hazard,
    interpolate_zero_hazards,
    remaining_lifetime_pmf,
)

# Two-lease example: constant hazard 0.2 on ages 1..24 (hazard 1 at 24), r = 3%.
TWO_LEASE = {
    "apv1": 56_197.86,
    "sd1": 14_328.49,
    "apv2": 40_765.56,
    "sd2": 8_342.445,
    "var_sum": 274_902_053.0,
    "pv_spot": 62_223.25,
}
TWO_LEASE_RATE = 0.03


@dataclass
class Check:
    name: str
    value: float
    expected: float | None
    tolerance: str
    passed: bool

    def line(self) -> str:
        exp = "" if self.expected is None else f" expected {self.expected:.6g}"
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.value:.6g}{exp} ({self.tolerance})"

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "value": float(self.value),
            "expected": None if self.expected is None else float(self.expected),
            "tolerance": self.tolerance,
            "passed": bool(self.passed),
        }


@dataclass
class StudyReport:
    study: str
    checks: list[Check] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    params: dict = field(default_factory=dict)
    extra: object = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, value, expected, tolerance, passed) -> Check:
        c = Check(name, float(value), expected, tolerance, bool(passed))
        self.checks.append(c)
        return c

    def absolute(self, name, value, expected, tol) -> Check:
        return self.add(name, value, expected, f"+/-{tol:g}", abs(value - expected) <= tol)

    def as_dict(self) -> dict:
        return {
            "study": self.study,
            "passed": self.passed,
            "params": self.params,
            "checks": [c.as_dict() for c in self.checks],
        }


def geometric_curve(omega: int = 24, base: float = 1.05) -> DepreciationCurve:
    return DepreciationCurve.from_function(lambda j: base ** (-j), range(0, omega + 1))


def constant_hazard_model(p: float = 0.2, delta: int = 0, m: int = 20, omega: int = 24,
                          epsilon: int = 25) -> HazardModel:
    """Truncated geometric lifetime as a hazard model: p on ages < omega, 1 at omega."""
    window = build_support_window(delta, m, omega, epsilon)
    lam = np.full(window.xi - delta, p)
    if window.xi == omega:
        lam[-1] = 1.0
    return HazardModel.from_hazards(window, lam, source="truncated-geometric", p=p)


def two_lease_fixture():
    """(model, portfolio, curve) for the two-lease example; ages 6 and 9."""
    model = constant_hazard_model()
    contracts = (
        LeaseContract("lease1", 100.0, 100_000.0, 6),
        LeaseContract("lease2", 500.0, 80_000.0, 9),
    )
    return model, Portfolio(contracts, model.window), geometric_curve()


def two_lease_records() -> list[LeaseRecord]:
    """Portfolio rows that derive to the two-lease example at epsilon = 25, m = 20."""
    return [
        LeaseRecord("lease1", 19, 24, 100.0, 100_000.0),
        LeaseRecord("lease2", 16, 24, 500.0, 80_000.0),
    ]


def brute_moments(contract, model, curve, r) -> tuple[float, float]:
    """Mean and variance of PV by enumerating every remaining lifetime."""
    pmf = remaining_lifetime_pmf(model, contract.age)
    pvs = [pv_realized(contract, curve, r, k) for k in range(1, len(pmf) + 1)]
    mean = math.fsum(p * v for p, v in zip(pmf, pvs))
    second = math.fsum(p * (v - mean) ** 2 for p, v in zip(pmf, pvs))
    return mean, second


def random_instance(rng: np.random.Generator, max_support: int = 50):
    """A random (contract, hazard model, curve, rate) with support length <= max_support."""
    L = int(rng.integers(2, max_support + 1))
    window = build_support_window(0, 1, L, L + 5)
    lam = rng.uniform(0.0, 0.6, size=L)
    lam[rng.random(L) < 0.1] = 0.0
    model = HazardModel.from_hazards(window, lam)
    age = int(rng.integers(0, L))
    contract = LeaseContract("c", float(rng.uniform(50, 1500)), float(rng.uniform(5e3, 1.5e5)), age)
    z = np.sort(rng.uniform(0.2, 1.0, size=L + 1))[::-1]
    curve = DepreciationCurve(dict(enumerate(z)))
    r = float(rng.choice([0.0, rng.uniform(1e-3, 0.05)]))
    return contract, model, curve, r


def oracle_equivalence(instances: int = 500, seed: int = 7, rel: float = 1e-10):
    """Largest relative gap between closed-form and enumerated APV / variance."""
    rng = np.random.default_rng(seed)
    worst_apv = worst_var = 0.0
    for _ in range(instances):
        c, model, curve, r = random_instance(rng)
        m_bf, v_bf = brute_moments(c, model, curve, r)
        apv = apv_contract(c, model, curve, r)
        var = var_pv_contract(c, model, curve, r)
        worst_apv = max(worst_apv, abs(apv - m_bf) / abs(m_bf))
        scale = max(abs(v_bf), m_bf**2 * 1e-12)
        worst_var = max(worst_var, abs(var - v_bf) / scale)
    return worst_apv, worst_var


def theorem1_study(replicates: int = 1_000_000, seed: int = 2022,
                   instances: int = 500) -> StudyReport:
    rep = StudyReport("theorem1", params={"replicates": replicates, "seed": seed})
    model, portfolio, curve = two_lease_fixture()
    r = TWO_LEASE_RATE
    c1, c2 = portfolio.contracts
    rep.absolute("pv_realized(lease1, k=3)", pv_realized(c1, curve, r, 3), TWO_LEASE["pv_spot"], 0.01)
    price = price_trust(portfolio, model, curve, r)
    p1, p2 = price.per_contract
    rep.absolute("APV lease1", p1.apv, TWO_LEASE["apv1"], 0.02)
    rep.absolute("sd lease1", p1.sd, TWO_LEASE["sd1"], 0.02)
    rep.absolute("APV lease2", p2.apv, TWO_LEASE["apv2"], 0.02)
    rep.absolute("sd lease2", p2.sd, TWO_LEASE["sd2"], 0.02)
    rep.absolute("Var1 + Var2", price.var_trust, TWO_LEASE["var_sum"], 5.0)

    cfg = SimulationConfig(replicates=replicates, seed=seed, horizon=24)
    single = simulate_apv_distribution(Portfolio((c1,), model.window), model, curve, r, cfg)
    tol = 3 * p1.sd / math.sqrt(replicates)
    rep.absolute("MC mean lease1", single.mean, p1.apv, tol)
    rep.add("MC sd lease1", single.sd, p1.sd, "1% relative",
            abs(single.sd - p1.sd) <= 0.01 * p1.sd)
    both = simulate_apv_distribution(portfolio, model, curve, r, cfg, keep_contracts=True)
    rho = float(np.corrcoef(both.contract_values, rowvar=False)[0, 1]) if replicates > 2 else 0.0
    rep.add("MC correlation lease1/lease2", rho, 0.0, "|rho| < 0.01", abs(rho) < 0.01)
    tol2 = 3 * price.sd_trust / math.sqrt(replicates)
    rep.absolute("MC mean trust", both.mean, price.apv_trust, tol2)

    if instances:
        wa, wv = oracle_equivalence(instances)
        rep.add("closed form vs enumeration (APV)", wa, 0.0, "rel <= 1e-10", wa <= 1e-10)
        rep.add("closed form vs enumeration (variance)", wv, 0.0, "rel <= 1e-10", wv <= 1e-10)
    return rep


def asymptotics_study(n: int = 30_000, replicates: int = 2_000, seed: int = 1) -> StudyReport:
    oracle = geometric_oracle()
    rep = StudyReport("asymptotics", params={"n": n, "replicates": replicates, "seed": seed})
    rr = replication_study(oracle, n, replicates, seed)
    var_err = rr.var_rel_error()
    rep.add("max relative error, var(lambda_hat) vs Sigma/n", float(var_err.max()), 0.0,
            "< 0.10", bool(np.all(var_err < 0.10)))
    corr_tol = 3 / math.sqrt(replicates)
    rep.add("max |cross-correlation| of lambda_hat", rr.max_offdiag_corr(), 0.0,
            f"< 3/sqrt(R) = {corr_tol:.4f}", rr.max_offdiag_corr() < corr_tol)
    se_mean = np.sqrt(rr.var_theory / replicates)
    z_mean = np.divide(np.abs(rr.lam_mean - rr.lam_true), se_mean,
                       out=np.zeros_like(se_mean), where=se_mean > 0)
    # 3-sigma family-wise: per-age threshold Bonferroni-adjusted over the support
    z_fw = float(norm.ppf(1 - (2 * norm.sf(3.0)) / (2 * len(z_mean))))
    rep.add("max |mean - lambda_tau| in SE", float(z_mean.max()), 0.0,
            f"< {z_fw:.2f} SE (3-sigma family-wise)", bool(np.all(z_mean < z_fw)))
    band = rr.band_discrepancy()
    rep.add("band discrepancy (relative to half-width)", band, 0.0, "< 0.15", band < 0.15)
    err = np.abs(rr.c_cov - rr.c_cov_theory)
    z_c = np.divide(err, rr.c_cov_se, out=np.zeros_like(err), where=rr.c_cov_se > 0)
    rep.add("max |Sigma_c/n - cov(C_hat)| in MC SE", float(z_c.max()), 0.0, "< 5 SE",
            bool(np.all(z_c < 5)))
    rep.rows = list(rr.rows())
    rep.extra = rr
    return rep


def synthetic_portfolio(size: int = 120, seed: int = 11, p: float = 0.2):
    """Random contracts of mixed ages under the constant-hazard model."""
    rng = np.random.default_rng(seed)
    model = constant_hazard_model(p=p)
    contracts = tuple(
        LeaseContract(
            f"s{i:04d}",
            float(rng.uniform(200, 700)),
            float(rng.uniform(2e4, 7e4)),
            int(rng.integers(0, model.max_age)),
        )
        for i in range(size)
    )
    return model, Portfolio(contracts, model.window), geometric_curve()


def normal_tail_integral(alpha: float) -> float:
    z = norm.ppf(1 - alpha)
    val, _ = integrate.quad(lambda x: x * norm.pdf(x), z, np.inf, epsabs=1e-13, epsrel=1e-12)
    return val / alpha


def cte_study(replicates: int = 100_000, seed: int = 3, alpha: float = 0.05) -> StudyReport:
    rep = StudyReport("cte", params={"replicates": replicates, "seed": seed, "alpha": alpha})
    exact = normal_tail_integral(alpha)
    rep.absolute("cte_normal(0, 1, alpha, upper) vs quadrature", cte_normal(0, 1, alpha), exact, 1e-3)

    draws = np.random.default_rng(seed).standard_normal(replicates) * 32_725 + 14.84e6
    formula = cte_normal(14.84e6, 32_725, alpha)
    emp = empirical_cte(draws, alpha)
    rep.add("normal draws: formula vs empirical CTE", emp, formula, "1% relative",
            abs(emp - formula) <= 0.01 * abs(formula))

    model, portfolio, curve = synthetic_portfolio()
    r = 0.01
    price = price_trust(portfolio, model, curve, r)
    cfg = SimulationConfig(replicates=replicates, seed=seed, horizon=24)
    sim = simulate_apv_distribution(portfolio, model, curve, r, cfg, alpha=alpha)
    formula = cte_normal(price.apv_trust, price.sd_trust, alpha)
    rep.add(f"{len(portfolio)}-contract portfolio: formula vs empirical CTE", sim.cte, formula,
            "1% relative", abs(sim.cte - formula) <= 0.01 * abs(formula))
    # the same gap in units of sigma, for information
    rep.params["portfolio_cte_gap_sigma"] = (sim.cte - formula) / price.sd_trust
    return rep


STUDIES = {
    "theorem1": theorem1_study,
    "asymptotics": asymptotics_study,
    "cte": cte_study,
}


def synthetic_lease_records(oracle: OracleDistribution, n: int, rng: np.random.Generator,
                            curve: DepreciationCurve, term: int | None = None,
                            payment=(200.0, 700.0), value=(2e4, 7e4)) -> list[LeaseRecord]:
    """Lease rows as they would look at calendar time epsilon.

    Origination ``T = m + delta + 1 - Y``; leases with ``X < Y`` never reach the
    trust and are redrawn. Terminations up to epsilon carry ``Z(X-1) V`` as the
    residual.
    """
    w = oracle.window
    term = w.omega if term is None else term
    out = []
    while len(out) < n:
        x, y = propose(oracle, 2 * (n - len(out)) + 16, rng)
        for xi, yi in zip(x, y):
            if xi < yi or len(out) >= n:
                continue
            T = w.m + w.delta + 1 - int(yi)
            R = float(rng.uniform(*payment))
            V = float(rng.uniform(*value))
            end = T + int(xi)
            if end <= w.epsilon:
                out.append(LeaseRecord(f"L{len(out):05d}", T, term, R, V, end,
                                       curve(int(xi) - 1) * V))
            else:
                out.append(LeaseRecord(f"L{len(out):05d}", T, term, R, V))
    return out


def lease_return_oracle(delta: int = 3, m: int = 18, omega: int = 24, epsilon: int = 34,
                        early: float = 0.03) -> OracleDistribution:
    """Small constant early-termination hazard with most leases returned at term."""
    window = build_support_window(delta, m, omega, epsilon)
    pmf = make_truncated_geometric(early, omega)
    return OracleDistribution(pmf, np.full(m, 1.0 / m), window)


def small_trust(size: int = 50, seed: int = 612, oracle: OracleDistribution | None = None):
    """Fit on a ``size``-lease sample; returns (fitted model, covariance, portfolio, curve).

    Zero hazards are interpolated before the covariance is formed.
    """
    oracle = oracle or lease_return_oracle()
    curve = geometric_curve(oracle.window.omega)
    rng = np.random.default_rng(seed)
    records = synthetic_lease_records(oracle, size, rng, curve)
    data = derive_observations(records, oracle.window)
    model = interpolate_zero_hazards(estimate_hazard(data.observations, oracle.window))
    return model, asymptotic_covariance(model), data.portfolio, curve


def random_hazard_effect(replicates: int = 200, seed: int = 5, size: int = 50):
    """Mean 95% band width with deterministic vs sampled hazard vectors."""
    model, cov, portfolio, curve = small_trust(size)
    w = model.window
    horizon = w.m + w.omega - w.epsilon
    fixed = simulate_trust(portfolio, model, curve,
                           SimulationConfig(replicates=replicates, seed=seed, horizon=horizon))
    rand = simulate_trust(portfolio, model, curve,
                          SimulationConfig(replicates=replicates, seed=seed, horizon=horizon,
                                           random_hazard=True), covariance=cov)
    return float(fixed.width().mean()), float(rand.width().mean())
