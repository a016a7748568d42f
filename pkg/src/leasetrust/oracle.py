"""Exact oracles for truncated/censored lifetime data on a finite support.

Every probability here is a finite double sum over the joint (X, Y) support,
independent of the estimator it is used to check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .survival import (
    HazardModel,
    ObservationArrays,
    SupportWindow,
    build_support_window,
    estimate_hazard,
)


@dataclass(frozen=True)
class OracleDistribution:
    """Known lifetime law X on 1..omega and truncation law Y on delta+1..m+delta."""

    pmf_x: np.ndarray
    pmf_y: np.ndarray
    window: SupportWindow

    def __post_init__(self):
        px = np.asarray(self.pmf_x, dtype=float)
        py = np.asarray(self.pmf_y, dtype=float)
        w = self.window
        if len(px) != w.omega:
            raise ValueError(f"pmf_x must cover ages 1..{w.omega}")
        if len(py) != w.m:
            raise ValueError(f"pmf_y must cover {w.delta + 1}..{w.m + w.delta}")
        for name, p in (("pmf_x", px), ("pmf_y", py)):
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} is not a probability vector")
        object.__setattr__(self, "pmf_x", px)
        object.__setattr__(self, "pmf_y", py)

    @property
    def xs(self) -> np.ndarray:
        return np.arange(1, self.window.omega + 1)

    @property
    def ys(self) -> np.ndarray:
        return np.arange(self.window.delta + 1, self.window.delta + self.window.m + 1)

    @property
    def alpha_accept(self) -> float:
        """Pr(X >= Y)."""
        joint = self.pmf_x[None, :] * self.pmf_y[:, None]
        return float(joint[self.ys[:, None] <= self.xs[None, :]].sum())


def make_truncated_geometric(p: float, omega: int) -> np.ndarray:
    """Geometric(p) on 1..omega with the tail mass lumped at omega."""
    if not 0 < p <= 1:
        raise ValueError("p must be in (0, 1]")
    x = np.arange(1, omega + 1)
    pmf = p * (1 - p) ** (x - 1.0)
    pmf[-1] = (1 - p) ** (omega - 1)
    return pmf


def geometric_oracle(p: float = 0.2, delta: int = 0, m: int = 10, omega: int = 24,
                    epsilon: int = 18) -> OracleDistribution:
    """Uniform Y, truncated-geometric X: the standard validation configuration."""
    window = build_support_window(delta, m, omega, epsilon)
    return OracleDistribution(make_truncated_geometric(p, omega), np.full(m, 1.0 / m), window)


def propose(oracle: OracleDistribution, size: int, rng: np.random.Generator):
    """Draw ``size`` independent (X, Y) pairs from the untruncated laws."""
    cx = np.cumsum(oracle.pmf_x)
    cy = np.cumsum(oracle.pmf_y)
    cx[-1] = cy[-1] = 1.0
    x = np.searchsorted(cx, rng.random(size), side="right") + 1
    y = np.searchsorted(cy, rng.random(size), side="right") + oracle.window.delta + 1
    return x, y


def generate_dataset(oracle: OracleDistribution, n: int,
                     rng: np.random.Generator) -> ObservationArrays:
    """Rejection-sample ``n`` truncated pairs and censor them at ``Y + tau``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    alpha = oracle.alpha_accept
    if alpha <= 0:
        raise ValueError("Pr(X >= Y) is zero: every pair is truncated")
    tau = oracle.window.tau
    xs, ys = [], []
    have = 0
    while have < n:
        batch = int((n - have) / alpha * 1.1) + 64
        x, y = propose(oracle, batch, rng)
        keep = x >= y
        xs.append(x[keep])
        ys.append(y[keep])
        have += int(keep.sum())
    x = np.concatenate(xs)[:n]
    y = np.concatenate(ys)[:n]
    c = y + tau
    return ObservationArrays(y, np.minimum(x, c), x <= c)


@dataclass(frozen=True)
class TrueQuantities:
    ages: np.ndarray
    lam: np.ndarray
    f_star: np.ndarray
    c_tau: np.ndarray


def _at_risk_window(oracle: OracleDistribution, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Pr(Y <= lo, hi <= Y + tau) for arrays of (lo, hi)."""
    ys = oracle.ys
    ok = (ys[None, :] <= lo[:, None]) & (hi[:, None] <= ys[None, :] + oracle.window.tau)
    return ok.astype(float) @ oracle.pmf_y


def true_conditional_quantities(oracle: OracleDistribution) -> TrueQuantities:
    """Exact lambda_tau, f_star and C_tau on the observable support."""
    ages = oracle.window.support
    alpha = oracle.alpha_accept
    surv = np.array([oracle.pmf_x[a - 1 :].sum() for a in ages])
    px = oracle.pmf_x[ages - 1]
    window_prob = _at_risk_window(oracle, ages, ages)
    c = window_prob * surv / alpha
    f = px * window_prob / alpha
    lam = np.divide(f, c, out=np.zeros_like(f), where=c > 0)
    return TrueQuantities(ages, lam, f, c)


def true_hazard_model(oracle: OracleDistribution) -> HazardModel:
    q = true_conditional_quantities(oracle)
    return HazardModel(oracle.window, q.lam, q.f_star, q.c_tau, n=0, meta={"source": "oracle"})


def cross_moments(oracle: OracleDistribution, k: int, k2: int) -> tuple[float, float]:
    """(c_tau(k, k2), r_tau(k, k2)) by exact enumeration."""
    lo, hi = min(k, k2), max(k, k2)
    alpha = oracle.alpha_accept
    w = _at_risk_window(oracle, np.array([lo]), np.array([hi]))[0]
    c = oracle.pmf_x[hi - 1 :].sum() * w / alpha
    r = oracle.pmf_x[hi - 1] * w / alpha
    return float(c), float(r)


def covariance_matrices(oracle: OracleDistribution) -> tuple[np.ndarray, np.ndarray]:
    """(Sigma, Sigma_c): limiting covariances of sqrt(n)(lam_hat - lam) and sqrt(n)(C_hat - C)."""
    q = true_conditional_quantities(oracle)
    f, c = q.f_star, q.c_tau
    sigma_diag = np.divide(f * (c - f), c**3, out=np.zeros_like(f), where=c > 0)
    L = len(q.ages)
    sigma_c = np.empty((L, L))
    for i, a in enumerate(q.ages):
        for j, b in enumerate(q.ages):
            if i == j:
                sigma_c[i, j] = c[i] * (1 - c[i])
            else:
                sigma_c[i, j] = cross_moments(oracle, int(a), int(b))[0] - c[i] * c[j]
    return np.diag(sigma_diag), sigma_c


def brute_force_conditional(oracle: OracleDistribution) -> TrueQuantities:
    """Same quantities as :func:`true_conditional_quantities`, by summing the joint table.

    Kept deliberately naive: loops over every (x, y) cell.
    """
    w = oracle.window
    ages = w.support
    f = np.zeros(len(ages))
    c = np.zeros(len(ages))
    total = 0.0
    for xi, x in enumerate(oracle.xs):
        for yi, y in enumerate(oracle.ys):
            p = oracle.pmf_x[xi] * oracle.pmf_y[yi]
            if x < y:
                continue
            total += p
            cens = y + w.tau
            t = min(x, cens)
            for i, a in enumerate(ages):
                if y <= a <= t:
                    c[i] += p
                if x <= cens and x == a:
                    f[i] += p
    f /= total
    c /= total
    lam = np.divide(f, c, out=np.zeros_like(f), where=c > 0)
    return TrueQuantities(ages, lam, f, c)


@dataclass
class ReplicationReport:
    ages: np.ndarray
    n: int
    replicates: int
    lam_true: np.ndarray
    lam_mean: np.ndarray
    lam_var: np.ndarray
    var_theory: np.ndarray
    lam_corr: np.ndarray
    c_true: np.ndarray
    c_cov: np.ndarray
    c_cov_theory: np.ndarray
    c_cov_se: np.ndarray
    band_emp: np.ndarray
    band_theory: np.ndarray
    lam_hats: np.ndarray

    def max_offdiag_corr(self) -> float:
        L = len(self.ages)
        off = self.lam_corr[~np.eye(L, dtype=bool)]
        off = off[np.isfinite(off)]
        return float(np.max(np.abs(off))) if len(off) else 0.0

    def var_rel_error(self) -> np.ndarray:
        return np.divide(
            np.abs(self.lam_var - self.var_theory),
            self.var_theory,
            out=np.where(self.lam_var == 0, 0.0, np.inf),
            where=self.var_theory > 0,
        )

    def band_discrepancy(self) -> float:
        """Max |empirical - theoretical| band endpoint, relative to the theoretical half-width."""
        half = (self.band_theory[:, 1] - self.band_theory[:, 0]) / 2
        ok = half > 0
        err = np.abs(self.band_emp - self.band_theory)[ok] / half[ok, None]
        return float(err.max()) if err.size else 0.0

    def rows(self):
        """Per-age (theory, empirical) pairs, suitable for a CSV band plot."""
        for i, a in enumerate(self.ages):
            yield {
                "age": int(a),
                "lambda_true": self.lam_true[i],
                "lambda_mean": self.lam_mean[i],
                "var_theory": self.var_theory[i],
                "var_empirical": self.lam_var[i],
                "lo_theory": self.band_theory[i, 0],
                "lo_empirical": self.band_emp[i, 0],
                "hi_theory": self.band_theory[i, 1],
                "hi_empirical": self.band_emp[i, 1],
            }


def replication_study(oracle: OracleDistribution, n: int, replicates: int,
                      rng: np.random.Generator | int, level: float = 0.95) -> ReplicationReport:
    """Refit the hazard on fresh datasets and compare moments with the limit theory.

    Each replicate uses its own child generator spawned from ``rng``.
    """
    if n < 1 or replicates < 1:
        raise ValueError("n and replicates must be >= 1")
    seq = rng.bit_generator.seed_seq if isinstance(rng, np.random.Generator) else (
        np.random.SeedSequence(rng)
    )
    children = seq.spawn(replicates)
    q = true_conditional_quantities(oracle)
    L = len(q.ages)
    lam_hats = np.empty((replicates, L))
    c_hats = np.empty((replicates, L))
    for i, child in enumerate(children):
        obs = generate_dataset(oracle, n, np.random.default_rng(child))
        model = estimate_hazard(obs, oracle.window)
        lam_hats[i] = model.lam
        c_hats[i] = model.c_hat

    sigma, sigma_c = covariance_matrices(oracle)
    var_theory = np.diag(sigma) / n
    ddof = 1 if replicates > 1 else 0
    lam_var = lam_hats.var(axis=0, ddof=ddof)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(lam_hats, rowvar=False) if replicates > 1 else np.eye(L)
    c_cov = np.cov(c_hats, rowvar=False, ddof=ddof) if replicates > 1 else np.zeros((L, L))
    centred = c_hats - c_hats.mean(axis=0)
    prods = centred[:, :, None] * centred[:, None, :]
    c_cov_se = prods.std(axis=0, ddof=ddof) / np.sqrt(replicates)

    z = norm.ppf(0.5 + level / 2)
    sd = np.sqrt(var_theory)
    band_theory = np.column_stack((q.lam - z * sd, q.lam + z * sd))
    tail = 100 * (1 - level) / 2
    band_emp = np.column_stack((
        np.percentile(lam_hats, tail, axis=0),
        np.percentile(lam_hats, 100 - tail, axis=0),
    ))
    return ReplicationReport(
        ages=q.ages, n=n, replicates=replicates,
        lam_true=q.lam, lam_mean=lam_hats.mean(axis=0), lam_var=lam_var,
        var_theory=var_theory, lam_corr=corr,
        c_true=q.c_tau, c_cov=c_cov, c_cov_theory=sigma_c / n, c_cov_se=c_cov_se,
        band_emp=band_emp, band_theory=band_theory, lam_hats=lam_hats,
    )


def consistency_ladder(oracle: OracleDistribution, sizes, replicates: int,
                       seed: int = 0) -> dict[int, float]:
    """Median max-norm hazard error over ``replicates`` fits, for each sample size."""
    truth = true_conditional_quantities(oracle).lam
    out = {}
    for n in sizes:
        rngs = np.random.SeedSequence([seed, int(n)]).spawn(replicates)
        errs = [
            np.max(np.abs(estimate_hazard(generate_dataset(oracle, n, np.random.default_rng(s)),
                                          oracle.window).lam - truth))
            for s in rngs
        ]
        out[int(n)] = float(np.median(errs))
    return out
