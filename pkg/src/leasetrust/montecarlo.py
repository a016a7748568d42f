"""Monte Carlo projection of trust cash flows.

Replicates are processed in fixed-size blocks. Block ``b`` draws its uniforms
from ``SeedSequence(seed, spawn_key=(b, stream))`` so every
(replicate, contract) draw is a pure function of the root seed, whatever order
blocks are evaluated in.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cashflow import DepreciationCurve, Portfolio, pv_table
from .survival import (
    HazardCovariance,
    HazardModel,
    _extend,
    remaining_lifetime_pmf,
)

BLOCK = 8192
_UNIFORM_STREAM = 0
_HAZARD_STREAM = 1


@dataclass(frozen=True)
class SimulationConfig:
    replicates: int = 1000
    seed: int = 0
    horizon: int = 12
    random_hazard: bool = False
    percentiles: tuple[float, ...] = (2.5, 97.5)

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for p in self.percentiles:
            if not 0 <= p <= 100:
                raise ValueError(f"percentile {p} outside [0, 100]")


@dataclass(frozen=True)
class BandMatrix:
    months: np.ndarray
    mean: np.ndarray
    bands: dict[float, np.ndarray]

    def width(self, lo: float = 2.5, hi: float = 97.5) -> np.ndarray:
        return self.bands[hi] - self.bands[lo]

    def to_csv(self, path) -> None:
        keys = sorted(self.bands)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["month", "mean", *(f"p{_fmt_pct(p)}" for p in keys)])
            for i, month in enumerate(self.months):
                w.writerow([int(month), repr(float(self.mean[i])),
                            *(repr(float(self.bands[p][i])) for p in keys)])


def _fmt_pct(p: float) -> str:
    return f"{p:g}"


@dataclass(frozen=True)
class ApvEmpirics:
    mean: float
    median: float
    sd: float
    cte: float
    alpha: float
    tail: str
    replicates: int
    seed: int
    values: np.ndarray = field(repr=False)
    contract_values: np.ndarray | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "median": self.median,
            "sd": self.sd,
            "cte": self.cte,
            "alpha": self.alpha,
            "tail": self.tail,
            "replicates": self.replicates,
            "seed": self.seed,
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def _cdf(pmf: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    return cdf


def sample_termination(model: HazardModel, age: int, u):
    """Inverse-CDF draw of the remaining lifetime: smallest k with CDF(k) >= u."""
    cdf = _cdf(remaining_lifetime_pmf(model, age))
    k = np.searchsorted(cdf, u, side="left") + 1
    return int(k) if np.ndim(k) == 0 else k


def sample_hazard_vector(model: HazardModel, covariance: HazardCovariance,
                         rng: np.random.Generator) -> HazardModel:
    """Draw each estimated hazard from its normal limit and clamp to [0, 1].

    Ages past ``window.xi`` (a geometric tail) are rebuilt from the drawn
    hazard at ``xi``.
    """
    k = len(covariance.diag)
    if np.any(np.isnan(covariance.diag)):
        raise ValueError(
            f"variance undefined at ages {list(covariance.undefined)}; "
            "interpolate zero hazards first"
        )
    sd = np.sqrt(covariance.variance)
    drawn = np.clip(model.lam[:k] + sd * rng.standard_normal(k), 0.0, 1.0)
    return _with_hazards(model, drawn)


def _with_hazards(model: HazardModel, drawn: np.ndarray) -> HazardModel:
    k = len(drawn)
    c = model.c_hat[:k]
    base = HazardModel(model.window, drawn, drawn * c, c, n=model.n,
                       unobserved=model.unobserved, meta=model.meta)
    if model.max_age > model.window.xi:
        return _extend(base, float(drawn[-1]))
    return base


def _cdf_table(portfolio: Portfolio, model: HazardModel) -> list[np.ndarray]:
    cache: dict[int, np.ndarray] = {}
    out = []
    for c in portfolio.contracts:
        if c.age not in cache:
            cache[c.age] = _cdf(remaining_lifetime_pmf(model, c.age))
        out.append(cache[c.age])
    return out


def _invert(cdfs: list[np.ndarray], u: np.ndarray) -> np.ndarray:
    k = np.empty(u.shape, dtype=np.int64)
    for j, cdf in enumerate(cdfs):
        k[..., j] = np.searchsorted(cdf, u[..., j], side="left") + 1
    return k


def _blocks(replicates: int):
    for b in range(math.ceil(replicates / BLOCK)):
        start = b * BLOCK
        yield b, start, min(BLOCK, replicates - start)


def _rng(seed: int, block: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block, stream)))


def _draw_lifetimes(portfolio: Portfolio, model: HazardModel, config: SimulationConfig,
                    covariance: HazardCovariance | None):
    """Yield ``(start, k)`` with k of shape (block replicates, contracts)."""
    for c in portfolio.contracts:
        if c.age >= model.max_age:
            raise ValueError(f"contract {c.id}: age {c.age} has no remaining support")
    if config.random_hazard and covariance is None:
        raise ValueError("random_hazard requires a covariance")
    fixed = None if config.random_hazard else _cdf_table(portfolio, model)
    for b, start, count in _blocks(config.replicates):
        u = _rng(config.seed, b, _UNIFORM_STREAM).random((count, len(portfolio)))
        if fixed is not None:
            yield start, _invert(fixed, u)
            continue
        hrng = _rng(config.seed, b, _HAZARD_STREAM)
        k = np.empty(u.shape, dtype=np.int64)
        for i in range(count):
            drawn = sample_hazard_vector(model, covariance, hrng)
            k[i] = _invert(_cdf_table(portfolio, drawn), u[i])
        yield start, k


def simulate_trust(portfolio: Portfolio, model: HazardModel, curve: DepreciationCurve,
                   config: SimulationConfig,
                   covariance: HazardCovariance | None = None) -> BandMatrix:
    """Monthly trust cash flows: mean and percentile bands across replicates.

    A contract drawn to terminate in month ``k`` pays ``R`` in months
    ``1 .. k-1`` and ``R + Z(a+k-1) V`` in month ``k``; months past the
    horizon are dropped. ``covariance`` is required when
    ``config.random_hazard`` is set.
    """
    H = config.horizon
    pay = np.array([c.payment for c in portfolio.contracts])
    residual = [curve.span(c.age, model.max_age) * c.vehicle_value for c in portfolio.contracts]
    totals = np.zeros((config.replicates, H))
    for start, k in _draw_lifetimes(portfolio, model, config, covariance):
        flows = totals[start : start + len(k)]
        for month in range(1, H + 1):
            flows[:, month - 1] = (k >= month) @ pay
        for j, res in enumerate(residual):
            rows = np.flatnonzero(k[:, j] <= H)
            kj = k[rows, j]
            np.add.at(flows, (rows, kj - 1), res[kj - 1])
    months = np.arange(1, H + 1)
    bands = {
        float(p): np.percentile(totals, p, axis=0, method="inverted_cdf")
        for p in config.percentiles
    }
    return BandMatrix(months, totals.mean(axis=0), bands)


def empirical_cte(values: np.ndarray, alpha: float, tail: str = "upper") -> float:
    """Mean of the ``ceil(alpha * n)`` largest (upper) or smallest (lower) values."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    v = np.sort(np.asarray(values, dtype=float))
    m = max(1, math.ceil(alpha * len(v)))
    if tail == "upper":
        return float(v[-m:].mean())
    if tail == "lower":
        return float(v[:m].mean())
    raise ValueError(f"tail must be 'upper' or 'lower', got {tail!r}")


def simulate_apv_distribution(portfolio: Portfolio, model: HazardModel,
                              curve: DepreciationCurve, r: float, config: SimulationConfig,
                              covariance: HazardCovariance | None = None,
                              alpha: float = 0.05, tail: str = "upper",
                              keep_contracts: bool = False) -> ApvEmpirics:
    """Distribution of the trust PV across replicates.

    Uses the same draws as :func:`simulate_trust` for an identical config, so
    bands and PV empirics describe the same simulated paths.
    """
    tables = [pv_table(c, curve, r, model.max_age) for c in portfolio.contracts]
    totals = np.zeros(config.replicates)
    per = np.zeros((config.replicates, len(portfolio))) if keep_contracts else None
    for start, k in _draw_lifetimes(portfolio, model, config, covariance):
        block = np.empty(k.shape)
        for j, tab in enumerate(tables):
            block[:, j] = tab[k[:, j] - 1]
        totals[start : start + len(k)] = block.sum(axis=1)
        if per is not None:
            per[start : start + len(k)] = block
    n = len(totals)
    return ApvEmpirics(
        mean=float(totals.mean()),
        median=float(np.median(totals)),
        sd=float(totals.std(ddof=1)) if n > 1 else 0.0,
        cte=empirical_cte(totals, alpha, tail),
        alpha=alpha,
        tail=tail,
        replicates=n,
        seed=config.seed,
        values=totals,
        contract_values=per,
    )
