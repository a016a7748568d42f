"""Present value, actuarial present value and variance of lease cash flows.

A contract active at age ``a`` that terminates ``k`` months later pays ``R`` at
the end of each of the ``k`` months plus the residual ``Z(a + k - 1) * V`` in
month ``k``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy.stats import norm

from .survival import HazardModel, SupportWindow, remaining_lifetime_pmf


class PricingError(ValueError):
    pass


@dataclass(frozen=True)
class LeaseContract:
    id: str
    payment: float
    vehicle_value: float
    age: int

    def __post_init__(self):
        if not self.payment > 0:
            raise PricingError(f"contract {self.id}: monthly payment must be positive")
        if not self.vehicle_value > 0:
            raise PricingError(f"contract {self.id}: vehicle value must be positive")


@dataclass(frozen=True)
class DepreciationCurve:
    """Z(j): expected vehicle value at age ``j`` as a fraction of the original value."""

    values: Mapping[int, float]
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        vals = {int(k): float(v) for k, v in dict(self.values).items()}
        for age, z in vals.items():
            if not 0.0 <= z <= 1.0:
                raise PricingError(f"depreciation Z({age})={z} outside [0, 1]")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, fn, ages) -> "DepreciationCurve":
        return cls({int(j): float(fn(j)) for j in ages})

    def __call__(self, age: int) -> float:
        try:
            return self.values[int(age)]
        except KeyError:
            raise PricingError(f"depreciation curve has no value at age {age}") from None

    def span(self, start: int, stop: int) -> np.ndarray:
        """Z at ages ``start .. stop - 1``."""
        return np.array([self(j) for j in range(start, stop)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["age", "z"])
            for age in sorted(self.values):
                w.writerow([age, repr(self.values[age])])

    @classmethod
    def from_csv(cls, path) -> "DepreciationCurve":
        values = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["age", "z"]:
                raise PricingError(f"{path}: expected header 'age,z', got {reader.fieldnames}")
            for row_no, row in enumerate(reader, start=2):
                try:
                    age, z = int(row["age"]), float(row["z"])
                except (TypeError, ValueError):
                    raise PricingError(f"{path}: row {row_no}: malformed number") from None
                if age in values:
                    raise PricingError(f"{path}: row {row_no}: duplicate age {age}")
                values[age] = z
        return cls(values)


@dataclass(frozen=True)
class Portfolio:
    contracts: tuple[LeaseContract, ...]
    window: SupportWindow

    def __post_init__(self):
        object.__setattr__(self, "contracts", tuple(self.contracts))
        if not self.contracts:
            raise PricingError("portfolio is empty")
        ids = [c.id for c in self.contracts]
        if len(set(ids)) != len(ids):
            raise PricingError("duplicate contract ids in portfolio")
        for c in self.contracts:
            if not self.window.delta <= c.age < self.window.omega:
                raise PricingError(
                    f"contract {c.id}: age {c.age} outside {self.window.delta}..{self.window.omega - 1}"
                )

    def __len__(self) -> int:
        return len(self.contracts)


@dataclass(frozen=True)
class ContractPrice:
    id: str
    apv: float
    variance: float

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class PriceReport:
    apv_trust: float
    var_trust: float
    per_contract: tuple[ContractPrice, ...]
    rate: float
    cte: float | None = None
    alpha: float | None = None
    tail: str | None = None
    excluded: tuple[str, ...] = field(default=())

    @property
    def sd_trust(self) -> float:
        return math.sqrt(self.var_trust)

    def to_json(self) -> dict:
        doc = {
            "apv_trust": round(self.apv_trust, 2),
            "sd_trust": round(self.sd_trust, 2),
            "var_trust": round(self.var_trust, 2),
            "cte": None if self.cte is None else round(self.cte, 2),
            "alpha": self.alpha,
            "tail": self.tail,
            "rate": self.rate,
            "contracts": [
                {"id": c.id, "apv": round(c.apv, 2), "sd": round(c.sd, 2)}
                for c in self.per_contract
            ],
        }
        if self.excluded:
            doc["excluded"] = list(self.excluded)
        return doc

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def _discount(r: float, k: np.ndarray) -> np.ndarray:
    return (1.0 + r) ** (-np.asarray(k, dtype=float))


def _annuity(r: float, k: np.ndarray) -> np.ndarray:
    """sum_{j=1..k} (1+r)^-j, accurate down to r -> 0."""
    k = np.asarray(k, dtype=float)
    if r == 0:
        return k
    return -np.expm1(-k * np.log1p(r)) / r


def pv_realized(contract: LeaseContract, curve: DepreciationCurve, r: float, k: int,
                max_age: int | None = None) -> float:
    """Present value if the contract terminates ``k`` months after valuation.

    Direct sum of the payments plus the discounted residual; the perpetuity
    rearrangement is not used here so ``r = 0`` needs no special case.
    """
    if k < 1:
        raise PricingError("remaining months k must be >= 1")
    if r < 0:
        raise PricingError("rate must be >= 0")
    if max_age is not None and contract.age + k > max_age:
        raise PricingError(
            f"contract {contract.id}: k={k} exceeds remaining support {max_age - contract.age}"
        )
    v = 1.0 / (1.0 + r)
    payments = sum(contract.payment * v**j for j in range(1, k + 1))
    return payments + curve(contract.age + k - 1) * contract.vehicle_value * v**k


def pv_table(contract: LeaseContract, curve: DepreciationCurve, r: float, max_age: int) -> np.ndarray:
    """PV for every possible remaining lifetime k = 1 .. max_age - age (vectorised)."""
    k = np.arange(1, max_age - contract.age + 1)
    z = curve.span(contract.age, max_age)
    return contract.payment * _annuity(r, k) + z * contract.vehicle_value * _discount(r, k)


def _moments(contract, model, curve, r):
    # Mean and centred second moment of the PV vector. For r > 0 this equals
    # the perpetuity form R/r + sum (ZV - R/r) v^k p_k, but stays finite and
    # cancellation-free however small r is.
    pmf = remaining_lifetime_pmf(model, contract.age)
    pv = pv_table(contract, curve, r, model.max_age)
    apv = float(np.dot(pmf, pv))
    var = float(np.dot(pmf, (pv - apv) ** 2))
    return apv, var


def apv_contract(contract: LeaseContract, model: HazardModel, curve: DepreciationCurve,
                 r: float) -> float:
    """Expected PV over the remaining-lifetime distribution.

    For ``r > 0`` this is ``R/r + sum_k (Z(a+k-1) V - R/r) (1+r)^-k Pr(K=k)``.
    """
    if r < 0:
        raise PricingError("rate must be >= 0")
    return _moments(contract, model, curve, r)[0]


def q_term(contract: LeaseContract, model: HazardModel, curve: DepreciationCurve,
           r: float) -> float:
    """``sum_k (Z(a+k-1) V - R/r)^2 (1+r)^(-2k) Pr(K=k)``; requires r > 0."""
    if r <= 0:
        raise PricingError("Q is only defined for r > 0")
    pmf = remaining_lifetime_pmf(model, contract.age)
    k = np.arange(1, len(pmf) + 1)
    z = curve.span(contract.age, model.max_age)
    w = (z * contract.vehicle_value - contract.payment / r) * _discount(r, k)
    return float(np.dot(pmf, w * w))


def var_pv_contract(contract: LeaseContract, model: HazardModel, curve: DepreciationCurve,
                    r: float) -> float:
    """Variance of the contract PV.

    Equal to ``2 (R/r) APV - (R/r)^2 + Q - APV^2`` for ``r > 0``; evaluated as
    ``sum_k (PV_k - APV)^2 Pr(K=k)`` so large ``R/r`` does not cancel away the
    result.
    """
    if r < 0:
        raise PricingError("rate must be >= 0")
    return _moments(contract, model, curve, r)[1]


def price_trust(portfolio: Portfolio, model: HazardModel, curve: DepreciationCurve,
                r: float) -> PriceReport:
    prices = []
    for c in portfolio.contracts:
        try:
            apv, var = _moments(c, model, curve, r)
        except (PricingError, ValueError) as exc:
            raise PricingError(f"contract {c.id}: {exc}") from exc
        prices.append(ContractPrice(c.id, apv, var))
    return PriceReport(
        apv_trust=math.fsum(p.apv for p in prices),
        var_trust=math.fsum(p.variance for p in prices),
        per_contract=tuple(prices),
        rate=r,
    )


def cte_normal(mu: float, sigma: float, alpha: float, tail: str = "upper") -> float:
    """Conditional tail expectation of N(mu, sigma^2) beyond its alpha-tail quantile."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if tail not in ("upper", "lower"):
        raise ValueError(f"tail must be 'upper' or 'lower', got {tail!r}")
    if sigma == 0:
        return mu
    z = norm.ppf(1.0 - alpha)
    shift = sigma * norm.pdf(z) / alpha
    return mu + shift if tail == "upper" else mu - shift


def with_cte(report: PriceReport, alpha: float = 0.05, tail: str = "upper") -> PriceReport:
    cte = cte_normal(report.apv_trust, report.sd_trust, alpha, tail)
    return replace(report, cte=cte, alpha=alpha, tail=tail)
