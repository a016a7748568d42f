"""Load lease-level CSV data and turn it into estimator and pricing inputs."""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .cashflow import DepreciationCurve, LeaseContract, Portfolio
from .survival import ObservationArrays, SupportWindow

log = logging.getLogger(__name__)

PORTFOLIO_HEADER = [
    "id",
    "origination_month",
    "scheduled_term",
    "monthly_payment",
    "vehicle_value",
    "termination_month",
    "residual_paid",
]

RATIO_BOUND = 1.5


class DataError(ValueError):
    """Input data failed validation. ``problems`` holds (row, message) pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"row {row}: {msg}" if row is not None else msg for row, msg in self.problems]
        super().__init__("; ".join(lines))


@dataclass(frozen=True)
class LeaseRecord:
    id: str
    origination_month: int
    scheduled_term: int
    monthly_payment: float
    vehicle_value: float
    termination_month: int | None = None
    residual_paid: float | None = None

    @property
    def terminated(self) -> bool:
        return self.termination_month is not None


@dataclass(frozen=True)
class RawDepreciationPoint:
    age: int
    ratio: float
    count: int
    flagged: bool = False


def _int(text: str, name: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{name}: {text!r} is not a number") from None
    if not value.is_integer():
        raise ValueError(f"{name}: {text!r} is not an integer")
    return int(value)


def _float(text: str, name: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{name}: {text!r} is not a number") from None
    if not math.isfinite(value):
        raise ValueError(f"{name}: {text!r} is not finite")
    return value


def _parse_row(row: dict) -> LeaseRecord:
    rid = (row["id"] or "").strip()
    if not rid:
        raise ValueError("id is empty")
    term_text = (row["termination_month"] or "").strip()
    resid_text = (row["residual_paid"] or "").strip()
    rec = LeaseRecord(
        id=rid,
        origination_month=_int(row["origination_month"], "origination_month"),
        scheduled_term=_int(row["scheduled_term"], "scheduled_term"),
        monthly_payment=_float(row["monthly_payment"], "monthly_payment"),
        vehicle_value=_float(row["vehicle_value"], "vehicle_value"),
        termination_month=_int(term_text, "termination_month") if term_text else None,
        residual_paid=_float(resid_text, "residual_paid") if resid_text else None,
    )
    if rec.origination_month < 1:
        raise ValueError("origination_month must be >= 1")
    if rec.scheduled_term < 1:
        raise ValueError("scheduled_term must be >= 1")
    if rec.monthly_payment <= 0:
        raise ValueError("monthly_payment must be positive")
    if rec.vehicle_value <= 0:
        raise ValueError("vehicle_value must be positive")
    if rec.terminated and rec.termination_month < rec.origination_month + 1:
        raise ValueError(
            f"termination_month {rec.termination_month} is before origination "
            f"{rec.origination_month} + 1"
        )
    if rec.residual_paid is not None:
        if rec.residual_paid < 0:
            raise ValueError("residual_paid must be >= 0")
        if not rec.terminated:
            raise ValueError("residual_paid given for a lease without termination_month")
    return rec


def parse_portfolio(source) -> list[LeaseRecord]:
    """Parse a lease CSV (path or open text file). Any bad row fails the whole file."""
    if hasattr(source, "read"):
        return _parse(source)
    with open(source, newline="", encoding="utf-8") as fh:
        return _parse(fh)


def _parse(fh) -> list[LeaseRecord]:
    reader = csv.DictReader(fh)
    if reader.fieldnames != PORTFOLIO_HEADER:
        raise DataError([(1, f"expected header {','.join(PORTFOLIO_HEADER)}, got {reader.fieldnames}")])
    records, problems, seen = [], [], {}
    for row_no, row in enumerate(reader, start=2):
        if None in row or any(v is None for v in row.values()):
            problems.append((row_no, "wrong number of fields"))
            continue
        try:
            rec = _parse_row(row)
        except ValueError as exc:
            problems.append((row_no, str(exc)))
            continue
        if rec.id in seen:
            problems.append((row_no, f"duplicate id {rec.id!r} (first at row {seen[rec.id]})"))
            continue
        seen[rec.id] = row_no
        records.append(rec)
    if problems:
        raise DataError(problems)
    return records


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_portfolio(records, target) -> None:
    """Write records in the CSV layout read by :func:`parse_portfolio`."""
    own = not hasattr(target, "write")
    fh = open(target, "w", newline="", encoding="utf-8") if own else target
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PORTFOLIO_HEADER)
        for r in records:
            w.writerow([_cell(getattr(r, name)) for name in PORTFOLIO_HEADER])
    finally:
        if own:
            fh.close()


def dumps_portfolio(records) -> str:
    buf = io.StringIO()
    write_portfolio(records, buf)
    return buf.getvalue()


@dataclass
class DerivedData:
    observations: ObservationArrays
    contracts: list[LeaseContract]
    window: SupportWindow
    excluded: list[tuple[str, str]] = field(default_factory=list)
    n_events: int = 0
    n_censored: int = 0

    @property
    def portfolio(self) -> Portfolio:
        return Portfolio(tuple(self.contracts), self.window)

    def reconciles(self, n_records: int) -> bool:
        return self.n_events + self.n_censored + len(self.excluded) == n_records


def filter_term(records, term: int | None):
    """Keep only the cohort with the given scheduled term (None keeps everything)."""
    if term is None:
        return list(records)
    return [r for r in records if r.scheduled_term == term]


def derive_observations(records, window: SupportWindow) -> DerivedData:
    """Classify every record as an observed termination, a censored lease, or excluded.

    Terminations past ``omega`` (extensions) are aged at ``omega``.
    """
    d, m, tau, eps = window.delta, window.m, window.tau, window.epsilon
    ys, ts, evs = [], [], []
    contracts, excluded = [], []
    for r in records:
        T = r.origination_month
        if not 1 <= T <= m:
            excluded.append((r.id, f"origination month {T} outside 1..{m}"))
            continue
        y = m + d + 1 - T
        if r.terminated and r.termination_month <= eps:
            x = min(r.termination_month - T, window.omega)
            if x < y:
                excluded.append((r.id, f"terminated at age {x} before trust entry age {y}"))
                continue
            ys.append(y)
            ts.append(x)
            evs.append(True)
            continue
        age = eps - T
        if not window.censoring or age >= window.omega:
            excluded.append((r.id, f"still active at age {age}, beyond maximum lifetime {window.omega}"))
            continue
        ys.append(y)
        ts.append(y + tau)
        evs.append(False)
        contracts.append(LeaseContract(r.id, r.monthly_payment, r.vehicle_value, age))
    for rid, why in excluded:
        log.warning("excluded %s: %s", rid, why)
    obs = ObservationArrays(np.array(ys, dtype=np.int64), np.array(ts, dtype=np.int64),
                           np.array(evs, dtype=bool))
    n_ev = int(np.sum(evs))
    return DerivedData(obs, contracts, window, excluded, n_ev, len(evs) - n_ev)


def estimate_depreciation(records) -> list[RawDepreciationPoint]:
    """Average residual / vehicle value by the age at which Z is evaluated.

    A lease terminating at age ``x`` contributes to age ``x - 1``, matching
    the pricing convention that the residual is ``Z(x - 1) * V``.
    """
    groups: dict[int, list[float]] = defaultdict(list)
    for r in records:
        if r.terminated and r.residual_paid is not None:
            age = r.termination_month - r.origination_month - 1
            groups[age].append(r.residual_paid / r.vehicle_value)
    if not groups:
        raise DataError([(None, "no terminated records with a residual payment")])
    points = []
    for age in sorted(groups):
        vals = groups[age]
        ratio = math.fsum(vals) / len(vals)
        flagged = not 0 <= ratio <= RATIO_BOUND
        if flagged:
            log.warning("depreciation ratio %.3f at age %d outside [0, %.1f]", ratio, age, RATIO_BOUND)
        points.append(RawDepreciationPoint(age, ratio, len(vals), flagged))
    return points


def _tricube(u: np.ndarray) -> np.ndarray:
    u = np.clip(np.abs(u), 0.0, 1.0)
    return (1 - u**3) ** 3


def loess_quadratic(x: np.ndarray, y: np.ndarray, at: np.ndarray, span: float) -> np.ndarray:
    """Local quadratic fit with tricube weights over the nearest ``span`` fraction of points.

    At least four neighbours are used so three carry positive weight.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    q = min(n, max(4, math.ceil(span * n)))
    out = np.empty(len(at))
    for i, x0 in enumerate(np.asarray(at, dtype=float)):
        dist = np.abs(x - x0)
        h = np.partition(dist, q - 1)[q - 1]
        w = _tricube(dist / h) if h > 0 else (dist == 0).astype(float)
        dx = x - x0
        A = np.column_stack((np.ones(n), dx, dx**2)) * np.sqrt(w)[:, None]
        b = y * np.sqrt(w)
        coef, *_ = np.linalg.lstsq(A, b, rcond=None)
        out[i] = coef[0]
    return out


def smooth_depreciation(points, ages, span: float = 0.75) -> DepreciationCurve:
    """Smooth raw depreciation points and evaluate Z at every age in ``ages``.

    With fewer than four points the curve falls back to linear interpolation
    (flat beyond the ends) and carries a ``linear-fallback`` flag.
    """
    if not 0 < span <= 1:
        raise ValueError("span must be in (0, 1]")
    pts = sorted(points, key=lambda p: p.age)
    if not pts:
        raise ValueError("no depreciation points")
    x = np.array([p.age for p in pts], dtype=float)
    y = np.array([p.ratio for p in pts], dtype=float)
    ages = np.asarray(sorted(set(int(a) for a in ages)))
    if len(pts) < 4:
        log.warning("only %d depreciation points; using linear interpolation", len(pts))
        z = np.interp(ages, x, y)
        flags = ("linear-fallback",)
    else:
        z = loess_quadratic(x, y, ages, span)
        flags = ()
    z = np.clip(z, 0.0, 1.0)
    return DepreciationCurve({int(a): float(v) for a, v in zip(ages, z)}, flags=flags)
