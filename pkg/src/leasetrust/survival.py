"""Discrete-time hazard estimation under left truncation and right censoring.

Ages are 1-based integer months. A contract originated in calendar month ``T``
enters the trust only if its lifetime ``X`` is at least ``Y = m + delta + 1 - T``
and is censored at ``C = Y + tau``. The observable ages are
``delta + 1 .. xi`` with ``xi = min(omega, epsilon - 1)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np


class WindowError(ValueError):
    """Raised when window parameters or observations are inconsistent."""


@dataclass(frozen=True)
class SupportWindow:
    delta: int
    m: int
    omega: int
    epsilon: int
    tau: int
    xi: int

    @property
    def censoring(self) -> bool:
        """False when the observation time is past every possible termination."""
        return self.epsilon <= self.m + self.omega

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.delta + 1, self.xi + 1)

    @property
    def y_range(self) -> tuple[int, int]:
        return self.delta + 1, self.m + self.delta

    def as_dict(self) -> dict:
        return {
            "delta": self.delta,
            "m": self.m,
            "omega": self.omega,
            "epsilon": self.epsilon,
            "tau": self.tau,
            "xi": self.xi,
        }


def build_support_window(delta: int, m: int, omega: int, epsilon: int) -> SupportWindow:
    """Derive ``tau`` and ``xi`` from the trust geometry.

    When ``epsilon > m + omega`` no contract can still be active, and ``tau``
    is capped at ``omega - delta - 1`` so that ``Y + tau >= omega`` for every
    admissible ``Y``.
    """
    delta, m, omega, epsilon = int(delta), int(m), int(omega), int(epsilon)
    if delta < 0:
        raise WindowError(f"delta must be >= 0, got {delta}")
    if m < 1:
        raise WindowError(f"m must be >= 1, got {m}")
    if omega <= delta:
        raise WindowError(f"omega={omega} must exceed delta={delta}: empty observable support")
    if epsilon < m + delta + 1:
        raise WindowError(
            f"epsilon={epsilon} precedes the trust start m + delta + 1 = {m + delta + 1}"
        )
    tau = min(epsilon - (m + delta + 1), omega - delta - 1)
    xi = min(omega, epsilon - 1)
    return SupportWindow(delta, m, omega, epsilon, tau, xi)


@dataclass(frozen=True)
class ObservationTriple:
    y: int
    t: int
    event: bool

    def check(self, window: SupportWindow) -> None:
        if self.y > self.t:
            raise WindowError(f"truncation time y={self.y} exceeds observed time t={self.t}")
        lo, hi = window.y_range
        if not lo <= self.y <= hi:
            raise WindowError(f"y={self.y} outside truncation range {lo}..{hi}")
        if self.event:
            if not window.delta + 1 <= self.t <= window.xi:
                raise WindowError(
                    f"event time t={self.t} outside observable support "
                    f"{window.delta + 1}..{window.xi}"
                )
            if self.t > self.y + window.tau:
                raise WindowError(f"event at t={self.t} after censoring time {self.y + window.tau}")
        elif self.t != self.y + window.tau:
            raise WindowError(
                f"censored triple must have t = y + tau = {self.y + window.tau}, got {self.t}"
            )


@dataclass(frozen=True)
class ObservationArrays:
    """Column-wise storage for many triples; iterates as ObservationTriple."""

    y: np.ndarray
    t: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.int64)
        t = np.asarray(self.t, dtype=np.int64)
        ev = np.asarray(self.event, dtype=bool)
        if not (y.shape == t.shape == ev.shape) or y.ndim != 1:
            raise ValueError("y, t and event must be 1-d arrays of equal length")
        for name, arr in (("y", y), ("t", t), ("event", ev)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_triples(cls, triples: Iterable[ObservationTriple]) -> "ObservationArrays":
        triples = list(triples)
        return cls(
            np.array([o.y for o in triples], dtype=np.int64),
            np.array([o.t for o in triples], dtype=np.int64),
            np.array([o.event for o in triples], dtype=bool),
        )

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i: int) -> ObservationTriple:
        return ObservationTriple(int(self.y[i]), int(self.t[i]), bool(self.event[i]))

    def __iter__(self) -> Iterator[ObservationTriple]:
        for i in range(len(self)):
            yield self[i]

    def validate(self, window: SupportWindow) -> None:
        lo, hi = window.y_range
        bad = self.y > self.t
        bad |= (self.y < lo) | (self.y > hi)
        ev = self.event
        bad |= ev & ((self.t < window.delta + 1) | (self.t > window.xi))
        bad |= ev & (self.t > self.y + window.tau)
        bad |= ~ev & (self.t != self.y + window.tau)
        if bad.any():
            idx = np.flatnonzero(bad)
            first = self[int(idx[0])]
            try:
                first.check(window)
            except WindowError as exc:
                raise WindowError(
                    f"{len(idx)} observation(s) outside the window; first at index {idx[0]}: {exc}"
                ) from None
            raise WindowError(f"{len(idx)} observation(s) outside the window")


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class HazardModel:
    """Hazard vector on ages ``delta + 1 .. max_age``.

    ``max_age`` is ``window.xi`` for a fitted model and ``window.omega`` after a
    geometric tail extension. ``f_hat`` and ``c_hat`` are the empirical event
    and risk-set fractions (zero on extended ages).
    """

    window: SupportWindow
    lam: np.ndarray
    f_hat: np.ndarray
    c_hat: np.ndarray
    n: int = 0
    unobserved: tuple[int, ...] = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("lam", "f_hat", "c_hat"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if not (len(self.lam) == len(self.f_hat) == len(self.c_hat)):
            raise ValueError("lam, f_hat, c_hat must be index-aligned")
        if len(self.lam) < 1:
            raise ValueError("hazard model needs at least one age")
        if np.any(self.lam < 0) or np.any(self.lam > 1) or np.any(np.isnan(self.lam)):
            raise ValueError("hazards must lie in [0, 1]")

    @classmethod
    def from_hazards(cls, window: SupportWindow, lam: Sequence[float], **meta) -> "HazardModel":
        """Analytic model with no sample behind it.

        ``c_hat``/``f_hat`` are filled with the untruncated survival and pmf so
        that ``lam = f_hat / c_hat`` still holds.
        """
        lam = np.asarray(lam, dtype=float)
        surv = np.concatenate(([1.0], np.cumprod(1.0 - lam)[:-1]))
        return cls(window, lam, lam * surv, surv, n=0, meta=dict(meta))

    @property
    def max_age(self) -> int:
        return self.window.delta + len(self.lam)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.window.delta + 1, self.max_age + 1)

    def hazard(self, x: int) -> float:
        i = x - self.window.delta - 1
        if not 0 <= i < len(self.lam):
            raise IndexError(f"age {x} outside model support")
        return float(self.lam[i])

    def to_json(self) -> dict:
        doc = self.window.as_dict()
        doc.update(
            n=self.n,
            support=[int(s) for s in self.support],
            **{"lambda": self.lam.tolist()},
            f_hat=self.f_hat.tolist(),
            c_hat=self.c_hat.tolist(),
            unobserved=list(self.unobserved),
            meta=self.meta,
        )
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "HazardModel":
        window = build_support_window(doc["delta"], doc["m"], doc["omega"], doc["epsilon"])
        if window.tau != doc.get("tau", window.tau) or window.xi != doc.get("xi", window.xi):
            raise WindowError("tau/xi in document disagree with the window parameters")
        model = cls(
            window,
            doc["lambda"],
            doc["f_hat"],
            doc["c_hat"],
            n=int(doc.get("n", 0)),
            unobserved=tuple(doc.get("unobserved", ())),
            meta=dict(doc.get("meta", {})),
        )
        if "support" in doc and list(doc["support"]) != model.support.tolist():
            raise WindowError("support array does not match the hazard vector")
        return model

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "HazardModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class HazardCovariance:
    """Diagonal of the limiting covariance of sqrt(n) * (lam_hat - lam).

    Entries are NaN where the risk set was empty.
    """

    diag: np.ndarray
    n: int
    undefined: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "diag", _frozen(self.diag))

    @property
    def variance(self) -> np.ndarray:
        """Sampling variance of each hazard estimate, ``diag / n``."""
        return self.diag / self.n


def estimate_hazard(observations, window: SupportWindow) -> HazardModel:
    """Product-limit hazard estimate from truncated, censored triples.

    ``f_hat(x)`` is the fraction of observed terminations at ``x`` and
    ``c_hat(x)`` the fraction with ``y <= x <= t``. Ages with an empty risk
    set get hazard 0 and are listed in ``unobserved``.
    """
    obs = observations if isinstance(observations, ObservationArrays) else (
        ObservationArrays.from_triples(observations)
    )
    n = len(obs)
    if n == 0:
        raise ValueError("no observations")
    obs.validate(window)

    size = window.xi + 2
    events = np.bincount(obs.t[obs.event], minlength=size)
    entered = np.cumsum(np.bincount(obs.y, minlength=size))
    # #{y <= x <= t} = #{y <= x} - #{t < x}, valid because y <= t
    left = np.concatenate(([0], np.cumsum(np.bincount(obs.t, minlength=size))[:-1]))
    ages = window.support
    f_count = events[ages]
    c_count = entered[ages] - left[ages]

    f_hat = f_count / n
    c_hat = c_count / n
    lam = np.zeros(len(ages))
    seen = c_count > 0
    lam[seen] = f_count[seen] / c_count[seen]
    unobserved = tuple(int(a) for a in ages[~seen])
    return HazardModel(window, lam, f_hat, c_hat, n=n, unobserved=unobserved)


def survival_function(model: HazardModel, x: int) -> float:
    """Pr(X >= x) as the product of (1 - hazard) over ages below ``x``."""
    lo = model.window.delta + 1
    if not lo <= x <= model.max_age + 1:
        raise ValueError(f"age {x} outside {lo}..{model.max_age + 1}")
    return float(np.prod(1.0 - model.lam[: x - lo]))


def remaining_lifetime_pmf(model: HazardModel, age: int) -> np.ndarray:
    """Distribution of months-to-termination K given the contract is active at ``age``.

    Entry ``k - 1`` is Pr(K = k) for ``k = 1 .. max_age - age``; residual mass
    is lumped on the last month so the pmf always sums to one.
    """
    delta, top = model.window.delta, model.max_age
    if age < delta:
        raise ValueError(f"age {age} precedes the minimum entry age {delta}")
    if age >= top:
        raise ValueError(f"age {age} has no remaining support (max age {top})")
    lam = model.lam[age - delta : top - delta]
    alive = np.concatenate(([1.0], np.cumprod(1.0 - lam[:-1])))
    pmf = lam * alive
    pmf[-1] = alive[-1]
    return pmf


def asymptotic_covariance(model: HazardModel) -> HazardCovariance:
    """Diagonal covariance ``f (C - f) / C**3`` over the estimated ages.

    Ages beyond ``window.xi`` (tail extension) are not covered.
    """
    if model.n <= 0:
        raise ValueError("covariance needs a fitted model with n > 0")
    k = model.window.xi - model.window.delta
    f, c = model.f_hat[:k], model.c_hat[:k]
    diag = np.full(k, np.nan)
    ok = c > 0
    diag[ok] = f[ok] * (c[ok] - f[ok]) / c[ok] ** 3
    undefined = tuple(int(a) for a in model.window.support[~ok])
    return HazardCovariance(diag, model.n, undefined)


def _extend(model: HazardModel, rate: float) -> HazardModel:
    w = model.window
    k = w.xi - w.delta
    extra = w.omega - w.xi
    lam = np.concatenate((model.lam[:k], np.full(extra - 1, rate), [1.0]))
    pad = np.zeros(extra)
    return HazardModel(
        w,
        lam,
        np.concatenate((model.f_hat[:k], pad)),
        np.concatenate((model.c_hat[:k], pad)),
        n=model.n,
        unobserved=model.unobserved,
        meta={**model.meta, "tail": "geometric", "tail_rate": float(rate)},
    )


def extend_tail_geometric(model: HazardModel) -> HazardModel:
    """Carry the last estimated hazard forward to ``omega``, with hazard 1 at ``omega``."""
    w = model.window
    if w.xi >= w.omega or model.max_age >= w.omega:
        return model
    last = model.hazard(w.xi)
    if last <= 0:
        raise ValueError(
            f"hazard at xi={w.xi} is zero; interpolate zeros before extending the tail"
        )
    return _extend(model, last)


def interpolate_zero_hazards(model: HazardModel) -> HazardModel:
    """Replace zero hazards by linear interpolation between nonzero neighbours.

    Leading and trailing zeros copy the nearest nonzero value. ``f_hat`` is
    rescaled to ``lam * c_hat`` so the plug-in identity keeps holding.
    """
    lam = model.lam.copy()
    nz = np.flatnonzero(lam > 0)
    if len(nz) == 0:
        raise ValueError("all hazards are zero; nothing to interpolate from")
    zeros = np.flatnonzero(lam == 0)
    if len(zeros) == 0:
        return model
    lam[zeros] = np.interp(zeros, nz, lam[nz])
    boundary = [int(model.window.delta + 1 + i) for i in zeros if i < nz[0] or i > nz[-1]]
    meta = {
        **model.meta,
        "interpolated": [int(model.window.delta + 1 + i) for i in zeros],
        "boundary_rule": "nearest-nonzero",
        "boundary_filled": boundary,
    }
    return HazardModel(
        model.window, lam, lam * model.c_hat, model.c_hat,
        n=model.n, unobserved=model.unobserved, meta=meta,
    )
