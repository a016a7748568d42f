"""Lease-trust cash flows from left-truncated, right-censored lifetime data."""

from .cashflow import (
    DepreciationCurve,
    LeaseContract,
    Portfolio,
    PriceReport,
    apv_contract,
    cte_normal,
    price_trust,
    pv_realized,
    var_pv_contract,
    with_cte,
)
from .survival import (
    HazardCovariance,
    HazardModel,
    ObservationArrays,
    ObservationTriple,
    SupportWindow,
    asymptotic_covariance,
    build_support_window,
    estimate_hazard,
    extend_tail_geometric,
    interpolate_zero_hazards,
    remaining_lifetime_pmf,
    survival_function,
)

__version__ = "0.1.0"
