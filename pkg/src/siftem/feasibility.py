"""
Inter-spike bounds and perfect-recovery conditions.

With ``T_nyq = pi / omega`` the decoder contracts when

    r + eps * (1 + r) < 1,   r = T_max / T_nyq,   eps = sqrt(T_ns_sup / T_min).

The same formula covers the uncalibrated case (``T_ns_sup`` is the largest
discharge time) and the calibrated one (``T_ns_sup`` also covers injections).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import optimize

from .errors import NoHeadroomError, TuningError
from .tem_core import MismatchBounds

TIME_TOL = 1e-9
VALUE_TOL = 1e-6


@dataclass(frozen=True)
class RecoveryReport:
    T_min: float
    T_max: float
    T_nyq: float
    nonsampling_sup: float
    r: float
    epsilon: float

    @property
    def value(self) -> float:
        """The left-hand side ``r + eps (1 + r)``."""
        return self.r + self.epsilon * (1 + self.r)

    @property
    def margin(self) -> float:
        return 1.0 - self.value

    @property
    def feasible(self) -> bool:
        return self.margin > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(value=self.value, margin=self.margin, feasible=self.feasible)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        rows = [
            ("T_min [s]", f"{self.T_min:.9g}"),
            ("T_max [s]", f"{self.T_max:.9g}"),
            ("T_nyq [s]", f"{self.T_nyq:.9g}"),
            ("T_ns_sup [s]", f"{self.nonsampling_sup:.9g}"),
            ("r", f"{self.r:.6f}"),
            ("epsilon", f"{self.epsilon:.6f}"),
            ("r + eps(1+r)", f"{self.value:.6f}"),
            ("margin", f"{self.margin:.6f}"),
            ("feasible", str(self.feasible)),
        ]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{w}}  {v}" for k, v in rows)


def interval_bounds(
    bounds: MismatchBounds,
    b: float,
    c: float,
    delta: float,
    nonsampling: Optional[tuple[float, float]] = None,
) -> tuple[float, float]:
    """``(T_min, T_max)`` of the inter-spike intervals.

    ``nonsampling`` overrides the discharge range with ``(T_ns_inf, T_ns_sup)``
    for the calibrated sampler.
    """
    if not b > c:
        raise ValueError(f"need b > c (b={b!r}, c={c!r}); firing is not guaranteed")
    if c < 0 or delta <= 0:
        raise ValueError("need c >= 0 and delta > 0")
    lo, hi = nonsampling if nonsampling is not None else (bounds.delta_dis_inf, bounds.delta_dis_sup)
    T_min = bounds.sigma_inf * delta / (b + c) + lo
    T_max = bounds.sigma_sup * delta / (b - c) + hi
    return T_min, T_max


def recovery_margin(T_min: float, T_max: float, nonsampling_sup: float, omega: float) -> RecoveryReport:
    if T_min <= 0 or T_max <= 0 or omega <= 0 or nonsampling_sup < 0:
        raise ValueError("T_min, T_max, omega must be positive and nonsampling_sup non-negative")
    T_nyq = np.pi / omega
    r = T_max / T_nyq
    eps = float(np.sqrt(nonsampling_sup / T_min))
    return RecoveryReport(T_min, T_max, T_nyq, nonsampling_sup, r, eps)


def report(bounds: MismatchBounds, b: float, c: float, delta: float, omega: float,
           T_ns_sup: Optional[float] = None) -> RecoveryReport:
    """Recovery report straight from the parameter bounds.

    Without ``T_ns_sup`` this is the uncalibrated condition; with it, the
    calibrated one (``T_ns_inf`` stays at the smallest discharge time).
    """
    if T_ns_sup is None:
        T_min, T_max = interval_bounds(bounds, b, c, delta)
        return recovery_margin(T_min, T_max, bounds.delta_dis_sup, omega)
    T_min, T_max = interval_bounds(bounds, b, c, delta, (bounds.delta_dis_inf, T_ns_sup))
    return recovery_margin(T_min, T_max, T_ns_sup, omega)


def max_nonsampling(omega: float, bounds: MismatchBounds, b: float, c: float, delta: float,
                    tol: float = TIME_TOL) -> float:
    """Largest ``T_ns_sup`` that keeps the calibrated condition satisfied.

    The condition value grows strictly with ``T_ns_sup`` (both ``T_max`` and
    ``eps`` increase), so the boundary is found by bisection.

    Raises
    ------
    NoHeadroomError
        If the discharge-only configuration is already infeasible.
    """

    def margin(T):
        return report(bounds, b, c, delta, omega, T).margin

    lo = bounds.delta_dis_sup
    m0 = margin(lo)
    if m0 < 0:
        raise NoHeadroomError(f"configuration infeasible without calibration (margin {m0:.3g})")
    if m0 == 0:
        return lo
    hi = max(2 * lo, tol)
    while margin(hi) > 0:
        hi *= 2
        if hi > 1e6:
            raise NoHeadroomError("condition never reaches its boundary")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if margin(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lo


def _kappa_bounds(kappa_sup, spread, base: MismatchBounds) -> MismatchBounds:
    return base.replace(kappa_inf=kappa_sup * (1 - spread), kappa_sup=kappa_sup)


def condition_value(kappa_sup: float, spread: float, base: MismatchBounds, b: float, c: float,
                    delta: float, omega: float) -> float:
    return report(_kappa_bounds(kappa_sup, spread, base), b, c, delta, omega).value


def tune_kappa_sup(
    target: float,
    omega: float,
    b: float,
    c: float,
    delta: float,
    base: MismatchBounds,
    spread: float = 0.03,
    tol: float = VALUE_TOL,
) -> float:
    """``kappa_sup`` such that the uncalibrated condition equals ``target``.

    ``kappa_inf`` follows as ``(1 - spread) * kappa_sup``; gamma and discharge
    ranges come from ``base``.  As ``kappa_sup -> 0`` the discharge term
    dominates and the condition rises again, so the search runs on the
    increasing branch to the right of the condition's minimum.

    Raises
    ------
    TuningError
        If even the best ``kappa_sup`` leaves the condition above ``target``.
    """

    def f(k):
        return condition_value(k, spread, base, b, c, delta, omega) - target

    T_nyq = np.pi / omega
    # kappa giving r = 1 on its own; the condition exceeds 1 beyond it
    k_hi = T_nyq * (b - c) * base.gamma_inf / delta
    res = optimize.minimize_scalar(
        lambda lk: f(np.exp(lk)), bounds=(np.log(k_hi) - 40, np.log(k_hi)), method="bounded",
        options={"xatol": 1e-10},
    )
    k_lo = float(np.exp(res.x))
    if f(k_lo) >= 0:
        raise TuningError(f"target {target!r} below the smallest achievable value {f(k_lo) + target:.6g}")
    while f(k_hi) <= 0:
        k_hi *= 2
    k = optimize.brentq(f, k_lo, k_hi, xtol=1e-18, rtol=1e-14)
    if abs(f(k)) > tol:
        raise TuningError("bisection did not reach the target")
    return float(k)
