"""
Self-calibration by reference injection.

Twice per segment the input is switched to a known constant level right after
a firing, and the comparator threshold to a calibration value.  With constant
input the time to the next firing is linear in the unknowns,

    T^v = lambda * sigma + delta_dis,    lambda = delta_cali / (V + b),

so two injections at different levels give a 2x2 system for
``(sigma, delta_dis)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    ConfigurationError,
    IllConditionedError,
    ImplausibleEstimateError,
    InfeasibleCalibrationError,
    SingularCalibrationError,
)
from .tem_core import CALIBRATION, EncoderConfig, MismatchBounds, MismatchSchedule, SpikeTrain

SAFETY_MARGIN = 0.1
# relative singularity threshold of the 2x2 system, in units of machine epsilon
_COND_EPS = 1e3 * np.finfo(float).eps


@dataclass(frozen=True)
class CalibrationPlan:
    """Reference levels and thresholds of the two injections of a segment.

    Injections follow the signal firings with per-segment index
    ``first_index`` and ``first_index + k``.
    """

    k: int
    level: float
    alpha: float
    delta_cali: tuple[float, float]
    bias: float
    first_index: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.alpha == 1:
            raise SingularCalibrationError("alpha must differ from 1")
        if self.level + self.bias <= 0 or self.alpha * self.level + self.bias <= 0:
            raise ConfigurationError("reference level + bias must be positive for both injections")
        if min(self.delta_cali) < 0:
            raise ValueError("calibration thresholds must be non-negative")

    @property
    def levels(self) -> tuple[float, float]:
        return self.level, self.alpha * self.level

    @property
    def lambdas(self) -> tuple[float, float]:
        (v0, v1), (d0, d1) = self.levels, self.delta_cali
        return d0 / (v0 + self.bias), d1 / (v1 + self.bias)

    def injection(self, which: int) -> tuple[float, float]:
        """(level, threshold) of injection 0 or 1."""
        return self.levels[which], self.delta_cali[which]

    def satisfies_budget(self, bounds: MismatchBounds, T_ns_sup: float) -> bool:
        limit = (T_ns_sup - 2 * bounds.delta_dis_sup) / bounds.sigma_sup
        return all(lam < limit for lam in self.lambdas)


def plan_calibration(
    bounds: MismatchBounds,
    b: float,
    T_ns_sup: float,
    k: int = 2,
    V: float = 0.0,
    alpha: float = -1.0,
    margin: float = SAFETY_MARGIN,
) -> CalibrationPlan:
    """Choose the calibration threshold for reference levels ``V`` and ``alpha*V``.

    Both injections share one threshold, the largest that keeps every
    calibration interval inside the non-sampling budget,

        delta_cali / (V_p + b) < (T_ns_sup - 2 delta_dis_sup) / sigma_sup,

    shrunk by ``margin``.  A shared threshold keeps the two lambda
    coefficients distinct whenever ``alpha != 1``.

    Raises
    ------
    InfeasibleCalibrationError
        If ``T_ns_sup <= 2 * delta_dis_sup``.
    SingularCalibrationError
        If ``alpha == 1``.
    """
    if alpha == 1:
        raise SingularCalibrationError("alpha must differ from 1")
    if not 0 <= margin < 1:
        raise ValueError("margin must lie in [0, 1)")
    headroom = T_ns_sup - 2 * bounds.delta_dis_sup
    if headroom <= 0:
        raise InfeasibleCalibrationError(
            f"T_ns_sup={T_ns_sup!r} leaves no room beyond two discharges ({2 * bounds.delta_dis_sup!r})"
        )
    v0, v1 = V + b, alpha * V + b
    if v0 <= 0 or v1 <= 0:
        raise ConfigurationError("reference level + bias must be positive for both injections")
    lam_max = (1 - margin) * headroom / bounds.sigma_sup
    thr = lam_max * min(v0, v1)
    return CalibrationPlan(k=k, level=V, alpha=alpha, delta_cali=(thr, thr), bias=b)


def injection_duration(level: float, threshold: float, bias: float, sigma: float,
                       delta_dis: float) -> float:
    """Closed-form ``T^v`` for a constant input."""
    if level + bias <= 0:
        raise ConfigurationError("level + bias must be positive")
    return threshold / (level + bias) * sigma + delta_dis


def simulate_injection(
    config: EncoderConfig,
    t_n: float,
    level: float,
    threshold: float,
) -> float:
    """``T^v`` of an injection right after firing ``t_n`` under the true schedule."""
    sched = config.schedule
    i = sched.segment_index(t_n)
    dd = float(sched.delta_dis[i])
    j = sched.segment_index(t_n + dd)
    return injection_duration(level, threshold, config.bias, float(sched.sigma[j]), dd)


def estimate_params(T_v0: float, T_vk: float, plan: CalibrationPlan) -> tuple[float, float]:
    """Solve the two injection equations for ``(sigma_hat, delta_dis_hat)``.

    Raises
    ------
    IllConditionedError
        If the two lambda coefficients are numerically equal.
    ImplausibleEstimateError
        If ``sigma_hat <= 0`` or ``delta_dis_hat < 0``; both values are attached.
    """
    lam0, lamk = plan.lambdas
    if abs(lam0 - lamk) < _COND_EPS * max(abs(lam0), abs(lamk)):
        raise IllConditionedError(f"lambda coefficients coincide ({lam0!r}, {lamk!r})")
    sigma_hat = (T_v0 - T_vk) / (lam0 - lamk)
    delta_hat = T_v0 - lam0 * sigma_hat
    if sigma_hat <= 0 or delta_hat < 0:
        raise ImplausibleEstimateError(sigma_hat, delta_hat)
    return sigma_hat, delta_hat


@dataclass(frozen=True)
class CalibrationRecord:
    segment: int
    T_v: tuple[float, float]
    sigma_hat: float
    delta_dis_hat: float
    interval: tuple[float, float]
    flag: str = "ok"
    sigma_true: Optional[float] = None
    delta_dis_true: Optional[float] = None


def _injection_pairs(train: SpikeTrain) -> dict[int, list[tuple[float, float]]]:
    """Map segment -> [(t_n, T^v), ...] for every calibration firing."""
    out: dict[int, list[tuple[float, float]]] = {}
    times, kinds = train.times, train.kinds
    for i in np.flatnonzero(kinds == CALIBRATION):
        t_n = float(times[i - 1])
        seg = int(np.floor((t_n - train.segment_start) / train.segment_length)) \
            if np.isfinite(train.segment_length) else 0
        out.setdefault(seg, []).append((t_n, float(times[i] - t_n)))
    return out


def calibrate(
    train: SpikeTrain,
    plan: CalibrationPlan,
    bounds: MismatchBounds,
    schedule: Optional[MismatchSchedule] = None,
) -> list[CalibrationRecord]:
    """Estimate ``(sigma, delta_dis)`` for every segment holding two injections.

    Implausible estimates are clamped to the known bounds and flagged
    ``"clamped"``; a singular system is flagged ``"ill-conditioned"`` and
    carries the midpoint of the bounds. ``schedule`` only fills the
    ``*_true`` fields.
    """
    records = []
    L = train.segment_length
    for seg, pairs in sorted(_injection_pairs(train).items()):
        if len(pairs) < 2:
            continue
        (t0, Tv0), (_, Tvk) = pairs[0], pairs[1]
        flag = "ok"
        try:
            s_hat, d_hat = estimate_params(Tv0, Tvk, plan)
            if not (bounds.sigma_inf <= s_hat <= bounds.sigma_sup
                    and bounds.delta_dis_inf <= d_hat <= bounds.delta_dis_sup):
                flag = "out-of-bounds"
        except ImplausibleEstimateError as err:
            s_hat = float(np.clip(err.sigma_hat, bounds.sigma_inf, bounds.sigma_sup))
            d_hat = float(np.clip(err.delta_dis_hat, bounds.delta_dis_inf, bounds.delta_dis_sup))
            flag = "clamped"
        except IllConditionedError:
            s_hat = 0.5 * (bounds.sigma_inf + bounds.sigma_sup)
            d_hat = 0.5 * (bounds.delta_dis_inf + bounds.delta_dis_sup)
            flag = "ill-conditioned"
        seg_lo = train.segment_start + seg * L if np.isfinite(L) else t0
        seg_hi = seg_lo + L if np.isfinite(L) else np.inf
        s_true = d_true = None
        if schedule is not None:
            i = schedule.segment_index(t0)
            s_true = float(schedule.sigma[i])
            d_true = float(schedule.delta_dis[i])
        records.append(CalibrationRecord(
            segment=seg, T_v=(Tv0, Tvk), sigma_hat=float(s_hat), delta_dis_hat=float(d_hat),
            interval=(seg_lo, seg_hi), flag=flag, sigma_true=s_true, delta_dis_true=d_true,
        ))
    return records


def records_to_csv(records: list[CalibrationRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["segment_index", "T_v1", "T_v2", "sigma_hat", "delta_dis_hat",
                "sigma_true", "delta_dis_true", "flag"])

    def fmt(v):
        return "" if v is None else repr(float(v))

    for r in records:
        w.writerow([r.segment, fmt(r.T_v[0]), fmt(r.T_v[1]), fmt(r.sigma_hat),
                    fmt(r.delta_dis_hat), fmt(r.sigma_true), fmt(r.delta_dis_true), r.flag])
    return buf.getvalue()
