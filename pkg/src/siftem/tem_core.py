"""
Practical integrate-and-fire time encoding machine.

After firing ``t_n`` the integrator is idle for the discharge time
``delta_dis_n``; it then integrates ``(x + b) / sigma_n`` and fires when the
threshold ``delta`` is reached, where ``sigma_n = kappa_n / xi_n``.  Mismatch
parameters are piecewise constant over wall-clock segments.

When a calibration plan is supplied, the input is switched to a constant
reference level right after selected firings, producing an extra
*calibration* firing ``t_n^v``; the interval ``[t_n, t_n^v + delta_dis]``
then carries no information about ``x``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
from scipy import optimize

from .errors import ConfigurationError, ScheduleRangeError
from .signal_model import BandlimitedSignal, antiderivative

if TYPE_CHECKING:
    from .calibration import CalibrationPlan

SIGNAL = "signal"
CALIBRATION = "calibration"

ROOT_REL_ACCURACY = 1e-12


@dataclass(frozen=True)
class MismatchBounds:
    """Known ranges of the mismatch parameters."""

    kappa_inf: float
    kappa_sup: float
    gamma_inf: float
    gamma_sup: float
    delta_dis_inf: float
    delta_dis_sup: float

    def __post_init__(self):
        if not (0 < self.kappa_inf <= self.kappa_sup):
            raise ValueError("need 0 < kappa_inf <= kappa_sup")
        if not (0 < self.gamma_inf <= self.gamma_sup):
            raise ValueError("need 0 < gamma_inf <= gamma_sup")
        if not (0 <= self.delta_dis_inf <= self.delta_dis_sup):
            raise ValueError("need 0 <= delta_dis_inf <= delta_dis_sup")

    @property
    def sigma_inf(self) -> float:
        return self.kappa_inf / self.gamma_sup

    @property
    def sigma_sup(self) -> float:
        return self.kappa_sup / self.gamma_inf

    def replace(self, **kw) -> "MismatchBounds":
        d = dict(self.__dict__)
        d.update(kw)
        return MismatchBounds(**d)


@dataclass(frozen=True, eq=False)
class MismatchSchedule:
    """Per-segment true parameter values over half-open wall-clock segments.

    Segment ``i`` covers ``[start + i*L, start + (i+1)*L)``.
    """

    start: float
    segment_length: float
    kappa: np.ndarray
    xi: np.ndarray
    delta_dis: np.ndarray
    bounds: MismatchBounds

    def __post_init__(self):
        arrays = []
        for name in ("kappa", "xi", "delta_dis"):
            a = np.array(getattr(self, name), dtype=float).ravel()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            arrays.append(a)
        kappa, xi, dd = arrays
        if not (kappa.size == xi.size == dd.size and kappa.size > 0):
            raise ValueError("kappa, xi and delta_dis must have the same nonzero length")
        if self.segment_length <= 0:
            raise ValueError("segment_length must be positive")
        bd = self.bounds
        # tiny relative slack for values that sit on a bound after float rounding
        rt = 1e-12
        if np.any(kappa < bd.kappa_inf * (1 - rt)) or np.any(kappa > bd.kappa_sup * (1 + rt)):
            raise ValueError("kappa outside its bounds")
        if np.any(xi < bd.gamma_inf * (1 - rt)) or np.any(xi > bd.gamma_sup * (1 + rt)):
            raise ValueError("xi outside its bounds")
        if np.any(dd < bd.delta_dis_inf * (1 - rt)) or np.any(dd > bd.delta_dis_sup * (1 + rt)):
            raise ValueError("delta_dis outside its bounds")

    @property
    def n_segments(self) -> int:
        return self.kappa.size

    @property
    def end(self) -> float:
        return self.start + self.n_segments * self.segment_length

    @property
    def sigma(self) -> np.ndarray:
        return self.kappa / self.xi

    def segment_edges(self) -> np.ndarray:
        return self.start + self.segment_length * np.arange(self.n_segments + 1)

    def segment_index(self, t: float) -> int:
        if not (self.start <= t < self.end):
            raise ScheduleRangeError(f"t={t!r} outside schedule [{self.start!r}, {self.end!r})")
        i = int(np.floor((t - self.start) / self.segment_length))
        # guard the floor against rounding right at an edge
        edges = self.segment_edges()
        if t < edges[i]:
            i -= 1
        elif t >= edges[i + 1]:
            i += 1
        return min(max(i, 0), self.n_segments - 1)

    @classmethod
    def constant(
        cls,
        kappa: float,
        delta_dis: float,
        start: float,
        end: float,
        xi: float = 1.0,
        segment_length: Optional[float] = None,
    ) -> "MismatchSchedule":
        L = segment_length or (end - start)
        n = max(1, int(np.ceil((end - start) / L - 1e-12)))
        bounds = MismatchBounds(kappa, kappa, xi, xi, delta_dis, delta_dis)
        return cls(start, L, np.full(n, kappa), np.full(n, xi), np.full(n, delta_dis), bounds)


def sigma_of(schedule: MismatchSchedule, t: float) -> float:
    """Integration scaling ``kappa/xi`` of the segment active at ``t``."""
    i = schedule.segment_index(t)
    return float(schedule.kappa[i] / schedule.xi[i])


@dataclass(frozen=True)
class EncoderConfig:
    bias: float
    threshold: float
    schedule: MismatchSchedule

    def __post_init__(self):
        if not self.threshold > 0:
            raise ConfigurationError("threshold must be positive")


@dataclass(frozen=True, eq=False)
class SpikeTrain:
    """Firing times with per-event kinds and, optionally, the true parameters.

    ``times`` holds every firing (signal and calibration) in increasing order.
    Sampling intervals run between consecutive *signal* firings; per-interval
    arrays (``nonsampling``, ``sigma``, ``delta_dis``) are indexed by the
    interval's starting signal firing and are ``None`` for field-mode trains
    whose truth is unknown.
    """

    times: np.ndarray
    kinds: np.ndarray
    nonsampling: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None
    delta_dis: Optional[np.ndarray] = None
    truncated: bool = False
    window: tuple[float, float] = (np.nan, np.nan)
    segment_start: float = 0.0
    segment_length: float = np.inf

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        k = np.array(self.kinds, dtype=object)
        if t.shape != k.shape:
            raise ValueError("times and kinds differ in length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("firing times must be strictly increasing")
        for name, arr in (("times", t), ("kinds", k)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("nonsampling", "sigma", "delta_dis"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=float)
                v.setflags(write=False)
                object.__setattr__(self, name, v)

    @property
    def is_signal(self) -> np.ndarray:
        return self.kinds == SIGNAL

    @property
    def signal_times(self) -> np.ndarray:
        return self.times[self.is_signal]

    @property
    def n_intervals(self) -> int:
        return max(0, int(np.count_nonzero(self.is_signal)) - 1)

    @property
    def interval_starts(self) -> np.ndarray:
        return self.signal_times[:-1]

    @property
    def interval_ends(self) -> np.ndarray:
        return self.signal_times[1:]

    @property
    def calibration_durations(self) -> np.ndarray:
        """``T^v`` for each interval, zero where no injection happened."""
        out = np.zeros(self.n_intervals)
        idx_sig = np.flatnonzero(self.is_signal)
        for j, (i0, i1) in enumerate(zip(idx_sig[:-1], idx_sig[1:])):
            if i1 - i0 == 2:
                out[j] = self.times[i0 + 1] - self.times[i0]
            elif i1 - i0 > 2:
                raise ValueError("more than one calibration firing inside an interval")
        return out

    def interval_segments(self, offsets=None) -> np.ndarray:
        """Segment index of ``t_n + offset`` for each interval."""
        t = self.interval_starts
        if offsets is not None:
            t = t + offsets
        if not np.isfinite(self.segment_length):
            return np.zeros(t.size, dtype=int)
        return np.floor((t - self.segment_start) / self.segment_length).astype(int)

    def sampled_intervals(self) -> tuple[np.ndarray, np.ndarray]:
        if self.nonsampling is None:
            raise ValueError("field-mode train has no true non-sampling durations")
        return self.interval_starts + self.nonsampling, self.interval_ends

    def field(self) -> "SpikeTrain":
        """Copy without the true parameters."""
        return SpikeTrain(
            self.times, self.kinds, truncated=self.truncated, window=self.window,
            segment_start=self.segment_start, segment_length=self.segment_length,
        )

    def to_csv(self, genie: bool = True) -> str:
        """CSV with one row per event.

        Genie mode adds ``T_ns``, ``sigma_true`` and ``delta_dis_true``; the
        values on a signal row describe the interval that firing opens, on a
        calibration row the injection integration.
        """
        if genie and self.sigma is None:
            raise ValueError("genie CSV needs a train that carries true parameters")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["index", "t_n", "event_kind"]
        if genie:
            cols += ["T_ns", "sigma_true", "delta_dis_true"]
        w.writerow(cols)
        interval = -1
        for i, (t, kind) in enumerate(zip(self.times, self.kinds)):
            row = [i, repr(float(t)), kind]
            if genie:
                if kind == SIGNAL:
                    interval += 1
                j = interval
                if 0 <= j < self.n_intervals and kind == SIGNAL:
                    row += [repr(float(self.nonsampling[j])), repr(float(self.sigma[j])),
                            repr(float(self.delta_dis[j]))]
                else:
                    row += ["", "", ""]
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, segment_start: float = 0.0,
                 segment_length: float = np.inf) -> "SpikeTrain":
        rows = list(csv.DictReader(io.StringIO(text)))
        times = [float(r["t_n"]) for r in rows]
        kinds = [r["event_kind"] for r in rows]
        return cls(times, kinds, segment_start=segment_start, segment_length=segment_length)


def _schedule_params(schedule: MismatchSchedule, t: float) -> tuple[float, float, int]:
    i = schedule.segment_index(t)
    return float(schedule.sigma[i]), float(schedule.delta_dis[i]), i


def _fire_signal(signal, bias, target, start, slope_floor):
    """Root of  int_start^T (x + b) ds = target  by bracketed Brent."""
    X0 = antiderivative(signal, start)

    def F(T):
        return antiderivative(signal, T) - X0 + bias * (T - start) - target

    hi = start + 2.0 * target / slope_floor
    while F(hi) <= 0:
        hi = start + 2.0 * (hi - start)
    root = optimize.brentq(F, start, hi, xtol=1e-17, rtol=4 * np.finfo(float).eps, maxiter=200)
    return root


def _fire_constant(level, bias, target, start):
    """Same recursion with a constant input; goes through the generic root-finder."""
    rate = level + bias

    def F(T):
        return rate * (T - start) - target

    hi = start + 2.0 * target / rate
    if target == 0:
        return start
    return optimize.brentq(F, start, hi, xtol=1e-17, rtol=4 * np.finfo(float).eps, maxiter=200)


def encode(
    signal: BandlimitedSignal,
    config: EncoderConfig,
    window: Optional[Sequence[float]] = None,
    plan: Optional["CalibrationPlan"] = None,
) -> SpikeTrain:
    """Simulate the encoder over ``window`` (defaults to the signal window).

    Integration starts at the window start with an empty integrator. With a
    ``plan`` the reference input is injected after the signal firings whose
    per-segment index is ``plan.first_index`` and ``plan.first_index + plan.k``.

    Raises
    ------
    ConfigurationError
        If the bias does not exceed the amplitude bound or the window is not
        covered by the signal window and schedule.
    """
    b = float(config.bias)
    c = float(signal.amplitude_bound)
    if not b > c:
        raise ConfigurationError(f"bias {b!r} must exceed amplitude bound {c!r}")
    sched = config.schedule
    lo, hi = signal.window if window is None else (float(window[0]), float(window[1]))
    s_lo, s_hi = signal.window
    tiny = 1e-12 * max(1.0, abs(s_lo), abs(s_hi))
    if lo < s_lo - tiny or hi > s_hi + tiny or hi <= lo:
        raise ConfigurationError("window must lie inside the signal evaluation window")
    if lo < sched.start or hi > sched.end + tiny:
        raise ConfigurationError("schedule does not cover the window")
    delta = config.threshold
    slope_floor = b - c

    times, kinds = [], []
    nonsampling, sigmas, deltas = [], [], []
    # per-segment count of signal firings, for injection placement
    seg_counts: dict[int, int] = {}
    injection_slots = set()
    if plan is not None:
        injection_slots = {plan.first_index: 0, plan.first_index + plan.k: 1}

    start = lo  # integration start of the pending interval
    pending = None  # (sigma, Tns, delta_dis) of the interval opened by the last firing
    truncated = False
    while True:
        sigma, _, _ = _schedule_params(sched, start)
        t_fire = _fire_signal(signal, b, sigma * delta, start, slope_floor)
        if t_fire > hi:
            truncated = True
            break
        if pending is not None:
            nonsampling.append(pending[1])
            sigmas.append(pending[0])
            deltas.append(pending[2])
        times.append(t_fire)
        kinds.append(SIGNAL)

        if t_fire >= sched.end:
            break
        _, d_a, seg = _schedule_params(sched, t_fire)
        idx_in_seg = seg_counts.get(seg, 0)
        seg_counts[seg] = idx_in_seg + 1
        s_next = t_fire + d_a
        if plan is not None and idx_in_seg in injection_slots:
            which = injection_slots[idx_in_seg]
            level, thr = plan.injection(which)
            if level + b <= 0:
                raise ConfigurationError("calibration level + bias must be positive")
            if s_next >= sched.end:
                break
            sigma_v, _, _ = _schedule_params(sched, s_next)
            t_v = _fire_constant(level, b, sigma_v * thr, s_next)
            if t_v > hi or t_v >= sched.end:
                truncated = True
                break
            times.append(t_v)
            kinds.append(CALIBRATION)
            _, d_b, _ = _schedule_params(sched, t_v)
            s_next = t_v + d_b
            d_a = d_b
        if s_next >= min(hi, sched.end):
            break
        sigma_next, _, _ = _schedule_params(sched, s_next)
        pending = (sigma_next, s_next - t_fire, d_a)
        start = s_next

    return SpikeTrain(
        np.array(times),
        np.array(kinds, dtype=object),
        nonsampling=np.array(nonsampling),
        sigma=np.array(sigmas),
        delta_dis=np.array(deltas),
        truncated=truncated,
        window=(lo, hi),
        segment_start=sched.start,
        segment_length=sched.segment_length,
    )
