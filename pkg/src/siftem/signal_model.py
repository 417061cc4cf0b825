"""
Bandlimited test signals built as finite sums of shifted sinc pulses,
and the sinc kernel used by the decoder.

A signal is

    x(t) = sum_{m=0}^{2M} c_m sinc((t - m T) / T),   T = 2*pi / omega_M

with the normalized ``sinc(u) = sin(pi u) / (pi u)``.  Two time constants are
kept apart on purpose:

- ``pulse_spacing`` = 2*pi/omega_M, the spacing of the sinc pulses;
- ``recovery_nyquist`` = pi/omega_M, the Nyquist interval of the nominal
  band parameter.

Each pulse occupies only ``|w| <= pi / T = omega_M / 2`` (``occupied_band``);
the batch harness uses that band for the recovery conditions by default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize, special

from .errors import QuadratureError

RNG_ALGORITHM = "numpy.random.PCG64"

# Window padding on each side of the pulse support, in pulse spacings.
PAD_PULSES = 4
# Grid density used to find the amplitude bound (points per pulse spacing).
AMPLITUDE_GRID_DENSITY = 64


def pulse_spacing(omega_M: float) -> float:
    return 2.0 * np.pi / omega_M


def recovery_nyquist(omega_M: float) -> float:
    return np.pi / omega_M


def _uniform_coeffs(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size)


@dataclass(frozen=True, eq=False)
class BandlimitedSignal:
    """Sinc-sum signal with its amplitude bound.

    Parameters
    ----------
    coeffs : ndarray
        Pulse amplitudes ``c_0 .. c_{2M}``.
    omega_M : float
        Band parameter in rad/s; pulses are spaced ``2*pi/omega_M`` apart.
    amplitude_bound : float, optional
        ``max |x(t)|`` over the evaluation window. Computed when omitted.
    seed : int, optional
        Seed the coefficients were drawn with, kept for serialization.
    """

    coeffs: np.ndarray
    omega_M: float
    amplitude_bound: float = field(default=np.nan)
    seed: Optional[int] = None

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size % 2 != 1:
            raise ValueError("coeffs must be a 1-D array of odd length 2M+1")
        if not np.all(np.isfinite(c)):
            raise ValueError("coeffs must be finite")
        if not self.omega_M > 0:
            raise ValueError("omega_M must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "omega_M", float(self.omega_M))
        if np.isnan(self.amplitude_bound):
            object.__setattr__(self, "amplitude_bound", _grid_max(self))

    @property
    def M(self) -> int:
        return (self.coeffs.size - 1) // 2

    @property
    def pulse_spacing(self) -> float:
        return pulse_spacing(self.omega_M)

    @property
    def recovery_nyquist(self) -> float:
        return recovery_nyquist(self.omega_M)

    @property
    def occupied_band(self) -> float:
        """Highest angular frequency present in the pulses, ``pi / pulse_spacing``."""
        return np.pi / self.pulse_spacing

    @property
    def window(self) -> tuple[float, float]:
        """Evaluation window: pulse support padded by four pulse spacings."""
        T = self.pulse_spacing
        return -PAD_PULSES * T, (2 * self.M + PAD_PULSES) * T

    @property
    def energy(self) -> float:
        # shifted sinc pulses are orthogonal with squared norm T
        return self.pulse_spacing * float(np.sum(self.coeffs**2))

    @property
    def analytic_bound(self) -> float:
        """The stricter bound sqrt(E omega_M / pi) valid on the whole line."""
        return float(np.sqrt(self.energy * self.omega_M / np.pi))

    @property
    def centers(self) -> np.ndarray:
        return np.arange(self.coeffs.size) * self.pulse_spacing

    def __call__(self, t):
        return eval_signal(self, t)

    def scaled(self, factor: float) -> "BandlimitedSignal":
        return BandlimitedSignal(self.coeffs * factor, self.omega_M, seed=self.seed)

    def to_dict(self) -> dict:
        return {
            "omega_M": self.omega_M,
            "M": self.M,
            "coeffs": [float(v) for v in self.coeffs],
            "seed": self.seed,
            "rng": {"algorithm": RNG_ALGORITHM, "numpy": np.__version__},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "BandlimitedSignal":
        coeffs = np.asarray(d["coeffs"], dtype=float)
        if "M" in d and coeffs.size != 2 * int(d["M"]) + 1:
            raise ValueError("coefficient count does not match M")
        return cls(coeffs, float(d["omega_M"]), seed=d.get("seed"))

    @classmethod
    def from_json(cls, text: str) -> "BandlimitedSignal":
        return cls.from_dict(json.loads(text))


def generate_signal(
    M: int,
    omega_M: float,
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    coeff_sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None,
) -> BandlimitedSignal:
    """Draw a random sinc-sum signal with ``2M+1`` pulses.

    Coefficients default to ``U(-1, 1)``. Pass either ``seed`` (recorded on the
    signal so it can be regenerated) or an existing generator.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if not omega_M > 0:
        raise ValueError("omega_M must be positive")
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(seed))
    sampler = coeff_sampler or _uniform_coeffs
    coeffs = np.asarray(sampler(rng, 2 * M + 1), dtype=float)
    return BandlimitedSignal(coeffs, omega_M, seed=seed)


def eval_signal(signal: BandlimitedSignal, t):
    """Evaluate the sinc sum at ``t`` (scalar or array)."""
    t = np.asarray(t, dtype=float)
    T = signal.pulse_spacing
    u = (t[..., None] - signal.centers) / T
    out = np.sinc(u) @ signal.coeffs
    return float(out) if out.ndim == 0 else out


def antiderivative(signal: BandlimitedSignal, t):
    """Closed-form antiderivative built from the sine integral Si."""
    t = np.asarray(t, dtype=float)
    T = signal.pulse_spacing
    si, _ = special.sici(np.pi * (t[..., None] - signal.centers) / T)
    out = (T / np.pi) * (si @ signal.coeffs)
    return float(out) if out.ndim == 0 else out


def integral_closed_form(signal: BandlimitedSignal, a: float, b: float) -> float:
    T = signal.pulse_spacing
    si, _ = special.sici(np.pi * (np.array([b, a])[:, None] - signal.centers) / T)
    # subtract per pulse before summing to limit cancellation
    return float((T / np.pi) * ((si[0] - si[1]) @ signal.coeffs))


def integrate(
    signal: BandlimitedSignal,
    a: float,
    b: float,
    tol: float = 1e-12,
    max_depth: int = 40,
) -> float:
    """Adaptive Simpson quadrature of the signal over ``[a, b]``.

    The accepted error estimate is at most ``tol * (1 + |result|)``.

    Raises
    ------
    QuadratureError
        If a panel needs more than ``max_depth`` bisections.
    """
    if b < a:
        raise ValueError("need a <= b")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if a == b:
        return 0.0
    return _adaptive_simpson(lambda t: eval_signal(signal, t), a, b, tol, max_depth)


def _adaptive_simpson(f, a, b, tol, max_depth):
    m = 0.5 * (a + b)
    fa, fm, fb = f(np.array([a, m, b]))
    whole = (b - a) / 6.0 * (fa + 4 * fm + fb)
    budget = tol * (1.0 + abs(whole))
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, budget, 0)]
    while stack:
        a, b, fa, fm, fb, whole, eps, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(np.array([lm, rm]))
        left = (m - a) / 6.0 * (fa + 4 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4 * frm + fb)
        diff = left + right - whole
        if abs(diff) <= 15.0 * eps:
            total += left + right + diff / 15.0
        elif depth >= max_depth:
            raise QuadratureError(f"no convergence on [{a!r}, {b!r}] at depth {depth}")
        else:
            stack.append((a, m, fa, flm, fm, left, 0.5 * eps, depth + 1))
            stack.append((m, b, fm, frm, fb, right, 0.5 * eps, depth + 1))
    return float(total)


def _grid_max(signal: BandlimitedSignal) -> float:
    lo, hi = signal.window
    T = signal.pulse_spacing
    n = int(round((hi - lo) / T)) * AMPLITUDE_GRID_DENSITY + 1
    t = np.linspace(lo, hi, n)
    ax = np.abs(eval_signal(signal, t))
    if not np.any(ax > 0):
        return 0.0
    h = t[1] - t[0]
    best = float(ax.max())
    # polish the few largest grid peaks so the bound holds between nodes too
    peaks = np.flatnonzero(
        (ax[1:-1] >= ax[:-2]) & (ax[1:-1] >= ax[2:]) & (ax[1:-1] > 0.9 * best)
    ) + 1
    for i in np.r_[peaks, 0, n - 1]:
        a, b = max(lo, t[i] - h), min(hi, t[i] + h)
        res = optimize.minimize_scalar(
            lambda s: -abs(eval_signal(signal, s)),
            bounds=(a, b),
            method="bounded",
            options={"xatol": 1e-12},
        )
        best = max(best, -float(res.fun))
    return best


@dataclass(frozen=True)
class SincKernel:
    """``g(t) = sin(omega t) / (pi t)``, the ideal low-pass impulse response."""

    omega: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return (self.omega / np.pi) * np.sinc(self.omega * t / np.pi)

    def integral(self, a, b):
        """Closed form of the integral of g over ``[a, b]`` (broadcasts)."""
        sb, _ = special.sici(self.omega * np.asarray(b, dtype=float))
        sa, _ = special.sici(self.omega * np.asarray(a, dtype=float))
        return (sb - sa) / np.pi
