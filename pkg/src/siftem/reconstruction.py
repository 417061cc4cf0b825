"""
Measurements and bandlimited reconstruction from firing times.

Each sampling interval ``[a_n, b_n] = [t_n + T_ns_n, t_{n+1}]`` yields the
integral of the input over it,

    P_n = sigma_n * delta - b * (t_{n+1} - t_n - T_ns_n),

computed from the spike times and a parameter guess only.  The decoder uses
the operator

    A x = sum_n P_n(x) g(t - theta_n),   theta_n = (t_n + t_{n+1}) / 2,

with ``g`` the sinc kernel, and the Neumann iteration
``x_{l+1} = A x + (I - A) x_l``.  A ridge-regularized least-squares solve on
the same sinc span serves as an independent check.

Grid functions live on a uniform grid over the firing window; inner products
use trapezoid weights.  Interval integrals of grid functions are exact for
local cubic interpolants, which keeps the quadrature error far below the
reconstruction accuracy of interest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import SolverError, UndefinedNMSEError
from .signal_model import SincKernel
from .tem_core import SpikeTrain

GRID_DENSITY = 32
NMSE_FLOOR_DB = -300.0
DIVERGENCE_PATIENCE = 5
CONTRACTION_WINDOW = 10


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    P: np.ndarray
    a: np.ndarray
    b: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        arrs = [np.array(getattr(self, k), dtype=float) for k in ("P", "a", "b", "theta")]
        if len({x.shape for x in arrs}) != 1:
            raise ValueError("P, a, b and theta must have the same length")
        P, a, b, th = arrs
        if np.any(a >= b):
            raise ValueError("sampled intervals must be non-degenerate")
        if th.size > 1 and np.any(np.diff(th) <= 0):
            raise ValueError("midpoints must be strictly increasing")
        if not np.all(np.isfinite(P)):
            raise ValueError("P must be finite")
        for k, x in zip(("P", "a", "b", "theta"), arrs):
            x.setflags(write=False)
            object.__setattr__(self, k, x)

    @property
    def N(self) -> int:
        return self.P.size


def measurements(
    train: SpikeTrain,
    sigma: np.ndarray,
    nonsampling: np.ndarray,
    bias: float,
    delta: float,
    midpoint: str = "firing",
) -> MeasurementSet:
    """Interval integrals implied by the firing times and a parameter set.

    ``sigma`` and ``nonsampling`` give one value per sampling interval; they
    may be the true values, calibrated estimates or nominal guesses.
    ``midpoint="firing"`` places ``theta_n`` halfway between the firings,
    ``"sampled"`` halfway through ``[a_n, b_n]``.
    """
    sigma = np.asarray(sigma, dtype=float)
    nonsampling = np.asarray(nonsampling, dtype=float)
    n = train.n_intervals
    if sigma.shape != (n,) or nonsampling.shape != (n,):
        raise ValueError(f"need {n} per-interval parameters, got {sigma.shape} and {nonsampling.shape}")
    t0, t1 = train.interval_starts, train.interval_ends
    P = sigma * delta - bias * (t1 - t0 - nonsampling)
    a = t0 + nonsampling
    if midpoint == "firing":
        theta = 0.5 * (t0 + t1)
    elif midpoint == "sampled":
        theta = 0.5 * (a + t1)
    else:
        raise ValueError("midpoint must be 'firing' or 'sampled'")
    return MeasurementSet(P, a, t1, theta)


# -- parameter sets for the four samplers ------------------------------------

def true_params(train: SpikeTrain) -> tuple[np.ndarray, np.ndarray]:
    if train.sigma is None:
        raise ValueError("train carries no true parameters")
    return train.sigma, train.nonsampling


def blind_params(train: SpikeTrain, kappa_calc: float, delta_dis0: float) -> tuple[np.ndarray, np.ndarray]:
    """Nominal constants for every interval (``xi`` taken as 1)."""
    n = train.n_intervals
    Tns = np.full(n, delta_dis0) + train.calibration_durations
    return np.full(n, kappa_calc), Tns


def estimated_params(train: SpikeTrain, records, n_segments: Optional[int] = None
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Per-interval ``(sigma_hat, T_ns_hat)`` from per-segment calibration records.

    ``T_ns_hat = T^v + delta_dis_hat`` on intervals holding an injection and
    ``delta_dis_hat`` elsewhere.  Segments without their own record borrow the
    nearest calibrated segment.
    """
    if not records:
        raise ValueError("no calibration records")
    segs = np.array([r.segment for r in records])
    s_hat = np.array([r.sigma_hat for r in records])
    d_hat = np.array([r.delta_dis_hat for r in records])

    def lookup(seg_idx):
        j = np.abs(seg_idx[:, None] - segs[None, :]).argmin(axis=1)
        return j

    Tv = train.calibration_durations
    d = d_hat[lookup(train.interval_segments(Tv))]
    Tns = Tv + d
    s = s_hat[lookup(train.interval_segments(Tns))]
    return s, Tns


# -- grid and operators -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform grid with trapezoid weights."""

    t: np.ndarray
    weights: np.ndarray = field(repr=False)

    @classmethod
    def uniform(cls, lo: float, hi: float, step: float) -> "Grid":
        n = int(np.ceil((hi - lo) / step - 1e-9)) + 1
        t = np.linspace(lo, hi, max(n, 4))
        h = t[1] - t[0]
        w = np.full(t.size, h)
        w[0] = w[-1] = h / 2
        return cls(t, w)

    @classmethod
    def for_measurements(cls, ms: MeasurementSet, kernel: SincKernel,
                         density: int = GRID_DENSITY) -> "Grid":
        step = (np.pi / kernel.omega) / density
        return cls.uniform(float(ms.a[0]), float(ms.b[-1]), step)

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0])

    def inner(self, f, g) -> float:
        return float(np.sum(self.weights * f * g))

    def norm(self, f) -> float:
        return float(np.sqrt(self.inner(f, f)))


# Lagrange basis on nodes z = 0, 1, 2, 3 as monomial coefficients (row k = L_k)
_LAGRANGE4 = np.linalg.inv(np.vander(np.arange(4.0), 4, increasing=True)).T


def interval_quadrature(grid: Grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix ``Q`` with ``(Q f)_n`` ~ integral of ``f`` over ``[a_n, b_n]``.

    On each grid cell the integrand is replaced by the cubic through the four
    surrounding nodes, integrated exactly over the part of the cell inside
    the interval.
    """
    t, h = grid.t, grid.h
    G = t.size
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < t[0] - 1e-12 * h) or np.any(b > t[-1] + 1e-12 * h):
        raise ValueError("intervals must lie inside the grid")
    ia = np.clip(np.floor((a - t[0]) / h).astype(int), 0, G - 2)
    ib = np.clip(np.floor((b - t[0]) / h).astype(int), 0, G - 2)
    counts = ib - ia + 1
    rows = np.repeat(np.arange(a.size), counts)
    cells = np.concatenate([np.arange(i, j + 1) for i, j in zip(ia, ib)]) if a.size else np.zeros(0, int)
    lo = np.maximum(np.repeat(a, counts), t[cells])
    hi = np.minimum(np.repeat(b, counts), t[cells] + h)
    hi = np.maximum(hi, lo)
    base = np.clip(cells - 1, 0, G - 4)
    zl = (lo - t[base]) / h
    zh = (hi - t[base]) / h
    # integrals of z^p over [zl, zh], p = 0..3
    powers = np.stack([(zh ** (p + 1) - zl ** (p + 1)) / (p + 1) for p in range(4)], axis=1)
    w = h * powers @ _LAGRANGE4.T  # (pieces, 4) weights on nodes base..base+3
    Q = np.zeros((a.size, G))
    for k in range(4):
        np.add.at(Q, (rows, base + k), w[:, k])
    return Q


class FrameOperator:
    """``A`` and its grid adjoint for a fixed set of sampling intervals.

    ``A f = K (Q f)`` with ``K[i, n] = g(t_i - theta_n)``.  The adjoint with
    respect to the weighted grid inner product is
    ``A* y = W^{-1} Q^T K^T W y``: the projected value ``(P y)(theta_n)``
    times the (discrete) indicator of ``[a_n, b_n]``.  For bandlimited
    arguments this coincides with ``sum_n y(theta_n) (g * 1_n)``.
    """

    def __init__(self, ms: MeasurementSet, kernel: SincKernel, grid: Grid):
        self.ms, self.kernel, self.grid = ms, kernel, grid
        self.K = kernel(grid.t[:, None] - ms.theta[None, :])
        self.Q = interval_quadrature(grid, ms.a, ms.b)

    def synthesize(self, P) -> np.ndarray:
        return self.K @ np.asarray(P, dtype=float)

    def interval_integrals(self, f) -> np.ndarray:
        return self.Q @ f

    def apply(self, f) -> np.ndarray:
        return self.K @ (self.Q @ f)

    def adjoint(self, y) -> np.ndarray:
        w = self.grid.weights
        proj_at_theta = self.K.T @ (w * y)
        return (self.Q.T @ proj_at_theta) / w


def apply_A(ms: MeasurementSet, kernel: SincKernel, grid: Grid, f=None) -> np.ndarray:
    """``sum_n P_n g(t - theta_n)`` on the grid.

    With ``f`` given, ``P_n`` are the interval integrals of the grid function
    ``f`` instead of the measured values.
    """
    op = FrameOperator(ms, kernel, grid)
    return op.synthesize(ms.P) if f is None else op.apply(np.asarray(f, dtype=float))


def apply_A_adjoint(ms: MeasurementSet, kernel: SincKernel, grid: Grid, y) -> np.ndarray:
    return FrameOperator(ms, kernel, grid).adjoint(np.asarray(y, dtype=float))


@dataclass(eq=False)
class ReconstructionResult:
    t: np.ndarray
    x_hat: np.ndarray
    method: str
    iterations: int = 0
    residuals: list = field(default_factory=list)
    status: str = "converged"
    coeffs: Optional[np.ndarray] = None

    def contraction_ratios(self) -> np.ndarray:
        """``||x_{l+1}-x_l|| / ||x_l-x_{l-1}||`` along the iteration."""
        r = np.asarray(self.residuals, dtype=float)
        if r.size < 2:
            return np.zeros(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return r[1:] / r[:-1]

    def contraction_factor(self, window: int = CONTRACTION_WINDOW) -> float:
        """Mean per-iteration shrink rate of the update over the first ``window`` steps.

        ``(||x_{w+1}-x_w|| / ||x_1-x_0||) ** (1/w)``.  Later ratios are governed
        by the slowly converging modes at the ends of a finite window and tend
        to one, so they do not reflect the contraction of the bulk.
        """
        r = np.asarray(self.residuals, dtype=float)
        w = min(window, r.size - 1)
        if w < 1 or r[0] == 0:
            return 0.0
        return float((r[w] / r[0]) ** (1.0 / w))


def reconstruct_neumann(
    ms: MeasurementSet,
    kernel: SincKernel,
    grid: Optional[Grid] = None,
    max_iters: int = 500,
    stop_tol: float = 1e-12,
    operator: Optional[FrameOperator] = None,
) -> ReconstructionResult:
    """Neumann-series decoder ``x_{l+1} = x_0 + (I - A) x_l``, ``x_0 = A x``.

    Stops when the weighted change falls to ``stop_tol * ||x_l||`` or after
    ``max_iters``; if the change grows for five consecutive iterations the
    result is returned with ``status="diverged"``.
    """
    if grid is None:
        grid = Grid.for_measurements(ms, kernel)
    op = operator or FrameOperator(ms, kernel, grid)
    x0 = op.synthesize(ms.P)
    x = x0.copy()
    residuals = []
    status = "max_iters"
    growth = 0
    it = 0
    norm0 = grid.norm(x0)
    if norm0 == 0:
        return ReconstructionResult(grid.t, x, "neumann", 1, [0.0], "converged")
    for it in range(1, max_iters + 1):
        x_new = x0 + x - op.apply(x)
        change = grid.norm(x_new - x)
        residuals.append(change)
        x = x_new
        if change <= stop_tol * grid.norm(x):
            status = "converged"
            break
        if len(residuals) > 1 and change > residuals[-2]:
            growth += 1
            if growth >= DIVERGENCE_PATIENCE:
                status = "diverged"
                break
        else:
            growth = 0
    return ReconstructionResult(grid.t, x, "neumann", it, residuals, status)


def sinc_gram(ms: MeasurementSet, kernel: SincKernel) -> np.ndarray:
    """``G[n, m]`` = integral of ``g(s - theta_m)`` over ``[a_n, b_n]`` (closed form)."""
    return kernel.integral(ms.a[:, None] - ms.theta[None, :], ms.b[:, None] - ms.theta[None, :])


def reconstruct_pinv(
    ms: MeasurementSet,
    kernel: SincKernel,
    grid: Optional[Grid] = None,
    ridge: Optional[float] = None,
) -> ReconstructionResult:
    """Least-squares fit of ``sum_m c_m g(t - theta_m)`` to the measurements.

    Solves ``(G^T G + ridge I) c = G^T P``.  The default ridge is
    ``1e-10 * trace(G^T G) / N``; pass ``ridge=0`` for a plain solve.

    Raises
    ------
    SolverError
        If the system is singular for the requested ridge.
    """
    if ms.N < 2:
        if ms.N == 0:
            raise ValueError("need at least one measurement")
    if grid is None:
        grid = Grid.for_measurements(ms, kernel)
    G = sinc_gram(ms, kernel)
    GtG = G.T @ G
    if ridge is None:
        ridge = 1e-10 * np.trace(GtG) / ms.N
    A = GtG + ridge * np.eye(ms.N)
    try:
        c = linalg.solve(A, G.T @ ms.P, assume_a="pos")
    except (linalg.LinAlgError, ValueError) as err:
        raise SolverError(f"Gram system is singular ({err}); use a positive ridge") from err
    if not np.all(np.isfinite(c)):
        raise SolverError("Gram system is singular; use a positive ridge")
    x = kernel(grid.t[:, None] - ms.theta[None, :]) @ c
    return ReconstructionResult(grid.t, x, "pseudoinverse", 1, [], "converged", coeffs=c)


def interior_mask(t: np.ndarray, lo: float, hi: float, guard: float) -> np.ndarray:
    return (t >= lo + guard) & (t <= hi - guard)


def nmse(reference, estimate, mask=None, weights=None) -> float:
    """``10 log10(sum (x - x_hat)^2 / sum x^2)`` over the masked points, in dB.

    Identical inputs give the floor value of -300 dB.
    """
    x = np.asarray(reference, dtype=float)
    y = np.asarray(estimate, dtype=float)
    if x.shape != y.shape:
        raise ValueError("reference and estimate must share a grid")
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    if mask is not None:
        x, y, w = x[mask], y[mask], w[mask]
    ref = float(np.sum(w * x * x))
    if ref == 0:
        raise UndefinedNMSEError("reference has zero energy on the window")
    err = float(np.sum(w * (x - y) ** 2))
    if err == 0:
        return NMSE_FLOOR_DB
    return max(NMSE_FLOOR_DB, 10.0 * np.log10(err / ref))
