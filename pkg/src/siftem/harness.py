"""
Batch evaluation of the four samplers on random sinc-sum signals.

For each signal: draw the coefficients, set ``b`` from the amplitude, tune
``kappa_sup`` to the recovery-condition target, draw a per-segment mismatch
realization, encode once without and once with calibration injections, and
reconstruct with

- ``ideal``: clean train, true parameters;
- ``blind``: clean train, first-segment ``kappa`` and discharge time, ``xi = 1``;
- ``scal``:  injection train, calibrated estimates;
- ``genie``: injection train, true parameters.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import feasibility
from .calibration import CalibrationPlan, calibrate, plan_calibration, records_to_csv
from .errors import ConfigurationError, TemError
from .reconstruction import (
    FrameOperator,
    Grid,
    blind_params,
    estimated_params,
    interior_mask,
    measurements,
    nmse,
    reconstruct_neumann,
    true_params,
)
from .signal_model import BandlimitedSignal, SincKernel, generate_signal, pulse_spacing
from .tem_core import EncoderConfig, MismatchBounds, MismatchSchedule, SpikeTrain, encode

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODES = ("ideal", "blind", "scal", "genie")


@dataclass
class ExperimentConfig:
    """All knobs of a batch run; defaults give the reference batch setting.

    ``recovery_band`` selects the band used by the recovery condition and the
    decoder kernel: ``"occupied"`` is the band actually occupied by the sinc
    sum (``pi / pulse_spacing``), ``"omega_M"`` the nominal band parameter,
    or a number in rad/s.

    ``xi_levels`` are the gains applied to segments whose peak of ``x + b``
    falls in the low, middle and high third of ``[b - c, b + c]``.
    """

    num_signals: int = 50
    M: int = 12
    omega_M: float = 200 * np.pi
    delta: float = 1.0
    bias_multiplier: float = 1.3
    segment_length: float = 0.04
    xi_levels: tuple = (1.0, 0.98, 1.002)
    delta_dis_range: tuple = (2.85e-6, 3e-6)
    kappa_spread: float = 0.03
    margin_target: float = 0.8
    k: int = 2
    cal_level_fraction: float = 0.5
    cal_alpha: float = -1.0
    cal_margin: float = 0.1
    seed: int = 0
    grid_density: int = 32
    recovery_band: Union[str, float] = "occupied"
    max_iters: int = 500
    stop_tol: float = 1e-12
    guard_nyquist: float = 2.0
    # fixed-parameter overrides (the single-signal figure setting)
    fixed_bias: Optional[float] = None
    fixed_kappa_range: Optional[tuple] = None
    fixed_T_ns_sup: Optional[float] = None
    zero_drift: bool = False
    output_dir: str = "out"

    def __post_init__(self):
        for name in ("xi_levels", "delta_dis_range", "fixed_kappa_range"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, tuple(float(x) for x in v))
        self.validate()

    def validate(self):
        if self.num_signals < 0 or self.M < 1:
            raise ConfigurationError("num_signals must be >= 0 and M >= 1")
        if self.omega_M <= 0 or self.delta <= 0 or self.segment_length <= 0:
            raise ConfigurationError("omega_M, delta and segment_length must be positive")
        if not self.bias_multiplier > 1:
            raise ConfigurationError("bias_multiplier must exceed 1")
        if len(self.xi_levels) != 3 or min(self.xi_levels) <= 0:
            raise ConfigurationError("xi_levels needs three positive gains")
        lo, hi = self.delta_dis_range
        if not 0 <= lo <= hi:
            raise ConfigurationError("delta_dis_range must be a nonempty range")
        if not 0 <= self.kappa_spread < 1:
            raise ConfigurationError("kappa_spread must lie in [0, 1)")
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if self.cal_alpha == 1:
            raise ConfigurationError("cal_alpha must differ from 1")
        if self.fixed_kappa_range is not None:
            a, b = self.fixed_kappa_range
            if not 0 < a <= b:
                raise ConfigurationError("fixed_kappa_range must be a nonempty positive range")
        if isinstance(self.recovery_band, str) and self.recovery_band not in ("occupied", "omega_M"):
            raise ConfigurationError("recovery_band must be 'occupied', 'omega_M' or a number")

    @property
    def recovery_omega(self) -> float:
        if self.recovery_band == "occupied":
            return np.pi / pulse_spacing(self.omega_M)
        if self.recovery_band == "omega_M":
            return self.omega_M
        return float(self.recovery_band)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported config schema version {version!r}")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as err:
            raise ConfigurationError(str(err)) from err

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigurationError(f"cannot read config {path}: {err}") from err

    @classmethod
    def fig3(cls, **kw) -> "ExperimentConfig":
        """Single-signal preset with fixed bias and mismatch ranges."""
        base = dict(num_signals=1, fixed_bias=1.48094, fixed_kappa_range=(0.00229, 0.002361),
                    fixed_T_ns_sup=26e-6)
        base.update(kw)
        return cls(**base)


def signal_seeds(seed: int, n: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(ch.generate_state(1, dtype=np.uint64)[0]) for ch in children]


@dataclass(eq=False)
class Scenario:
    """Everything needed to encode and decode one signal."""

    index: int
    seed: int
    signal: BandlimitedSignal
    bias: float
    bounds: MismatchBounds
    schedule: MismatchSchedule
    T_ns_sup: float
    plan: CalibrationPlan
    omega: float
    uncalibrated: feasibility.RecoveryReport
    calibrated: feasibility.RecoveryReport
    delta: float = 1.0

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(self.bias, self.delta, self.schedule)


def _xi_by_amplitude(signal, bias, schedule_start, L, n_seg, levels) -> np.ndarray:
    c = signal.amplitude_bound
    xi = np.empty(n_seg)
    lo, hi = signal.window
    for i in range(n_seg):
        s0 = schedule_start + i * L
        s1 = min(s0 + L, hi)
        t = np.linspace(s0, s1, 257)
        peak = float(np.max(signal(t) + bias))
        u = (peak - (bias - c)) / (2 * c) if c > 0 else 0.0
        xi[i] = levels[min(2, int(np.floor(3 * u)))]
    return xi


def build_scenario(config: ExperimentConfig, index: int, seed: Optional[int] = None,
                   signal: Optional[BandlimitedSignal] = None) -> Scenario:
    """Signal, bias, tuned bounds, drift realization and calibration plan for one signal.

    ``signal`` replaces the generated one; ``seed`` still drives the drift draw.
    """
    if seed is None:
        seed = signal_seeds(config.seed, index + 1)[index]
    sig = generate_signal(config.M, config.omega_M, seed=seed) if signal is None else signal
    if config.fixed_bias is not None:
        # rescale so that b / c keeps the configured ratio
        target_c = config.fixed_bias / config.bias_multiplier
        sig = BandlimitedSignal(sig.coeffs * (target_c / sig.amplitude_bound), sig.omega_M, seed=seed)
        bias = float(config.fixed_bias)
    else:
        bias = config.bias_multiplier * sig.amplitude_bound
    c = sig.amplitude_bound
    omega = config.recovery_omega
    levels = config.xi_levels
    base = MismatchBounds(1.0, 1.0, min(levels), max(levels), *config.delta_dis_range)
    if config.fixed_kappa_range is not None:
        k_inf, k_sup = config.fixed_kappa_range
    else:
        k_sup = feasibility.tune_kappa_sup(config.margin_target, omega, bias, c, config.delta,
                                           base, spread=config.kappa_spread)
        k_inf = k_sup * (1 - config.kappa_spread)
    bounds = base.replace(kappa_inf=k_inf, kappa_sup=k_sup)

    rng = np.random.Generator(np.random.PCG64([seed, 1]))
    lo, hi = sig.window
    L = config.segment_length
    n_seg = int(np.ceil((hi - lo) / L - 1e-9))
    if config.zero_drift:
        kappa = np.full(n_seg, k_sup)
        dd = np.full(n_seg, config.delta_dis_range[1])
        xi = np.ones(n_seg)
        bounds = bounds.replace(gamma_inf=min(1.0, bounds.gamma_inf), gamma_sup=max(1.0, bounds.gamma_sup))
    else:
        kappa = rng.uniform(k_inf, k_sup, n_seg)
        dd = rng.uniform(*config.delta_dis_range, n_seg)
        xi = _xi_by_amplitude(sig, bias, lo, L, n_seg, levels)
    schedule = MismatchSchedule(lo, L, kappa, xi, dd, bounds)

    uncal = feasibility.report(bounds, bias, c, config.delta, omega)
    if config.fixed_T_ns_sup is not None:
        T_ns_sup = float(config.fixed_T_ns_sup)
    else:
        T_ns_sup = feasibility.max_nonsampling(omega, bounds, bias, c, config.delta)
    cal = feasibility.report(bounds, bias, c, config.delta, omega, T_ns_sup)
    plan = plan_calibration(bounds, bias, T_ns_sup, k=config.k,
                            V=config.cal_level_fraction * c, alpha=config.cal_alpha,
                            margin=config.cal_margin)
    return Scenario(index, seed, sig, bias, bounds, schedule, T_ns_sup, plan, omega, uncal, cal,
                    config.delta)


@dataclass(eq=False)
class SignalRun:
    """Trains, estimates and reconstructions of one signal."""

    scenario: Scenario
    clean: SpikeTrain
    field: SpikeTrain
    records: list
    grid: Grid
    reference: np.ndarray
    mask: np.ndarray
    reconstructions: dict
    nmse_db: dict
    iterations: dict
    status: dict


def sampler_measurements(sc: Scenario, clean: SpikeTrain, field_train: SpikeTrain, records,
                         delta: float) -> dict:
    """Measurement set of each sampler mode."""
    b = sc.bias
    kappa_calc = float(sc.schedule.kappa[0])
    d0 = float(sc.schedule.delta_dis[0])
    return {
        "ideal": measurements(clean, *true_params(clean), b, delta),
        "blind": measurements(clean, *blind_params(clean, kappa_calc, d0), b, delta),
        "scal": measurements(field_train, *estimated_params(field_train, records), b, delta),
        "genie": measurements(field_train, *true_params(field_train), b, delta),
    }


def run_signal(config: ExperimentConfig, sc: Scenario) -> SignalRun:
    clean = encode(sc.signal, sc.encoder)
    field_train = encode(sc.signal, sc.encoder, plan=sc.plan)
    records = calibrate(field_train, sc.plan, sc.bounds, sc.schedule)
    sets = sampler_measurements(sc, clean, field_train, records, config.delta)
    kernel = SincKernel(sc.omega)
    lo, hi = sc.signal.window
    step = (np.pi / sc.omega) / config.grid_density
    grid = Grid.uniform(lo, hi, step)
    x = sc.signal(grid.t)
    # score on the span every train covers, minus a guard at both ends
    t_first = max(clean.signal_times[0], field_train.signal_times[0])
    t_last = min(clean.signal_times[-1], field_train.signal_times[-1])
    mask = interior_mask(grid.t, t_first, t_last, config.guard_nyquist * np.pi / sc.omega)
    recs, scores, iters, status = {}, {}, {}, {}
    for mode in MODES:
        ms = sets[mode]
        res = reconstruct_neumann(ms, kernel, grid, config.max_iters, config.stop_tol,
                                  operator=FrameOperator(ms, kernel, grid))
        recs[mode] = res
        scores[mode] = nmse(x, res.x_hat, mask, grid.weights)
        iters[mode] = res.iterations
        status[mode] = res.status
    return SignalRun(sc, clean, field_train, records, grid, x, mask, recs, scores, iters, status)


def _signal_summary(run: SignalRun) -> dict:
    sc = run.scenario
    seg_err = []
    for r in run.records:
        seg_err.append({
            "segment": r.segment,
            "T_v": list(r.T_v),
            "sigma_hat": r.sigma_hat,
            "delta_dis_hat": r.delta_dis_hat,
            "sigma_err": r.sigma_hat - r.sigma_true,
            "delta_dis_err": r.delta_dis_hat - r.delta_dis_true,
            "flag": r.flag,
        })
    return {
        "index": sc.index,
        "seed": sc.seed,
        "c": sc.signal.amplitude_bound,
        "b": sc.bias,
        "kappa_inf": sc.bounds.kappa_inf,
        "kappa_sup": sc.bounds.kappa_sup,
        "sigma_sup": sc.bounds.sigma_sup,
        "delta_dis_sup": sc.bounds.delta_dis_sup,
        "T_ns_sup": sc.T_ns_sup,
        "lambdas": list(sc.plan.lambdas),
        "feasibility": {"uncalibrated": sc.uncalibrated.to_dict(),
                        "calibrated": sc.calibrated.to_dict()},
        "nmse_db": dict(run.nmse_db),
        "iterations": dict(run.iterations),
        "status": dict(run.status),
        "n_intervals": {"clean": run.clean.n_intervals, "field": run.field.n_intervals},
        "segments": seg_err,
    }


@dataclass
class ExperimentReport:
    config: dict
    signals: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    runtime_s: float = 0.0

    def nmse_table(self) -> dict:
        return {m: [s["nmse_db"][m] for s in self.signals] for m in MODES}

    def aggregates(self) -> dict:
        out = {}
        for m, vals in self.nmse_table().items():
            if vals:
                out[m] = {"mean_db": float(np.mean(vals)), "worst_db": float(np.max(vals)),
                          "best_db": float(np.min(vals))}
            else:
                out[m] = {"mean_db": None, "worst_db": None, "best_db": None}
        return out

    def summary(self) -> dict:
        """Deterministic part of the report (no timings)."""
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "aggregates": self.aggregates(),
            "signals": self.signals,
            "failures": self.failures,
        }

    def summary_json(self) -> str:
        return json.dumps(_jsonable(self.summary()), indent=2, sort_keys=True)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if np.isfinite(v) else repr(v)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def _worker(args):
    config, index, seed = args
    try:
        sc = build_scenario(config, index, seed)
        run = run_signal(config, sc)
        return index, _signal_summary(run), None
    except TemError as err:
        return index, None, f"{type(err).__name__}: {err}"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("TEM_THREADS", "1")))
    except ValueError:
        return 1


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentReport:
    """Run the whole batch; per-signal failures are recorded, not raised."""
    config.validate()
    t0 = time.perf_counter()
    seeds = signal_seeds(config.seed, config.num_signals)
    jobs = [(config, i, s) for i, s in enumerate(seeds)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = [_worker(j) for j in jobs]
    report = ExperimentReport(config=config.to_dict())
    for index, summary, failure in sorted(results, key=lambda r: r[0]):
        if failure is None:
            report.signals.append(summary)
        else:
            log.warning("signal %d failed: %s", index, failure)
            report.failures.append({"index": index, "reason": failure})
    report.runtime_s = time.perf_counter() - t0
    return report


# -- plot data ----------------------------------------------------------------

def _fmt(v) -> str:
    return format(float(v), ".17g")


def _write_csv(path: Path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as err:
        raise OSError(f"cannot write {path}: {err}") from err


def emit_plotdata(report: ExperimentReport, run: Optional[SignalRun], outdir) -> list[Path]:
    """Write the four figure tables and ``summary.json``.

    ``run`` is the signal whose traces are tabulated; without it the tables
    hold only their headers.
    """
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OSError(f"cannot create {out}: {err}") from err
    rows_a, rows_b, rows_c, rows_d = [], [], [], []
    if run is not None:
        for i, t in enumerate(run.grid.t):
            rows_a.append([_fmt(t), _fmt(run.reference[i])]
                          + [_fmt(run.reconstructions[m].x_hat[i]) for m in MODES])
        sched = run.scenario.schedule
        est = {r.segment: r for r in run.records}
        for s in range(sched.n_segments):
            r = est.get(s)
            d_hat = _fmt(r.delta_dis_hat) if r else ""
            s_hat = _fmt(r.sigma_hat) if r else ""
            rows_b.append([s, _fmt(sched.delta_dis[s]), d_hat])
            rows_c.append([s, _fmt(sched.kappa[s]), _fmt(sched.sigma[s]), s_hat])
            rows_d.append([s, _fmt(sched.xi[s])])
    paths = [out / n for n in ("fig3a.csv", "fig3b.csv", "fig3c.csv", "fig3d.csv", "summary.json")]
    _write_csv(paths[0], ["t", "x"] + [f"x_hat_{m}" for m in MODES], rows_a)
    _write_csv(paths[1], ["segment", "delta_dis_true", "delta_dis_est"], rows_b)
    _write_csv(paths[2], ["segment", "kappa_true", "sigma_true", "sigma_est"], rows_c)
    _write_csv(paths[3], ["segment", "xi_true"], rows_d)
    try:
        paths[4].write_text(report.summary_json() + "\n")
    except OSError as err:
        raise OSError(f"cannot write {paths[4]}: {err}") from err
    return paths


def write_signal_outputs(run: SignalRun, outdir) -> list[Path]:
    """Per-mode reconstruction tables, trains and calibration records of one signal."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for m in MODES:
        p = out / f"recon_{m}.csv"
        rows = [[_fmt(t), _fmt(x), _fmt(y)]
                for t, x, y in zip(run.grid.t, run.reference, run.reconstructions[m].x_hat)]
        _write_csv(p, ["t", "x_true", "x_hat"], rows)
        written.append(p)
    summary = [{
        "mode": m,
        "nmse_db": run.nmse_db[m],
        "iterations": run.iterations[m],
        "status": run.status[m],
        "margin_report": (run.scenario.uncalibrated if m in ("ideal", "blind")
                          else run.scenario.calibrated).to_dict(),
    } for m in MODES]
    p = out / "reconstruction.json"
    p.write_text(json.dumps(_jsonable(summary), indent=2) + "\n")
    written.append(p)
    for name, train in (("train_clean.csv", run.clean), ("train_cal.csv", run.field)):
        (out / name).write_text(train.to_csv(genie=True))
        written.append(out / name)
    (out / "calibration.csv").write_text(records_to_csv(run.records))
    written.append(out / "calibration.csv")
    return written
