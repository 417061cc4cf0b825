"""Integrate-and-fire time encoding with hardware mismatch and self-calibration."""

from .errors import TemError
from .signal_model import BandlimitedSignal, SincKernel, generate_signal
from .tem_core import EncoderConfig, MismatchBounds, MismatchSchedule, SpikeTrain, encode
from .calibration import CalibrationPlan, calibrate, estimate_params, plan_calibration
from .feasibility import RecoveryReport, max_nonsampling, recovery_margin, tune_kappa_sup
from .reconstruction import nmse, reconstruct_neumann, reconstruct_pinv

__version__ = "0.1.0"

__all__ = [
    "TemError", "BandlimitedSignal", "SincKernel", "generate_signal",
    "EncoderConfig", "MismatchBounds", "MismatchSchedule", "SpikeTrain", "encode",
    "CalibrationPlan", "calibrate", "estimate_params", "plan_calibration",
    "RecoveryReport", "max_nonsampling", "recovery_margin", "tune_kappa_sup",
    "nmse", "reconstruct_neumann", "reconstruct_pinv",
]
