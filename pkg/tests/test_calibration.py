import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import default_scenario
from siftem.calibration import (
    CalibrationPlan,
    calibrate,
    estimate_params,
    injection_duration,
    plan_calibration,
    records_to_csv,
    simulate_injection,
)
from siftem.errors import (
    ConfigurationError,
    IllConditionedError,
    ImplausibleEstimateError,
    InfeasibleCalibrationError,
    SingularCalibrationError,
)
from siftem.tem_core import CALIBRATION, SIGNAL, EncoderConfig, MismatchBounds, MismatchSchedule, SpikeTrain, encode

FIG3 = MismatchBounds(0.00229, 0.002361, 1.0, 1.0, 2.85e-6, 3e-6)
B = 1.48094


def test_plan_threshold_fig3_setting():
    V = 0.5
    plan = plan_calibration(FIG3, B, 26e-6, V=V, alpha=-1.0, margin=0.1)
    limit = (26e-6 - 6e-6) * (B - V) / 0.002361
    assert plan.delta_cali[0] == pytest.approx(0.9 * limit, rel=1e-14)
    assert plan.delta_cali[0] < limit
    assert all(lam < (26e-6 - 6e-6) / 0.002361 for lam in plan.lambdas)
    assert plan.satisfies_budget(FIG3, 26e-6)


def test_plan_no_headroom():
    with pytest.raises(InfeasibleCalibrationError):
        plan_calibration(FIG3, B, 2 * FIG3.delta_dis_sup, V=0.5)


def test_plan_alpha_one():
    with pytest.raises(SingularCalibrationError):
        plan_calibration(FIG3, B, 26e-6, V=0.5, alpha=1.0)


def test_plan_level_below_bias():
    with pytest.raises(ConfigurationError):
        plan_calibration(FIG3, B, 26e-6, V=2 * B, alpha=-1.0)


def test_injection_duration_constructed_identity():
    sigma, thr = 0.0023, 7.0
    b = 1.0
    level = sigma * thr - b
    assert injection_duration(level, thr, b, sigma, 0.0) == pytest.approx(1.0, rel=1e-15)


def test_injection_duration_arithmetic():
    got = injection_duration(1.5, 1.0, 1.0, 0.0023, 3e-6)
    ref = float(mpmath.mpf("0.0023") / mpmath.mpf("2.5") + mpmath.mpf("3e-6"))
    assert got == pytest.approx(ref, rel=1e-15)
    assert got == pytest.approx(0.00092 + 3e-6, rel=1e-15)


def test_injection_zero_threshold():
    assert injection_duration(0.2, 0.0, 1.0, 0.0023, 3e-6) == 3e-6


def test_injection_invalid_level():
    with pytest.raises(ConfigurationError):
        injection_duration(-1.0, 1.0, 1.0, 0.0023, 3e-6)


def test_estimate_round_trip():
    plan = plan_calibration(FIG3, B, 26e-6, V=0.5)
    s, d = 0.00231, 2.9e-6
    Tv = [injection_duration(*plan.injection(i), B, s, d) for i in (0, 1)]
    s_hat, d_hat = estimate_params(*Tv, plan)
    assert s_hat == pytest.approx(s, rel=1e-12)
    assert d_hat == pytest.approx(d, rel=1e-12)


def test_equal_lambdas_ill_conditioned():
    V = 0.5
    thr = 0.01
    plan = CalibrationPlan(k=2, level=V, alpha=-1.0, bias=B,
                           delta_cali=(thr * (V + B), thr * (B - V)))
    assert plan.lambdas[0] == pytest.approx(plan.lambdas[1], rel=1e-15)
    with pytest.raises(IllConditionedError):
        estimate_params(1e-5, 1e-5, plan)


def test_implausible_estimate_carries_values():
    plan = plan_calibration(FIG3, B, 26e-6, V=0.5)
    with pytest.raises(ImplausibleEstimateError) as info:
        # second injection shorter than the first although its lambda is larger
        estimate_params(2e-5, 1e-5, plan)
    assert info.value.sigma_hat < 0


def test_drift_between_injections_biases_linearly():
    plan = plan_calibration(FIG3, B, 26e-6, V=0.5)
    s, d = 0.0023, 2.9e-6

    def error(drift):
        Tv0 = injection_duration(*plan.injection(0), B, s, d)
        Tvk = injection_duration(*plan.injection(1), B, s * (1 + drift), d)
        s_hat, _ = estimate_params(Tv0, Tvk, plan)
        return s_hat - s

    e1, e2 = error(0.015), error(0.03)
    assert abs(e2) > 0
    assert e2 == pytest.approx(2 * e1, rel=1e-6)


def test_calibrate_on_encoded_train():
    sc = default_scenario(0)
    train = encode(sc.signal, sc.encoder, plan=sc.plan)
    records = calibrate(train, sc.plan, sc.bounds, sc.schedule)
    assert len(records) >= sc.schedule.n_segments - 1
    for r in records:
        assert r.flag == "ok"
        assert r.sigma_hat == pytest.approx(r.sigma_true, rel=1e-10)
        assert r.delta_dis_hat == pytest.approx(r.delta_dis_true, rel=1e-10)
    text = records_to_csv(records)
    assert text.splitlines()[0].startswith("segment_index,T_v1,T_v2")
    assert len(text.splitlines()) == len(records) + 1


def test_calibrate_clamps_implausible():
    plan = plan_calibration(FIG3, B, 26e-6, V=0.5)
    times = [0.0, 2e-5, 3e-3, 6e-3, 6e-3 + 1e-5, 9e-3]
    kinds = [SIGNAL, CALIBRATION, SIGNAL, SIGNAL, CALIBRATION, SIGNAL]
    rec, = calibrate(SpikeTrain(times, kinds), plan, FIG3)
    assert rec.flag == "clamped"
    assert FIG3.sigma_inf <= rec.sigma_hat <= FIG3.sigma_sup
    assert FIG3.delta_dis_inf <= rec.delta_dis_hat <= FIG3.delta_dis_sup


def test_simulate_injection_uses_schedule():
    sched = MismatchSchedule.constant(0.0023, 3e-6, 0.0, 1.0, xi=0.98)
    cfg = EncoderConfig(B, 1.0, sched)
    got = simulate_injection(cfg, 0.1, 0.5, 0.01)
    assert got == pytest.approx(0.01 / (0.5 + B) * 0.0023 / 0.98 + 3e-6, rel=1e-15)


def test_calibration_budget_monte_carlo():
    rng = np.random.default_rng(0)
    n = 10_000
    bounds = FIG3.replace(gamma_inf=0.98, gamma_sup=1.002)
    T_ns_sup = rng.uniform(6.5e-6, 60e-6, n)
    V = rng.uniform(0.0, 0.9, n) * B
    alpha = rng.uniform(-1.0, 0.9, n)
    sigma = rng.uniform(bounds.sigma_inf, bounds.sigma_sup, n)
    dd = rng.uniform(bounds.delta_dis_inf, bounds.delta_dis_sup, n)
    worst = -np.inf
    for i in range(n):
        plan = plan_calibration(bounds, B, T_ns_sup[i], V=V[i], alpha=alpha[i])
        for j in (0, 1):
            Tv = injection_duration(*plan.injection(j), B, sigma[i], dd[i])
            worst = max(worst, Tv + bounds.delta_dis_sup - T_ns_sup[i])
    assert worst < 0


@settings(max_examples=200, deadline=None)
@given(
    s_frac=st.floats(0, 1), d_frac=st.floats(0, 1),
    V=st.floats(0.05, 1.2), alpha=st.floats(-1.0, 0.8), T_ns=st.floats(8e-6, 80e-6),
)
def test_round_trip_property(s_frac, d_frac, V, alpha, T_ns):
    plan = plan_calibration(FIG3, B, T_ns, V=V, alpha=alpha)
    s = FIG3.sigma_inf + s_frac * (FIG3.sigma_sup - FIG3.sigma_inf)
    d = FIG3.delta_dis_inf + d_frac * (FIG3.delta_dis_sup - FIG3.delta_dis_inf)
    sched = MismatchSchedule(0.0, 1.0, [s], [1.0], [d], FIG3)
    cfg = EncoderConfig(B, 1.0, sched)
    Tv = [simulate_injection(cfg, 0.5, *plan.injection(i)) for i in (0, 1)]
    assert max(Tv) + FIG3.delta_dis_sup < T_ns
    s_hat, d_hat = estimate_params(*Tv, plan)
    assert s_hat == pytest.approx(s, rel=1e-10)
    assert d_hat == pytest.approx(d, rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(scale=st.floats(0.1, 0.99), s_frac=st.floats(0, 1))
def test_threshold_scale_equivariance(scale, s_frac):
    plan = plan_calibration(FIG3, B, 26e-6, V=0.5)
    scaled = CalibrationPlan(plan.k, plan.level, plan.alpha,
                             tuple(scale * t for t in plan.delta_cali), plan.bias)
    assert np.allclose(scaled.lambdas, scale * np.array(plan.lambdas), rtol=1e-15)
    s = FIG3.sigma_inf + s_frac * (FIG3.sigma_sup - FIG3.sigma_inf)
    d = 2.9e-6
    Tv = [injection_duration(*plan.injection(i), B, s, d) for i in (0, 1)]
    Tv_s = [injection_duration(*scaled.injection(i), B, s, d) for i in (0, 1)]
    assert np.allclose(np.array(Tv_s) - d, scale * (np.array(Tv) - d), rtol=1e-12)
    assert estimate_params(*Tv_s, scaled)[1] == pytest.approx(estimate_params(*Tv, plan)[1], rel=1e-9)
