import csv
import json

import numpy as np
import pytest

from siftem.errors import ConfigurationError
from siftem.harness import (
    MODES,
    ExperimentConfig,
    ExperimentReport,
    build_scenario,
    emit_plotdata,
    run_experiment,
    run_signal,
)


@pytest.fixture(scope="module")
def small_report():
    return run_experiment(ExperimentConfig(num_signals=3, seed=11))


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(num_signals=4, seed=9)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = ExperimentConfig.load(path)
    assert back.to_dict() == cfg.to_dict()
    assert back.to_dict()["schema_version"] == 1


@pytest.mark.parametrize("bad", [
    {"bias_multiplier": 1.0},
    {"delta_dis_range": [3e-6, 2e-6]},
    {"xi_levels": [1.0, 0.98]},
    {"fixed_kappa_range": [0.003, 0.002]},
    {"unknown_key": 1},
    {"schema_version": 99},
])
def test_config_rejects(bad):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(bad)


def test_default_config_values():
    cfg = ExperimentConfig()
    assert (cfg.M, cfg.delta, cfg.bias_multiplier, cfg.k) == (12, 1.0, 1.3, 2)
    assert cfg.segment_length == 0.04
    assert cfg.delta_dis_range == (2.85e-6, 3e-6)
    assert sorted(cfg.xi_levels) == [0.98, 1.0, 1.002]
    assert cfg.recovery_omega == pytest.approx(100 * np.pi)


def test_scenario_tuned_to_target():
    sc = build_scenario(ExperimentConfig(), 0)
    assert sc.uncalibrated.value == pytest.approx(0.8, abs=1e-3)
    assert sc.bounds.kappa_inf == pytest.approx(0.97 * sc.bounds.kappa_sup)
    assert sc.calibrated.margin >= 0
    assert set(np.unique(sc.schedule.xi)) <= {0.98, 1.0, 1.002}


def test_report_shape(small_report):
    rep = small_report
    assert not rep.failures
    assert len(rep.signals) == 3
    for s in rep.signals:
        assert set(s["nmse_db"]) == set(MODES)
        assert s["nmse_db"]["blind"] - s["nmse_db"]["scal"] >= 40
    agg = rep.aggregates()
    assert set(agg) == set(MODES)
    assert agg["scal"]["worst_db"] >= agg["scal"]["mean_db"]


def test_calibration_budget_for_logged_segments(small_report):
    for s in small_report.signals:
        for seg in s["segments"]:
            assert max(seg["T_v"]) + s["delta_dis_sup"] < s["T_ns_sup"]
        limit = (s["T_ns_sup"] - 2 * s["delta_dis_sup"]) / s["sigma_sup"]
        assert max(s["lambdas"]) < limit


def test_estimator_errors_logged(small_report):
    for s in small_report.signals:
        errs = [abs(seg["sigma_err"]) for seg in s["segments"]]
        assert errs and max(errs) < 1e-10 * s["sigma_sup"]


def test_zero_drift_blind_matches_ideal():
    rep = run_experiment(ExperimentConfig(num_signals=1, zero_drift=True, seed=5))
    s = rep.signals[0]["nmse_db"]
    assert abs(s["blind"] - s["ideal"]) <= 1.0


def test_deterministic_and_pool_independent(small_report):
    again = run_experiment(ExperimentConfig(num_signals=3, seed=11), workers=2)
    assert again.summary_json() == small_report.summary_json()


def test_failures_recorded():
    cfg = ExperimentConfig(num_signals=2, margin_target=0.01)
    rep = run_experiment(cfg)
    assert not rep.signals
    assert len(rep.failures) == 2
    assert all("TuningError" in f["reason"] for f in rep.failures)


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_fig3_plotdata(tmp_path):
    cfg = ExperimentConfig.fig3()
    rep = run_experiment(cfg)
    run = run_signal(cfg, build_scenario(cfg, 0))
    paths = emit_plotdata(rep, run, tmp_path)
    assert [p.name for p in paths] == ["fig3a.csv", "fig3b.csv", "fig3c.csv", "fig3d.csv", "summary.json"]
    a, b, c, d = (_read(p) for p in paths[:4])
    assert a[0] == ["t", "x", "x_hat_ideal", "x_hat_blind", "x_hat_scal", "x_hat_genie"]
    segs = [[r[0] for r in tab[1:]] for tab in (b, c, d)]
    assert segs[0] == segs[1] == segs[2]
    assert len(segs[0]) == run.scenario.schedule.n_segments
    kappa = np.array([float(r[1]) for r in c[1:]])
    assert np.all((kappa >= 0.00229) & (kappa <= 0.002361))
    # 17 significant digits round-trip bit-exactly
    est = {r.segment: r.delta_dis_hat for r in run.records}
    for row in b[1:]:
        if row[2]:
            assert float(row[2]) == est[int(row[0])]
    summary = json.loads(paths[4].read_text())
    assert summary["signals"][0]["b"] == 1.48094


def test_empty_report_headers_only(tmp_path):
    rep = ExperimentReport(config=ExperimentConfig(num_signals=0).to_dict())
    paths = emit_plotdata(rep, None, tmp_path)
    for p in paths[:4]:
        assert len(_read(p)) == 1
    assert json.loads(paths[4].read_text())["signals"] == []


def test_plotdata_unwritable(tmp_path):
    target = tmp_path / "file"
    target.write_text("x")
    rep = ExperimentReport(config={})
    with pytest.raises(OSError, match="file"):
        emit_plotdata(rep, None, target / "sub")


def test_worker_count_from_env(monkeypatch):
    from siftem.harness import worker_count

    monkeypatch.setenv("TEM_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("TEM_THREADS", "junk")
    assert worker_count() == 1
    monkeypatch.delenv("TEM_THREADS")
    assert worker_count() == 1


def test_fifty_signal_batch():
    rep = run_experiment(ExperimentConfig(num_signals=50, seed=1))
    m = {k: v["mean_db"] for k, v in rep.aggregates().items()}
    assert not rep.failures
    assert m["scal"] <= -80 and m["genie"] <= -80 and m["ideal"] <= -80
    assert m["blind"] >= -30
    assert m["blind"] - m["scal"] >= 40
    assert abs(m["scal"] - m["genie"]) <= 5
