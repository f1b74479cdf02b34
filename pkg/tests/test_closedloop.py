import math

import numpy as np
import pytest
from conftest import feedforward_only

from boomctl.closedloop import (
    ControllerConfig, RUN_COLUMNS, decay_envelope_slope, full_error_model, nrmse,
    realize_vertex, reduce_error_model_check, run_closed_loop,
)
from boomctl.drive import average_voltage, clip_bemf, duty_extrema
from boomctl.errors import ConfigError, DomainError, IntegrationError
from boomctl.integrators import read_csv_columns
from boomctl.lmisyn import (
    RegionSpec, build_error_model, polytope_vertices, synthesize, synthesize_robust,
)
from boomctl.trajopt import PlannedTrajectory

ROUND_TRIP = 0.01001


# ---------------------------------------------------------------------------
# metric


def test_nrmse_perfect_tracking():
    r = np.array([0.0, 1.0, 3.0, 2.0, 0.0])
    assert nrmse(r, r) == 0.0


def test_nrmse_mean_output_is_one():
    r = np.array([0.0, 1.0, 3.0, 2.0, 0.0])
    keep = r != 0
    y = np.where(keep, r[keep].mean(), 7.0)  # values where r = 0 are ignored
    assert nrmse(r, y) == pytest.approx(1.0, rel=1e-15)


def test_nrmse_hand_value():
    r = np.array([1.0, 2.0, 3.0])
    y = np.array([1.0, 2.0, 4.0])
    assert nrmse(r, y) == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-15)


def test_nrmse_undefined_cases():
    with pytest.raises(DomainError):
        nrmse(np.zeros(4), np.ones(4))
    with pytest.raises(DomainError):
        nrmse([0.0, 2.0, 2.0], [0.0, 1.0, 1.0])
    with pytest.raises(ConfigError):
        nrmse([1.0, 2.0], [1.0])


# ---------------------------------------------------------------------------
# configuration


def test_controller_config_validation():
    with pytest.raises(ConfigError):
        ControllerConfig(K=(1.0, 2.0, 3.0))
    with pytest.raises(ConfigError):
        ControllerConfig(T_ctrl=0.0)
    with pytest.raises(ConfigError):
        ControllerConfig(substeps=0)
    with pytest.raises(ConfigError):
        ControllerConfig(theta_error="gyro")
    with pytest.raises(ConfigError):
        ControllerConfig(feedforward="median")
    assert ControllerConfig(K=np.array([[1.0, 2.0]])).K == (1.0, 2.0)


def test_plan_step_must_match_controller_period(plant, drive, smoke_plan):
    plan, _ = smoke_plan
    with pytest.raises(ConfigError):
        run_closed_loop(plant, drive, plan, ControllerConfig(T_ctrl=0.03))
    with pytest.raises(ConfigError):
        run_closed_loop(plant, drive, plan, ControllerConfig(), settle=-1.0)


# ---------------------------------------------------------------------------
# closed-loop runs


@pytest.fixture(scope="module")
def gains(plant):
    return synthesize(build_error_model(plant), RegionSpec(5.0, 100.0, math.pi / 6)).K


@pytest.fixture(scope="module")
def nominal(plant, drive, smoke_plan, gains):
    return run_closed_loop(plant, drive, smoke_plan[0], ControllerConfig(K=gains))


def test_zero_gain_equals_feedforward_replay(plant, drive, smoke_plan):
    plan, _ = smoke_plan
    rep = run_closed_loop(plant, drive, plan, ControllerConfig())
    np.testing.assert_array_equal(rep.log["u_fb"], 0.0)
    np.testing.assert_array_equal(rep.log["omega_m"], feedforward_only(plant, drive, plan))


def test_nominal_tracking(nominal, smoke_plan):
    assert nominal.nrmse <= 0.02
    assert nominal.saturation_fraction == 0.0
    assert abs(nominal.terminal_theta_error) <= 0.01


def test_superposition_before_clamping(nominal):
    log = nominal.log
    np.testing.assert_array_equal(log["u"], log["u_ff"] + log["u_fb"])


def test_unclamped_ticks_meet_round_trip_bound(plant, drive, nominal):
    log = nominal.log
    e_a = clip_bemf(plant.motor.k_t * log["omega_m"], drive)
    ok = ~log["clamped"]
    assert ok.sum() > 100
    applied = average_voltage(log["delta"][ok], e_a[ok], drive)
    ext = duty_extrema(e_a[ok], drive)
    gap = np.abs(applied - log["u"][ok])
    assert np.all(gap <= ROUND_TRIP * (ext.u_max - ext.u_min))


def test_run_is_deterministic(plant, drive, smoke_plan, gains, nominal, tmp_path):
    again = run_closed_loop(plant, drive, smoke_plan[0], ControllerConfig(K=gains))
    assert again.to_dict() == nominal.to_dict()
    for k in RUN_COLUMNS:
        np.testing.assert_array_equal(again.log[k], nominal.log[k])
    nominal.to_csv(tmp_path / "a.csv")
    again.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_run_csv_columns(nominal, tmp_path):
    nominal.to_csv(tmp_path / "run.csv")
    cols = read_csv_columns(tmp_path / "run.csv")
    assert tuple(cols) == RUN_COLUMNS
    np.testing.assert_array_equal(cols["omega_m"], nominal.log["omega_m"])


def test_encoder_error_source_tracks_too(plant, drive, smoke_plan, gains):
    ctrl = ControllerConfig(K=gains, theta_error="encoder", feedforward="node")
    rep = run_closed_loop(plant, drive, smoke_plan[0], ctrl)
    assert rep.nrmse <= 0.02


def test_constant_disturbance_stays_bounded(plant, drive, smoke_plan, gains):
    plan, _ = smoke_plan
    w = 0.05 * plant.motor.k_t  # torque of 50 mA of armature current
    rep = run_closed_loop(plant, drive, plan, ControllerConfig(K=gains), w=lambda t: -w)
    assert np.all(np.isfinite(rep.log["omega_m"]))
    assert rep.peak_speed_error <= 0.5 * np.abs(plan.r).max()


def test_blow_up_reports_time(plant, drive, smoke_plan):
    plan, _ = smoke_plan
    with np.errstate(all="ignore"):
        with pytest.raises(IntegrationError) as info:
            run_closed_loop(plant, drive, plan, ControllerConfig(),
                            w=lambda t: 1e308 if t >= 0.5 else 0.0)
    assert info.value.time == pytest.approx(0.5)


def test_inertia_perturbation_with_robust_gains(plant, drive, smoke_plan):
    plan, _ = smoke_plan
    model = build_error_model(plant)
    region = RegionSpec(5.0, 100.0, math.pi / 6)
    K = synthesize_robust(polytope_vertices(model, 0.2), region, model).K
    rep = run_closed_loop(plant, drive, plan, ControllerConfig(K=K),
                          perturbation={"J_mg": 1.2 * plant.trans.J_mg})
    assert np.all(np.isfinite(rep.log["omega_m"]))
    assert abs(rep.terminal_speed) <= 0.05 * np.abs(plan.r).max()


def test_settle_extends_run_with_zero_reference(plant, drive, smoke_plan):
    plan, _ = smoke_plan
    rep = run_closed_loop(plant, drive, plan, ControllerConfig(), settle=0.2)
    t = rep.log["t"]
    assert t[-1] == pytest.approx(plan.times[-1] + 0.2)
    np.testing.assert_array_equal(rep.log["r"][t > plan.times[-1] + 1e-9], 0.0)


# ---------------------------------------------------------------------------
# vertex realization and error-model checks


@pytest.mark.parametrize("fa,fb", [(0.8, 0.8), (0.8, 1.2), (1.2, 0.8), (1.2, 1.2), (1.0, 1.1)])
def test_realized_vertex_scales_error_model(plant, fa, fb):
    m = build_error_model(plant)
    v = build_error_model(realize_vertex(plant, fa, fb))
    assert v.a22 == pytest.approx(fa * m.a22, rel=1e-12)
    assert v.b2 == pytest.approx(fb * m.b2, rel=1e-12)


def test_vertex_needing_negative_inertia_rejected(plant):
    with pytest.raises(DomainError):
        realize_vertex(plant, 0.01, 1.0)


def test_reduction_exact_without_inductance(plant):
    rep = reduce_error_model_check(plant, L_a=0.0)
    assert rep["max_deviation"] <= 1e-12


def test_reduction_dc_gains_agree(plant):
    for L in (plant.motor.L_a, 0.5 * plant.motor.L_a, 0.0):
        rep = reduce_error_model_check(plant, L_a=L)
        assert rep["dc_gain_full"] == pytest.approx(rep["dc_gain_reduced"], rel=1e-12)


def test_reduction_deviation_first_order_in_inductance(plant):
    L = plant.motor.L_a
    devs = [reduce_error_model_check(plant, L_a=L * 0.5**j)["max_deviation"] for j in range(4)]
    ratios = np.array(devs[1:]) / np.array(devs[:-1])
    assert np.all(np.diff(devs) < 0)
    assert np.all((ratios >= 0.45) & (ratios <= 0.6))
    assert ratios[-1] < ratios[0]  # approaches the first-order limit 1/2


def test_full_error_model_structure(plant):
    A, B = full_error_model(plant)
    R, L, k = plant.motor.R_a, plant.motor.L_a, plant.motor.k_t
    assert A.shape == (3, 3) and B.shape == (3,)
    assert A[0, 0] == pytest.approx(-R / L) and A[0, 2] == pytest.approx(-k / L)
    np.testing.assert_array_equal(A[1], [0.0, 0.0, 1.0])
    with pytest.raises(DomainError):
        full_error_model(plant, L_a=-1.0)


@pytest.mark.parametrize("alpha,theta", [(2.0, math.pi / 6), (10.0, math.pi / 4)])
def test_decay_rate_meets_region(plant, alpha, theta):
    m = build_error_model(plant)
    res = synthesize(m, RegionSpec(alpha, 100.0, theta))
    for e0 in ([1.0, 0.0], [0.0, 1.0], [0.3, -2.0]):
        assert decay_envelope_slope(m.closed_loop(res.K), e0) <= -0.95 * alpha


def test_decay_slope_of_diagonal_system():
    A = np.diag([-3.0, -7.0])
    assert decay_envelope_slope(A, [1.0, 1.0]) == pytest.approx(-3.0, rel=2e-2)
    assert decay_envelope_slope(np.eye(2), [1.0, 0.0]) == math.inf


def test_plan_roundtrip_feeds_closed_loop(plant, drive, smoke_plan, gains, nominal, tmp_path):
    plan, _ = smoke_plan
    plan.to_csv(tmp_path / "plan.csv")
    back = PlannedTrajectory.from_csv(tmp_path / "plan.csv")
    rep = run_closed_loop(plant, drive, back, ControllerConfig(K=gains))
    np.testing.assert_array_equal(rep.log["omega_m"], nominal.log["omega_m"])
