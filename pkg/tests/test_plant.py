import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boomctl.errors import ConfigError, DomainError, GeometryError
from boomctl.integrators import SimGrid, simulate_zoh
from boomctl.plant import (
    PlantParams, default_params, dynamics, dynamics_jacobian, equilibrium_state,
    load_params, load_torque, nonlinear_damping, reaction_torque, save_params,
    solve_precompression, spring_geometry, total_damping,
)


def _theta_for(psi, mech):
    # bar angle at which beta + alpha(theta) equals psi
    return math.pi - mech.phi + mech.beta - psi


def test_spring_length_orthogonal_lever(plant):
    m = plant.mech
    g = spring_geometry(_theta_for(math.pi / 2, m), m)
    assert g.l_s == pytest.approx(math.hypot(m.d, m.l_lever), rel=1e-14)


def test_spring_length_collinear(plant):
    m = plant.mech
    g = spring_geometry(_theta_for(0.0, m), m)
    assert g.l_s == pytest.approx(abs(m.d - m.l_lever), rel=1e-12)


def test_spring_geometry_matches_scalar_formulas(plant):
    m = plant.mech
    theta = 0.3
    alpha = math.pi - m.phi - theta
    l_s = math.sqrt(m.d**2 + m.l_lever**2 - 2 * m.d * m.l_lever * math.cos(m.beta + alpha))
    g = spring_geometry(theta, m)
    assert float(g.alpha) == pytest.approx(alpha, abs=1e-15)
    assert float(g.l_s) == pytest.approx(l_s, rel=1e-14)
    assert float(g.s) == pytest.approx(m.l_s0 - l_s + m.s_0, rel=1e-12)


def test_non_finite_angle_rejected(plant):
    with pytest.raises(DomainError):
        spring_geometry(np.nan, plant.mech)


def test_collinear_geometry_rejected(plant):
    with pytest.raises(GeometryError):
        plant.with_updates(d=plant.mech.l_lever)


def test_reaction_torque_formula(plant):
    m = plant.mech
    for theta in (0.0, 0.4, 1.1, math.pi / 2):
        g = spring_geometry(theta, m)
        psi = m.beta + float(g.alpha)
        expect = (-m.k_s * float(g.s) * m.l_lever * m.d / float(g.l_s) * math.sin(psi)
                  + 0.5 * m.g * m.m_a * m.l_a * math.cos(theta))
        assert float(reaction_torque(theta, m)) == pytest.approx(expect, rel=1e-12, abs=1e-12)


def test_reaction_torque_at_vertical_is_spring_only(plant):
    m = plant.mech
    heavy = plant.with_updates(m_a=2 * m.m_a, s_0=m.s_0).mech
    assert float(reaction_torque(math.pi / 2, heavy)) == pytest.approx(
        float(reaction_torque(math.pi / 2, m)), abs=1e-9)


def test_precompression_zeroes_torque_at_rest(plant):
    assert abs(float(reaction_torque(plant.mech.theta_e, plant.mech))) < 1e-12


def test_precompression_weightless_limit(plant):
    # s_0 is affine in the bar mass, so a vanishing mass leaves s(theta_e) = 0
    light = plant.with_updates(m_a=1e-12).mech
    l_s = float(spring_geometry(light.theta_e, light).l_s)
    assert light.s_0 == pytest.approx(l_s - light.l_s0, abs=1e-12)


def test_doubling_bar_mass_doubles_spring_torque(plant):
    def spring_part(mech):
        bar = 0.5 * mech.g * mech.m_a * mech.l_a * math.cos(mech.theta_e)
        return float(reaction_torque(mech.theta_e, mech)) - bar

    base = plant.mech
    heavy = plant.with_updates(m_a=2 * base.m_a).mech
    assert spring_part(heavy) == pytest.approx(2 * spring_part(base), rel=1e-10)


def test_reaction_torque_single_zero(plant):
    theta = np.linspace(0.0, math.pi / 2, 20001)
    tau = reaction_torque(theta, plant.mech)
    flips = np.flatnonzero(np.diff(np.sign(tau)) != 0)
    assert len(flips) == 1
    assert theta[flips[0]] <= plant.mech.theta_e <= theta[flips[0] + 1]


def test_nonlinear_damping_examples(plant):
    m = plant.mech
    zero = plant.with_updates(b_s=0.0, s_0=m.s_0).mech
    assert np.all(nonlinear_damping(np.linspace(0, 1.5, 7), zero) == 0)
    b = float(nonlinear_damping(_theta_for(math.pi / 2, m), m))
    assert b == pytest.approx(m.b_s * m.l_lever * m.d / math.hypot(m.d, m.l_lever), rel=1e-14)


def test_load_torque_examples(plant):
    N, eta = plant.trans.N_g, plant.trans.eta
    th_m = 0.7 / N
    assert float(load_torque(th_m, 0.0, plant)) == pytest.approx(
        float(reaction_torque(0.7, plant.mech)) * N / eta, rel=1e-15)
    no_coulomb = plant.with_updates(tau_c=0.0, s_0=plant.mech.s_0)
    assert abs(float(load_torque(plant.mech.theta_e / N, 0.0, no_coulomb))) < 1e-12
    omega = 10 * plant.omega_eps
    hard = float(reaction_torque(0.7, plant.mech)) * N / eta + plant.trans.tau_c
    assert abs(float(load_torque(th_m, omega, plant)) - hard) <= 1e-6 * plant.trans.tau_c * 10


@settings(max_examples=60, deadline=None)
@given(theta=st.floats(0.0, math.pi / 2), omega=st.floats(-500.0, 500.0))
def test_coulomb_term_is_odd(theta, omega):
    p = default_params()
    th_m = theta / p.trans.N_g
    diff = float(load_torque(th_m, omega, p) - load_torque(th_m, -omega, p))
    expect = 2 * p.trans.tau_c * math.tanh(omega / p.omega_eps)
    assert diff == pytest.approx(expect, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(theta=st.floats(0.0, math.pi / 2))
def test_inertia_and_damping_positive(theta):
    p = default_params()
    assert p.J_tot > 0
    assert float(total_damping(theta / p.trans.N_g, p)) > 0


def test_dynamics_at_equilibrium(plant):
    p = plant.with_updates(tau_c=0.0, s_0=plant.mech.s_0)
    x = np.array([0.0, p.mech.theta_e / p.trans.N_g, 0.0])
    np.testing.assert_allclose(dynamics(x, 0.0, p), 0.0, atol=1e-9)


def test_dynamics_from_origin(plant):
    U = 7.0
    xd = dynamics(np.zeros(3), U, plant)
    assert xd[0] == pytest.approx(U / plant.motor.L_a, rel=1e-15)
    assert xd[1] == 0.0
    assert xd[2] == pytest.approx(-float(load_torque(0.0, 0.0, plant)) / plant.J_tot, rel=1e-14)


def test_holding_state_is_stationary(plant):
    x = equilibrium_state(plant, 0.3)
    np.testing.assert_allclose(dynamics(x, plant.motor.R_a * x[0], plant)[1:], 0.0, atol=1e-9)


def _fd_jacobian(x, u, p, rel=1e-6):
    J = np.empty((3, 3))
    for j in range(3):
        h = rel * max(abs(x[j]), 1.0)
        e = np.zeros(3)
        e[j] = h
        J[:, j] = (dynamics(x + e, u, p) - dynamics(x - e, u, p)) / (2 * h)
    return J


def test_jacobian_matches_finite_differences(plant):
    rng = np.random.default_rng(0)
    N = plant.trans.N_g
    worst = 0.0
    for _ in range(100):
        omega = rng.choice([-1, 1]) * rng.uniform(1.0, 250.0)
        x = np.array([rng.uniform(-5, 10), rng.uniform(0, math.pi / 2) / N, omega])
        u = rng.uniform(0, 30)
        A, B = dynamics_jacobian(x, u, plant)
        A_fd = _fd_jacobian(x, u, plant)
        for i in range(3):
            scale = np.abs(A_fd[i]).max()
            worst = max(worst, np.abs(A[i] - A_fd[i]).max() / scale)
        np.testing.assert_array_equal(B, [1 / plant.motor.L_a, 0, 0])
    assert worst <= 1e-6


def test_jacobian_broadcasts(plant):
    x = np.stack([equilibrium_state(plant, t) for t in (0.2, 0.5, 1.0)])
    A, B = dynamics_jacobian(x, np.ones(3), plant)
    assert A.shape == (3, 3, 3) and B.shape == (3, 3)
    np.testing.assert_array_equal(A[1], dynamics_jacobian(x[1], 1.0, plant)[0])


@pytest.mark.parametrize("c", [0.5, 2.0, 3.7])
def test_motor_constant_scaling_symmetry(plant, c):
    # i_a -> i_a / c absorbs the scaling exactly once the inductance scales with R_a
    m = plant.motor
    scaled = plant.with_updates(k_t=c * m.k_t, R_a=c * c * m.R_a, L_a=c * c * m.L_a,
                                s_0=plant.mech.s_0)
    x0 = np.array([0.0, plant.mech.theta_e / plant.trans.N_g, 0.0])
    grid = SimGrid(0.0, 0.5, 1e-4, 1e-2)
    u = 6.0 + 4.0 * np.sin(np.arange(grid.n_ticks) / 7.0)
    a = simulate_zoh(lambda x, v: dynamics(x, v, plant), x0, u, grid)
    b = simulate_zoh(lambda x, v: dynamics(x, v, scaled), x0, c * u, grid)
    np.testing.assert_allclose(b.states[:, 1:], a.states[:, 1:], rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(c * b.states[:, 0], a.states[:, 0], rtol=1e-8, atol=1e-8)


def test_params_roundtrip(tmp_path, plant):
    path = tmp_path / "plant.json"
    save_params(plant, path)
    again = load_params(path)
    assert again == plant
    assert PlantParams.from_dict(plant.to_dict()) == plant


def test_params_validation(plant):
    d = plant.to_dict()
    with pytest.raises(ConfigError):
        PlantParams.from_dict({**d, "R_a": -1.0})
    with pytest.raises(ConfigError):
        PlantParams.from_dict({**d, "eta": 1.5})
    with pytest.raises(ConfigError):
        PlantParams.from_dict({**d, "unknown": 1.0})
    d.pop("k_t")
    with pytest.raises(ConfigError, match="k_t"):
        PlantParams.from_dict(d)


def test_precompression_recomputed_for_new_rest_angle(plant):
    p = plant.with_updates(theta_e=0.6)
    assert abs(float(reaction_torque(0.6, p.mech))) < 1e-12
    assert p.mech.s_0 == pytest.approx(solve_precompression(p.mech, 0.6), rel=1e-15)
