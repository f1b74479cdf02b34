import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from boomctl.errors import ConfigError, InfeasibleError
from boomctl.lmisyn import (
    ErrorModel, LmiBlock, RegionSpec, build_error_model, hinf_norm, hinf_norm_grid,
    polytope_vertices, region_violation, sdp_solve, synthesize, synthesize_robust,
    tradeoff_curve,
)
from boomctl.plant import total_damping


@pytest.fixture(scope="module")
def model(plant):
    return build_error_model(plant)


def test_error_model_entries(plant):
    m = build_error_model(plant)
    R, k, J = plant.motor.R_a, plant.motor.k_t, plant.J_tot
    b = float(total_damping(plant.mech.theta_e / plant.trans.N_g, plant))
    np.testing.assert_array_equal(m.A[0], [0.0, 1.0])
    assert m.A[1, 0] == 0.0 and m.B[0] == 0.0
    assert m.a22 == pytest.approx(-(k * k + b * R) / (R * J), rel=1e-14)
    assert m.b2 == pytest.approx(-k / (R * J), rel=1e-14)
    np.testing.assert_allclose(m.E, [0.0, 1.0 / J], rtol=1e-14)
    np.testing.assert_array_equal(m.C, [0.0, 1.0])


def test_pinned_error_model():
    m = ErrorModel.from_physical(R_a=2.0, k_t=0.05, J_tot=1e-4, b_tot=5e-4)
    # a22 = -(0.0025 + 0.001) / 2e-4, b2 = -0.05 / 2e-4
    assert m.a22 == pytest.approx(-17.5, rel=1e-14)
    assert m.b2 == pytest.approx(-250.0, rel=1e-14)


def test_zero_torque_constant_is_uncontrollable():
    with pytest.raises(ConfigError):
        ErrorModel.from_physical(R_a=1.0, k_t=0.0, J_tot=1e-4, b_tot=1e-4)


@settings(max_examples=50, deadline=None)
@given(R=st.floats(0.1, 10), k=st.floats(1e-3, 1.0), J=st.floats(1e-6, 1e-2), b=st.floats(0, 1e-2))
def test_physical_models_controllable(R, k, J, b):
    m = ErrorModel.from_physical(R, k, J, b)
    assert np.linalg.matrix_rank(np.column_stack([m.B, m.A @ m.B])) == 2


def test_region_validation():
    with pytest.raises(ConfigError):
        RegionSpec(alpha=5.0, rho=5.0)
    with pytest.raises(ConfigError):
        RegionSpec(theta=2.0)
    assert RegionSpec.from_dict(RegionSpec(1.0).to_dict()) == RegionSpec(1.0)


# ---------------------------------------------------------------------------
# SDP kernel


def test_sdp_eigenvalue_condition():
    blk = LmiBlock(np.array([[0.0, 1.0], [1.0, 0.0]]), -np.eye(2)[None])
    res = sdp_solve([1.0], [blk])
    assert res.y[0] == pytest.approx(1.0, abs=1e-6)


def test_sdp_scalar_lyapunov():
    a = -3.0

    def lyap(alpha):
        return [LmiBlock(np.zeros((1, 1)), np.array([[[2 * a + 2 * alpha]]]), strict=True),
                LmiBlock(np.zeros((1, 1)), -np.ones((1, 1, 1)), strict=True)]

    res = sdp_solve([0.0], lyap(1.0))
    assert res.y[0] > 0
    with pytest.raises(InfeasibleError):
        sdp_solve([0.0], lyap(4.0))


def test_sdp_diagonal_lp_matches_highs():
    rng = np.random.default_rng(0)
    n, m = 3, 6
    A = rng.standard_normal((m, n))
    b = A @ rng.uniform(-1, 1, n) + rng.uniform(0.2, 1.0, m)
    c = rng.standard_normal(n)
    ref = linprog(c, A_ub=A, b_ub=b, bounds=[(-5, 5)] * n, method="highs")
    # A y - b <= 0 as one diagonal block, plus the box
    F0 = np.diag(np.concatenate([-b, -5 * np.ones(n), -5 * np.ones(n)]))
    F = np.zeros((n, m + 2 * n, m + 2 * n))
    for j in range(n):
        F[j] = np.diag(np.concatenate([A[:, j], np.eye(n)[j], -np.eye(n)[j]]))
    res = sdp_solve(c, [LmiBlock(F0, F)])
    assert res.objective == pytest.approx(ref.fun, abs=1e-6)


def test_sdp_equality_constraints():
    # minimize y0 + y1 with y0 = 2 y1 and y >= 1
    F0 = np.eye(2)
    F = -np.eye(2)[:, None, :] * np.eye(2)[:, :, None]
    res = sdp_solve([1.0, 1.0], [LmiBlock(F0, F)], A_eq=[[1.0, -2.0]], b_eq=[0.0])
    np.testing.assert_allclose(res.y, [2.0, 1.0], atol=1e-6)


def test_lmi_block_shapes_checked():
    with pytest.raises(ConfigError):
        LmiBlock(np.zeros((2, 2)), np.zeros((1, 3, 3)))
    with pytest.raises(ConfigError):
        LmiBlock(np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros((1, 2, 2)))


# ---------------------------------------------------------------------------
# H-infinity oracles


def test_hinf_first_order():
    A = np.array([[-2.0, 0.0], [0.0, -5.0]])
    assert hinf_norm(A, [1.0, 0.0], [1.0, 0.0]) == pytest.approx(0.5, rel=1e-9)


def test_hinf_resonant_peak():
    z, w = 0.05, 3.0
    A = np.array([[0.0, 1.0], [-w * w, -2 * z * w]])
    exact = 1.0 / (2 * z * math.sqrt(1 - z * z) * w * w)
    assert hinf_norm(A, [0.0, 1.0], [1.0, 0.0]) == pytest.approx(exact, rel=1e-8)
    assert hinf_norm_grid(A, [0.0, 1.0], [1.0, 0.0], n=20000) == pytest.approx(exact, rel=1e-4)


def test_hinf_unstable_is_infinite():
    assert hinf_norm(np.eye(2), [1.0, 0.0], [1.0, 0.0]) == math.inf


# ---------------------------------------------------------------------------
# synthesis


def test_no_disturbance_channel_gives_zero_gain(model):
    m0 = ErrorModel(model.A, model.B, [0.0, 0.0])
    res = synthesize(m0, RegionSpec(2.0, 50.0, math.pi / 6))
    assert res.feasible and res.gamma < 1e-6


def test_decay_only_region(model):
    res = synthesize(model, RegionSpec(3.0))
    assert np.all(res.eigenvalues.real < -3.0)


def test_pinned_design_bounds_true_gain(model):
    region = RegionSpec(2.0, 50.0, math.pi / 6)
    res = synthesize(model, region)
    true = hinf_norm(model.closed_loop(res.K), model.E, model.C)
    assert true <= res.gamma * 1.01
    assert region_violation(res.eigenvalues, region, 1e-6 * region.rho) <= 0
    W = 0.5 * (res.W + res.W.T)
    assert np.linalg.eigvalsh(W)[0] > 0
    np.testing.assert_allclose(res.K, res.X @ np.linalg.inv(res.W), rtol=1e-9)
    assert min(res.margins.values()) >= -1e-8


def test_result_serializes(model):
    d = synthesize(model, RegionSpec(2.0, 50.0, math.pi / 6)).to_dict()
    assert d["status"] == "optimal" and len(d["K"]) == 2


def test_single_vertex_equals_nominal(model):
    region = RegionSpec(2.0, 50.0, math.pi / 6)
    a = synthesize(model, region)
    b = synthesize_robust([model], region, model)
    assert b.gamma == pytest.approx(a.gamma, rel=1e-5)


def test_polytope_vertices_hurwitz(model):
    region = RegionSpec(5.0, 100.0, math.pi / 6)
    verts = polytope_vertices(model, 0.2)
    res = synthesize_robust(verts, region, model)
    assert len(res.vertex_eigenvalues) == 4
    for v in verts:
        assert np.max(np.linalg.eigvals(v.closed_loop(res.K)).real) < 0


def test_zero_spread_recovers_nominal(model):
    region = RegionSpec(5.0, 100.0, math.pi / 6)
    a = synthesize(model, region)
    b = synthesize_robust(polytope_vertices(model, 0.0), region, model)
    assert b.gamma == pytest.approx(a.gamma, rel=1e-5)


def test_robust_needs_vertices(model):
    with pytest.raises(ConfigError):
        synthesize_robust([], RegionSpec(), model)


def test_tradeoff_orderings(model):
    alphas = [0.0, 2.0, 5.0, 10.0, 20.0]
    wide = tradeoff_curve(model, math.pi / 6, 100.0, alphas)
    narrow = tradeoff_curve(model, math.pi / 18, 100.0, alphas)
    g_wide = np.array([p.gamma for p in wide])
    g_narrow = np.array([p.gamma for p in narrow])
    assert all(p.status == "optimal" for p in wide + narrow)
    assert g_wide[0] == g_wide.min()
    assert np.all(np.diff(g_wide) >= -1e-6 * g_wide[1:])
    assert np.all(g_narrow >= g_wide * (1 - 1e-6))


def test_tradeoff_parallel_identical(model):
    alphas = [1.0, 4.0]
    a = tradeoff_curve(model, math.pi / 6, 100.0, alphas)
    b = tradeoff_curve(model, math.pi / 6, 100.0, alphas, jobs=2)
    for p, q in zip(a, b):
        assert p.gamma == q.gamma
        np.testing.assert_array_equal(p.K, q.K)


def random_controllable_model(rng):
    while True:
        A = rng.standard_normal((2, 2)) * 10 ** rng.uniform(-1, 1)
        B = rng.standard_normal(2)
        E = rng.standard_normal(2)
        if abs(np.linalg.det(np.column_stack([B, A @ B]))) > 1e-3:
            return ErrorModel(A, B, E, rng.standard_normal(2))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_models_feasible_and_verified(seed):
    rng = np.random.default_rng(seed)
    m = random_controllable_model(rng)
    alpha = rng.uniform(0, 5)
    region = RegionSpec(alpha, alpha + rng.uniform(1, 50), rng.uniform(0.05, math.pi / 2))
    res = synthesize(m, region)  # post-verification raises on failure
    assert res.feasible
    assert region_violation(res.eigenvalues, region, 1e-6 * region.rho) <= 0
    assert res.hinf <= res.gamma * (1 + 1e-6)
