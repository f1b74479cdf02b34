"""
Closed-loop simulation of the opening manoeuvre and tracking metrics.

At every controller tick the planned feedforward voltage is corrected by a
PD law on the tracking error ``e = x* - x``, clamped to the admissible band
at the measured back-EMF, and inverted to a duty cycle that is held until
the next tick while the full nonlinear plant runs on the averaged drive
model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .drive import DriveParams, clip_bemf, duty_dynamics, duty_extrema, invert
from .errors import ConfigError, DomainError, IntegrationError
from .integrators import Trajectory, rk4_step, write_csv_columns
from .plant import total_damping

RUN_COLUMNS = ("t", "r", "omega_m", "i_a", "u_ff", "u_fb", "u", "delta", "clamped")


@dataclass(frozen=True)
class ControllerConfig:
    """PD gains and realization choices.

    ``theta_error`` selects how the position error is formed: ``"integrate"``
    accumulates ``r - omega_m`` by the trapezoid rule at the tick rate,
    ``"encoder"`` subtracts the measured motor angle from the planned one.
    ``feedforward`` is ``"mean"`` (interval average of the planned voltage
    ramp) or ``"node"`` (planned voltage at the tick).
    """

    K: tuple = (0.0, 0.0)
    T_ctrl: float = 0.01
    substeps: int = 10
    clamp: bool = True
    theta_error: str = "integrate"
    feedforward: str = "mean"

    def __post_init__(self):
        object.__setattr__(self, "K", tuple(float(k) for k in np.ravel(self.K)))
        if len(self.K) != 2:
            raise ConfigError("K must hold [k_p, k_d]")
        if not self.T_ctrl > 0:
            raise ConfigError(f"T_ctrl must be > 0, got {self.T_ctrl!r}")
        if self.substeps < 1:
            raise ConfigError("substeps must be >= 1")
        if self.theta_error not in ("integrate", "encoder"):
            raise ConfigError(f"unknown theta_error mode {self.theta_error!r}")
        if self.feedforward not in ("mean", "node"):
            raise ConfigError(f"unknown feedforward mode {self.feedforward!r}")


@dataclass
class RunReport:
    trajectory: Trajectory
    log: dict
    nrmse: float
    peak_speed_error: float
    terminal_theta_error: float
    terminal_speed: float
    saturation_fraction: float

    def to_dict(self):
        return {
            "nrmse": self.nrmse,
            "peak_speed_error": self.peak_speed_error,
            "terminal_theta_error": self.terminal_theta_error,
            "terminal_speed": self.terminal_speed,
            "saturation_fraction": self.saturation_fraction,
        }

    def to_csv(self, path):
        write_csv_columns(path, {k: self.log[k] for k in RUN_COLUMNS})


# ---------------------------------------------------------------------------
# metrics


def nrmse(r, y):
    """``||r - y|| / ||r - mean(r)||`` over the samples where ``r != 0``.

    Raises
    ------
    DomainError
        If ``r`` vanishes everywhere or is constant on its support.
    """
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    if r.shape != y.shape:
        raise ConfigError("r and y must have the same shape")
    keep = r != 0
    if not np.any(keep):
        raise DomainError("NRMSE undefined: reference is identically zero")
    rs, ys = r[keep], y[keep]
    den = np.linalg.norm(rs - rs.mean())
    if den == 0:
        raise DomainError("NRMSE undefined: reference is constant on its support")
    return float(np.linalg.norm(rs - ys) / den)


# ---------------------------------------------------------------------------
# closed-loop run


def _plan_sampler(plan, T_ctrl, n_ticks):
    """Plan quantities at the controller ticks (linear interpolation).

    Past the end of the plan the final state is held with zero speed
    reference.
    """
    t = plan.times[0] + T_ctrl * np.arange(n_ticks + 1)
    r = np.where(t > plan.times[-1] + 1e-12, 0.0, np.interp(t, plan.times, plan.r))
    th = np.interp(t, plan.times, plan.states[:, 1])
    u_node = np.interp(t, plan.times, plan.u_ff)
    # interval mean of the piecewise-linear voltage over [t, t + T_ctrl]
    t_mid = np.minimum(t + 0.5 * T_ctrl, plan.times[-1])
    u_mean = np.interp(t_mid, plan.times, plan.u_ff)
    return t, r, th, u_node, u_mean


def run_closed_loop(p, drv, plan, ctrl, w=None, perturbation=None, settle=0.0):
    """Simulate the feedforward-plus-PD loop on the nonlinear plant.

    Parameters
    ----------
    p : PlantParams
        Plant being controlled.
    drv : DriveParams
    plan : PlannedTrajectory
        Reference and feedforward; its node spacing must be a multiple of
        ``ctrl.T_ctrl``.
    ctrl : ControllerConfig
    w : callable, optional
        Disturbance torque ``w(t)`` on the motor shaft.
    perturbation : dict, optional
        Flat plant-field overrides applied to ``p`` before the run (the
        controller is unaware of them).
    settle : float
        Extra time [s] after the plan ends during which the final position
        is held (zero speed reference, final planned voltage as feedforward).

    Returns
    -------
    RunReport
    """
    drv = DriveParams() if drv is None else drv
    if perturbation:
        p = p.with_updates(s_0=p.mech.s_0, **perturbation)
    ratio = plan.T_s / ctrl.T_ctrl
    if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
        raise ConfigError(f"plan step {plan.T_s} is not a multiple of T_ctrl={ctrl.T_ctrl}")
    if settle < 0:
        raise ConfigError("settle must be >= 0")
    n = int(round((plan.times[-1] - plan.times[0] + settle) / ctrl.T_ctrl))
    t, r, th_ref, u_node, u_mean = _plan_sampler(plan, ctrl.T_ctrl, n)
    u_ff = u_mean if ctrl.feedforward == "mean" else u_node
    k_p, k_d = ctrl.K
    h = ctrl.T_ctrl / ctrl.substeps
    k_t = p.motor.k_t

    X = np.empty((n + 1, 3))
    cols = {k: np.empty(n + 1) for k in ("u_fb", "u", "delta")}
    clamped = np.zeros(n + 1, dtype=bool)
    e_w = np.empty(n + 1)
    x = np.array(plan.states[0, :3], dtype=float)
    e_th = 0.0
    for k in range(n + 1):
        X[k] = x
        e_w[k] = r[k] - x[2]
        if ctrl.theta_error == "encoder":
            e_th = th_ref[k] - x[1]
        elif k > 0:
            e_th += 0.5 * ctrl.T_ctrl * (e_w[k - 1] + e_w[k])
        u_fb = k_p * e_th + k_d * e_w[k]
        u = u_ff[k] + u_fb
        e_a = float(clip_bemf(k_t * x[2], drv))
        if ctrl.clamp:
            ext = duty_extrema(e_a, drv)
            uc = min(max(u, float(ext.u_min)), float(ext.u_max))
            clamped[k] = uc != u
        else:
            uc = u
        inv = invert(uc, e_a, drv)
        clamped[k] |= bool(inv.saturated)
        cols["u_fb"][k], cols["u"][k], cols["delta"][k] = u_fb, u, inv.delta
        if k == n:
            break
        delta = inv.delta
        for j in range(ctrl.substeps):
            ts = t[k] + j * h
            wk = 0.0 if w is None else float(w(ts))
            try:
                x = rk4_step(lambda xx, d: duty_dynamics(xx, d, p, drv, wk), x, delta, h)
            except (IntegrationError, DomainError):
                # a diverging state leaves the plant's domain inside an RK4 stage
                raise IntegrationError("closed-loop simulation blew up", time=ts) from None

    log = {"t": t, "r": r, "omega_m": X[:, 2], "i_a": X[:, 0], "u_ff": u_ff,
           "u_fb": cols["u_fb"], "u": cols["u"], "delta": cols["delta"],
           "clamped": clamped}
    N_g = p.trans.N_g
    thetaf = N_g * plan.states[-1, 1]
    return RunReport(
        trajectory=Trajectory(t, X, cols["delta"]),
        log=log,
        nrmse=nrmse(r, X[:, 2]),
        peak_speed_error=float(np.abs(e_w).max()),
        terminal_theta_error=float(N_g * X[-1, 1] - thetaf),
        terminal_speed=float(X[-1, 2]),
        saturation_fraction=float(clamped[:-1].mean()) if n else 0.0,
    )


# ---------------------------------------------------------------------------
# model checks


def realize_vertex(p, f_a22, f_b2, theta_lin=None):
    """Plant whose error model at ``theta_lin`` has ``a22`` and ``b2`` scaled.

    ``k_t`` is scaled by ``f_a22/f_b2``, the total inertia by
    ``f_a22/f_b2**2`` (through ``J_mg``) and the total damping at
    ``theta_lin`` by ``(f_a22/f_b2)**2`` (through ``b_mg``).
    """
    theta_lin = p.mech.theta_e if theta_lin is None else theta_lin
    th_m = theta_lin / p.trans.N_g
    J, b = p.J_tot, float(total_damping(th_m, p))
    J_mg = p.trans.J_mg + J * (f_a22 / f_b2**2 - 1.0)
    b_mg = p.trans.b_mg + b * ((f_a22 / f_b2) ** 2 - 1.0)
    if J_mg <= 0:
        raise DomainError(f"vertex ({f_a22}, {f_b2}) needs a negative motor inertia")
    return p.with_updates(k_t=p.motor.k_t * f_a22 / f_b2, J_mg=J_mg, b_mg=b_mg, s_0=p.mech.s_0)


def full_error_model(p, theta_lin=None, L_a=None):
    """Linear tracking-error model ``[e_i, e_theta, e_omega]`` driven by ``u_fb``.

    ``L_a`` overrides the plant inductance. With ``L_a = 0`` the current is
    eliminated algebraically and the 2-state model ``[e_theta, e_omega]`` is
    returned.
    """
    theta_lin = p.mech.theta_e if theta_lin is None else theta_lin
    R, k = p.motor.R_a, p.motor.k_t
    L = p.motor.L_a if L_a is None else float(L_a)
    if L < 0:
        raise DomainError(f"L_a must be >= 0, got {L!r}")
    J = p.J_tot
    b = float(total_damping(theta_lin / p.trans.N_g, p))
    if L == 0:
        A = np.array([[0.0, 1.0], [0.0, -(k * k + b * R) / (R * J)]])
        B = np.array([0.0, -k / (R * J)])
        return A, B
    A = np.array([[-R / L, 0.0, -k / L], [0.0, 0.0, 1.0], [k / J, 0.0, -b / J]])
    B = np.array([-1.0 / L, 0.0, 0.0])
    return A, B


def step_response(A, B, t):
    """Zero-state response to a unit step, exact via the augmented exponential."""
    n = len(B)
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = B
    out = np.empty((len(t), n))
    for j, tj in enumerate(t):
        out[j] = expm(M * tj)[:n, n]
    return out


def reduce_error_model_check(p, horizon=0.1, n=4001, theta_lin=None, L_a=None):
    """Compare the speed-error step responses of the 3-state and reduced models.

    Returns
    -------
    dict
        ``max_deviation`` of ``e_omega``, and the DC gains from ``u_fb`` to
        ``e_omega`` of both models.
    """
    from .lmisyn import build_error_model

    t = np.linspace(0.0, horizon, n)
    red = build_error_model(p, theta_lin)
    y_red = step_response(red.A, red.B, t)[:, 1]
    A, B = full_error_model(p, theta_lin, L_a)
    y_full = step_response(A, B, t)[:, -1]
    # steady-state speed error: the rows without the pure integrator
    keep = [0, 2] if len(B) == 3 else [1]
    dc_full = float(-np.linalg.solve(A[np.ix_(keep, keep)], B[keep])[-1])
    dc_red = float(-red.B[1] / red.A[1, 1])
    return {"max_deviation": float(np.abs(y_full - y_red).max()),
            "dc_gain_full": dc_full, "dc_gain_reduced": dc_red}


def decay_envelope_slope(A_cl, e0, horizon=None, floor=1e-10, n=4000):
    """Slope of a least-squares line through the log upper envelope of ``||e(t)||``.

    The envelope at ``t`` is ``max_{s >= t} ||e(s)||``; the fit stops where it
    falls below ``floor`` times its initial value.
    """
    A_cl = np.asarray(A_cl, dtype=float)
    lam = np.linalg.eigvals(A_cl)
    if np.max(lam.real) >= 0:
        return math.inf
    if horizon is None:
        horizon = -math.log(floor) / float(np.min(-lam.real)) * 1.5
    t = np.linspace(0.0, horizon, n)
    Phi = expm(A_cl * (t[1] - t[0]))
    e = np.empty((n, len(e0)))
    e[0] = e0
    for j in range(1, n):
        e[j] = Phi @ e[j - 1]
    nrm = np.linalg.norm(e, axis=1)
    env = np.maximum.accumulate(nrm[::-1])[::-1]
    keep = env >= floor * env[0]
    slope = np.polyfit(t[keep], np.log(env[keep]), 1)[0]
    return float(slope)
