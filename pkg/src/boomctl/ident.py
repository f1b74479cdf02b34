"""
Parameter identification for the gearmotor.

Two first-order ARX experiments recover the motor parameters:

* locked rotor, voltage to current: ``R_a`` and ``L_a``;
* free shaft with negligible inductance, voltage to speed: ``b_mg`` and
  ``J_mg`` given ``k_t`` and ``R_a``.

Both see the output through an acquisition delay ``Delta``. With ``u[k]``
held on ``(t_{k-1}, t_k]`` and ``y[k] = x(t_k - Delta)``, a first-order system
``x' = -a x + c u`` gives exactly

    y[k+1] = Phi y[k] + Gamma0 u[k+1] + Gamma1 u[k].

The remaining friction parameters are calibrated on a grid by matching a
simulated run of the full plant against a logged one.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .drive import DriveParams, duty_dynamics
from .errors import ConfigError, IdentifiabilityError, NonPhysicalFitError
from .integrators import SimGrid, Trajectory, simulate_zoh
from .plant import equilibrium_state


@dataclass(frozen=True)
class AcquisitionParams:
    t_s: float
    delay: float = 0.0
    n: int = 2000

    def __post_init__(self):
        if not self.t_s > 0:
            raise ConfigError(f"t_s must be > 0, got {self.t_s!r}")
        if not 0 <= self.delay < self.t_s:
            raise ConfigError(f"delay must satisfy 0 <= delay < t_s, got {self.delay!r}")
        if self.n < 3:
            raise ConfigError(f"need at least 3 samples, got {self.n}")


@dataclass(frozen=True)
class ArxFit:
    Phi: float
    Gamma0: float
    Gamma1: float
    residual_rms: float = 0.0


# ---------------------------------------------------------------------------
# least squares


def fit_arx(u, y, rcond=1e-10):
    """Least-squares fit of ``y[k+1] = Phi y[k] + Gamma0 u[k+1] + Gamma1 u[k]``.

    Raises
    ------
    IdentifiabilityError
        If the regressor matrix is numerically rank deficient (for example a
        constant input with the output at rest).
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape != y.shape or u.ndim != 1:
        raise ConfigError("u and y must be 1-D arrays of equal length")
    if len(u) < 3:
        raise ConfigError("need at least 3 samples")
    X = np.column_stack([y[:-1], u[1:], u[:-1]])
    target = y[1:]
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= rcond * max(sv[0], np.finfo(float).tiny):
        raise IdentifiabilityError("regressor matrix is rank deficient; input is not exciting enough")
    theta, *_ = np.linalg.lstsq(X, target, rcond=None)
    res = target - X @ theta
    return ArxFit(float(theta[0]), float(theta[1]), float(theta[2]),
                  float(np.sqrt(np.mean(res**2))))


# ---------------------------------------------------------------------------
# closed-form coefficients and their inverses


def first_order_coefficients(rate, gain, acq):
    """``(Phi, Gamma0, Gamma1)`` for ``x' = -rate x + rate gain u`` (DC gain ``gain``)."""
    t_s, D = acq.t_s, acq.delay
    Phi = math.exp(-rate * t_s)
    e_late = math.exp(-rate * (t_s - D))
    return Phi, gain * (1.0 - e_late), gain * (e_late - Phi)


def electrical_coefficients(R_a, L_a, acq):
    """Exact ARX coefficients of the locked-rotor current response."""
    return ArxFit(*first_order_coefficients(R_a / L_a, 1.0 / R_a, acq))


def mechanical_coefficients(b_mg, J_mg, k_t, R_a, acq):
    """Exact ARX coefficients of the voltage-to-speed response (``L_a = 0``)."""
    c = b_mg * R_a + k_t**2
    return ArxFit(*first_order_coefficients(c / (J_mg * R_a), k_t / c, acq))


def _check_physical(fit):
    if not 0 < fit.Phi < 1:
        raise NonPhysicalFitError(f"Phi={fit.Phi:.6g} outside (0, 1)")
    if not fit.Gamma0 + fit.Gamma1 > 0:
        raise NonPhysicalFitError("Gamma0 + Gamma1 must be positive")


def electrical_params(fit, acq):
    """Recover ``(R_a, L_a)`` from a locked-rotor fit."""
    _check_physical(fit)
    R_a = (1.0 - fit.Phi) / (fit.Gamma0 + fit.Gamma1)
    L_a = -R_a * acq.t_s / math.log(fit.Phi)
    return {"R_a": R_a, "L_a": L_a}


def mechanical_params(fit, acq, k_t, R_a):
    """Recover ``(b_mg, J_mg)`` from a voltage-to-speed fit.

    A negative friction estimate is returned as is with a warning.
    """
    _check_physical(fit)
    b_mg = (k_t * (1.0 - fit.Phi) / (fit.Gamma0 + fit.Gamma1) - k_t**2) / R_a
    J_mg = -(b_mg * R_a + k_t**2) * acq.t_s / (R_a * math.log(fit.Phi))
    if b_mg < 0:
        warnings.warn(f"identified b_mg={b_mg:.3g} is negative (non-physical friction)",
                      RuntimeWarning, stacklevel=2)
    return {"b_mg": b_mg, "J_mg": J_mg}


# ---------------------------------------------------------------------------
# synthetic experiments


def prbs(n, rng, low=0.0, high=1.0, min_hold=3):
    """Pseudo-random binary sequence with random hold lengths >= ``min_hold``."""
    out = np.empty(n)
    k = 0
    level = high
    while k < n:
        hold = int(rng.integers(min_hold, 4 * min_hold + 1))
        out[k:k + hold] = level
        level = low if level == high else high
        k += hold
    return out


def simulate_delayed_first_order(rate, gain, u, acq, y0=0.0):
    """Sample ``x(t_k - Delta)`` of ``x' = rate (gain u - x)``.

    ``u[k]`` is held on ``(t_{k-1}, t_k]``; ``y[0] = y0``. Propagation is exact,
    one segment of length ``Delta`` under ``u[k]`` and one of length
    ``t_s - Delta`` under ``u[k+1]``.
    """
    u = np.asarray(u, dtype=float)
    D, rest = acq.delay, acq.t_s - acq.delay
    eD, eR = math.exp(-rate * D), math.exp(-rate * rest)
    y = np.empty_like(u)
    y[0] = y0
    x = y0
    for k in range(len(u) - 1):
        x = gain * u[k] + (x - gain * u[k]) * eD
        x = gain * u[k + 1] + (x - gain * u[k + 1]) * eR
        y[k + 1] = x
    return y


def synthetic_electrical_data(R_a, L_a, acq, rng, amplitude=12.0, noise=0.0):
    """Locked-rotor PRBS experiment; returns ``(u, y)``."""
    u = prbs(acq.n, rng, 0.0, amplitude)
    y = simulate_delayed_first_order(R_a / L_a, 1.0 / R_a, u, acq)
    if noise:
        y = y + noise * rng.standard_normal(y.shape)
    return u, y


def synthetic_mechanical_data(b_mg, J_mg, k_t, R_a, acq, rng, amplitude=12.0, noise=0.0):
    """Free-shaft PRBS experiment on the reduced motor model; returns ``(u, y)``."""
    c = b_mg * R_a + k_t**2
    u = prbs(acq.n, rng, 0.0, amplitude)
    y = simulate_delayed_first_order(c / (J_mg * R_a), k_t / c, u, acq)
    if noise:
        y = y + noise * rng.standard_normal(y.shape)
    return u, y


# ---------------------------------------------------------------------------
# grid calibration


@dataclass
class CalibrationResult:
    params: object
    tau_c: float
    b_s: float
    score: float
    scores: np.ndarray
    tau_c_grid: np.ndarray
    b_s_grid: np.ndarray
    tie: bool
    weighting: str = "rms(i_a)/std(i_a) + rms(omega_m)/std(omega_m)"

    def to_dict(self):
        return {
            "tau_c": self.tau_c,
            "b_s": self.b_s,
            "score": self.score,
            "tie": self.tie,
            "weighting": self.weighting,
            "tau_c_grid": self.tau_c_grid.tolist(),
            "b_s_grid": self.b_s_grid.tolist(),
            "scores": self.scores.tolist(),
        }


def _log_period(log):
    dt = np.diff(log.times)
    if len(dt) == 0 or not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise ConfigError("log must be uniformly sampled")
    return float(dt[0])


def replay_duty_log(p, drv, log, substeps=10):
    """Simulate the plant under the logged duty sequence.

    Returns the simulated states at the log's sample times.
    """
    T = _log_period(log)
    grid = SimGrid(log.times[0], log.times[-1], T / substeps, T)
    duty = np.clip(log.inputs, 0.0, 1.0)
    traj = simulate_zoh(lambda x, d: duty_dynamics(x, d, p, drv), log.states[0], duty, grid)
    return traj.states[::substeps][: len(log)]


def calibration_score(sim, log):
    """Sum of per-channel RMS errors normalized by the logged std."""
    score = 0.0
    for j in (0, 2):
        ref = log.states[:, j]
        scale = float(np.std(ref)) or 1.0
        score += float(np.sqrt(np.mean((sim[:, j] - ref) ** 2))) / scale
    return score


def _score_point(args):
    p, drv, log, substeps = args
    return calibration_score(replay_duty_log(p, drv, log, substeps), log)


def calibrate(params0, log, tau_c_grid, b_s_grid, drv=None, substeps=10, jobs=1):
    """Grid search over Coulomb friction and spring damping.

    Parameters
    ----------
    params0 : PlantParams
        Nominal parameters; every other field is kept.
    log : Trajectory
        Uniformly sampled log whose ``inputs`` are duty cycles.
    tau_c_grid, b_s_grid : array_like
        Candidate values; the grid is scanned in row-major order
        (``tau_c`` outer) and the first minimizer wins.
    jobs : int
        Worker processes. The result does not depend on it.
    """
    drv = DriveParams() if drv is None else drv
    tau_c_grid = np.atleast_1d(np.asarray(tau_c_grid, dtype=float))
    b_s_grid = np.atleast_1d(np.asarray(b_s_grid, dtype=float))
    if tau_c_grid.size == 0 or b_s_grid.size == 0:
        raise ConfigError("calibration grid is empty")
    points = list(itertools.product(tau_c_grid, b_s_grid))
    tasks = [(params0.with_updates(tau_c=float(tc), b_s=float(bs), s_0=params0.mech.s_0),
              drv, log, substeps) for tc, bs in points]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as ex:
            flat = list(ex.map(_score_point, tasks))
    else:
        flat = [_score_point(t) for t in tasks]
    scores = np.array(flat).reshape(tau_c_grid.size, b_s_grid.size)
    best = int(np.argmin(flat))
    tie = int(np.sum(np.array(flat) == flat[best])) > 1
    tc, bs = points[best]
    return CalibrationResult(tasks[best][0], float(tc), float(bs), float(flat[best]),
                             scores, tau_c_grid, b_s_grid, tie)


def staircase_log(p, drv=None, levels=(0.2, 0.35, 0.5, 0.65), hold=0.5, T_ctrl=0.01,
                  substeps=10, x0=None):
    """Duty staircase run of the plant, sampled at the controller rate.

    The bar starts at its rest angle with the holding current.
    """
    drv = DriveParams() if drv is None else drv
    per_level = int(round(hold / T_ctrl))
    duty = np.repeat(np.asarray(levels, dtype=float), per_level)
    x0 = equilibrium_state(p) if x0 is None else np.asarray(x0, dtype=float)
    tf = len(duty) * T_ctrl
    grid = SimGrid(0.0, tf, T_ctrl / substeps, T_ctrl)
    traj = simulate_zoh(lambda x, d: duty_dynamics(x, d, p, drv), x0, duty, grid)
    states = traj.states[::substeps]
    inputs = np.append(duty, duty[-1])
    return Trajectory(traj.times[::substeps], states, inputs)
