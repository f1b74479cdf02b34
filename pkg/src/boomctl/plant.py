"""
Boom-barrier plant: DC motor, spring/damper linkage, gear transmission.

State vector is ``x = [i_a, theta_m, omega_m]`` (armature current, motor
shaft angle, motor shaft speed). The load angle is ``theta = N_g * theta_m``.
All functions broadcast over leading array dimensions so that a batch of
states of shape ``(..., 3)`` can be evaluated in one call.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DomainError, GeometryError

GRAVITY = 9.80665
MIN_SPRING_LENGTH = 1e-6


@dataclass(frozen=True)
class MotorParams:
    R_a: float
    L_a: float
    k_t: float

    def __post_init__(self):
        for name in ("R_a", "L_a", "k_t"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be finite and > 0, got {v!r}")


@dataclass(frozen=True)
class TransmissionParams:
    N_g: float
    eta: float
    J_mg: float
    b_mg: float
    tau_c: float

    def __post_init__(self):
        if not (self.N_g > 0 and math.isfinite(self.N_g)):
            raise ConfigError(f"N_g must be > 0, got {self.N_g!r}")
        if not 0 < self.eta <= 1:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta!r}")
        if not self.J_mg > 0:
            raise ConfigError(f"J_mg must be > 0, got {self.J_mg!r}")
        if not self.b_mg >= 0:
            raise ConfigError(f"b_mg must be >= 0, got {self.b_mg!r}")
        if not self.tau_c >= 0:
            raise ConfigError(f"tau_c must be >= 0, got {self.tau_c!r}")


@dataclass(frozen=True)
class BarrierMechanics:
    """Bar, lever and spring-damper geometry.

    ``s_0`` may be left as ``None``; it is then solved so that the reaction
    torque vanishes at ``theta_e``.
    """

    m_a: float
    l_a: float
    k_s: float
    b_s: float
    l_lever: float
    l_s0: float
    d: float
    beta: float
    phi: float
    s_0: float | None = None
    theta_e: float = math.pi / 4
    g: float = GRAVITY

    def __post_init__(self):
        for name in ("m_a", "l_a", "l_lever", "d", "g"):
            v = getattr(self, name)
            if not v > 0:
                raise ConfigError(f"{name} must be > 0, got {v!r}")
        for name in ("k_s", "b_s", "l_s0"):
            v = getattr(self, name)
            if not v >= 0:
                raise ConfigError(f"{name} must be >= 0, got {v!r}")
        lmin = min_spring_length(self)
        if lmin < MIN_SPRING_LENGTH:
            raise GeometryError(
                f"spring length reaches {lmin:.3g} m on [0, pi/2]; "
                f"need >= {MIN_SPRING_LENGTH:g} m"
            )
        if self.s_0 is None:
            object.__setattr__(self, "s_0", solve_precompression(self, self.theta_e))

    @property
    def J_a(self):
        """Bar inertia about the hinge (uniform rod)."""
        return self.m_a * self.l_a**2 / 3.0


@dataclass(frozen=True)
class PlantParams:
    motor: MotorParams
    trans: TransmissionParams
    mech: BarrierMechanics
    omega_eps: float = 0.1

    def __post_init__(self):
        if not self.omega_eps > 0:
            raise ConfigError(f"omega_eps must be > 0, got {self.omega_eps!r}")

    @property
    def J_tot(self):
        return self.trans.J_mg + self.mech.J_a * self.trans.N_g**2 / self.trans.eta

    def to_dict(self):
        d = {}
        d.update(asdict(self.motor))
        d.update(asdict(self.trans))
        d.update(asdict(self.mech))
        d["omega_eps"] = self.omega_eps
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        try:
            motor = MotorParams(*(float(data.pop(k)) for k in ("R_a", "L_a", "k_t")))
            trans = TransmissionParams(
                *(float(data.pop(k)) for k in ("N_g", "eta", "J_mg", "b_mg", "tau_c"))
            )
            mech_keys = ("m_a", "l_a", "k_s", "b_s", "l_lever", "l_s0", "d", "beta", "phi")
            mech_kw = {k: float(data.pop(k)) for k in mech_keys}
        except KeyError as exc:
            raise ConfigError(f"missing plant parameter {exc.args[0]!r}") from None
        s_0 = data.pop("s_0", None)
        mech_kw["s_0"] = None if s_0 is None else float(s_0)
        mech_kw["theta_e"] = float(data.pop("theta_e", math.pi / 4))
        mech_kw["g"] = float(data.pop("g", GRAVITY))
        omega_eps = float(data.pop("omega_eps", 0.1))
        if data:
            raise ConfigError(f"unknown plant parameters: {sorted(data)}")
        return cls(motor, trans, BarrierMechanics(**mech_kw), omega_eps)

    def with_updates(self, **changes):
        """Return a copy with flat (JSON-named) fields replaced.

        ``s_0`` is re-solved from ``theta_e`` unless it is itself updated.
        """
        d = self.to_dict()
        if "s_0" not in changes:
            d["s_0"] = None
        d.update(changes)
        return PlantParams.from_dict(d)


def default_params():
    """Representative gearmotor/barrier parameter set (SI units)."""
    return PlantParams(
        motor=MotorParams(R_a=1.5, L_a=2e-3, k_t=0.1),
        trans=TransmissionParams(N_g=0.002, eta=0.8, J_mg=5e-5, b_mg=1e-4, tau_c=0.005),
        mech=BarrierMechanics(
            m_a=3.0, l_a=3.0, k_s=1e4, b_s=100.0, l_lever=0.04, l_s0=0.5,
            d=0.47, beta=-0.37, phi=math.pi / 2,
        ),
        omega_eps=0.1,
    )


def load_params(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read plant parameters {path}: {exc}") from None
    return PlantParams.from_dict(json.loads(text))


def save_params(p, path):
    Path(path).write_text(json.dumps(p.to_dict(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# linkage geometry


class SpringGeometry(NamedTuple):
    alpha: np.ndarray
    l_s: np.ndarray
    s: np.ndarray


def _lever_angle_sum(theta, mech):
    # beta + alpha(theta)
    return mech.beta + (math.pi - mech.phi - theta)


def min_spring_length(mech):
    """Exact minimum of ``l_s`` over ``theta in [0, pi/2]``."""
    hi = _lever_angle_sum(0.0, mech)
    lo = _lever_angle_sum(math.pi / 2, mech)
    k = math.ceil(lo / (2 * math.pi))
    cmax = 1.0 if 2 * math.pi * k <= hi else max(math.cos(lo), math.cos(hi))
    return math.sqrt(max(mech.d**2 + mech.l_lever**2 - 2 * mech.d * mech.l_lever * cmax, 0.0))


def _linkage(theta, mech):
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise DomainError("theta must be finite")
    psi = _lever_angle_sum(theta, mech)
    dl = mech.d * mech.l_lever
    l_s = np.sqrt(mech.d**2 + mech.l_lever**2 - 2 * dl * np.cos(psi))
    if np.any(l_s <= 0):
        raise GeometryError("spring length vanishes (collinear lever and anchor)")
    lever = dl * np.sin(psi) / l_s  # moment arm, equals -d l_s / d theta
    dlever = (lever**2 - dl * np.cos(psi)) / l_s
    return psi, l_s, lever, dlever


def spring_geometry(theta, mech):
    """Lever angle, spring length and spring compression at bar angle ``theta``."""
    theta = np.asarray(theta, dtype=float)
    _, l_s, _, _ = _linkage(theta, mech)
    alpha = math.pi - mech.phi - theta
    s = mech.l_s0 - l_s + mech.s_0
    return SpringGeometry(alpha, l_s, s)


def reaction_torque(theta, mech):
    """Torque exerted by spring and bar weight at the hinge [N m]."""
    theta = np.asarray(theta, dtype=float)
    _, l_s, lever, _ = _linkage(theta, mech)
    s = mech.l_s0 - l_s + mech.s_0
    return -mech.k_s * s * lever + 0.5 * mech.g * mech.m_a * mech.l_a * np.cos(theta)


def reaction_torque_derivative(theta, mech):
    """d tau_r / d theta."""
    theta = np.asarray(theta, dtype=float)
    _, l_s, lever, dlever = _linkage(theta, mech)
    s = mech.l_s0 - l_s + mech.s_0
    return (-mech.k_s * (lever * lever + s * dlever)
            - 0.5 * mech.g * mech.m_a * mech.l_a * np.sin(theta))


def solve_precompression(mech, theta_e=None):
    """Spring pre-compression that places the torque equilibrium at ``theta_e``.

    The reaction torque is affine in ``s_0``, so the solution is closed form.
    """
    theta_e = mech.theta_e if theta_e is None else theta_e
    _, l_s, lever, _ = _linkage(theta_e, mech)
    coeff = mech.k_s * float(lever)
    if abs(coeff) < 1e-14:
        raise GeometryError("spring torque has zero moment arm at theta_e")
    bar = 0.5 * mech.g * mech.m_a * mech.l_a * math.cos(theta_e)
    # bar - coeff * (l_s0 - l_s + s_0) = 0
    return bar / coeff - mech.l_s0 + float(l_s)


def nonlinear_damping(theta, mech):
    """Hinge-referred damping of the spring damper [N m s]."""
    _, _, lever, _ = _linkage(theta, mech)
    return mech.b_s * lever


def nonlinear_damping_derivative(theta, mech):
    _, _, _, dlever = _linkage(theta, mech)
    return mech.b_s * dlever


# ---------------------------------------------------------------------------
# motor-side quantities


def smooth_sign(omega, omega_eps):
    return np.tanh(np.asarray(omega, dtype=float) / omega_eps)


def load_torque(theta_m, omega_m, p):
    """Load torque referred to the motor shaft [N m]."""
    N, eta = p.trans.N_g, p.trans.eta
    return (reaction_torque(N * np.asarray(theta_m, dtype=float), p.mech) * N / eta
            + p.trans.tau_c * smooth_sign(omega_m, p.omega_eps))


def total_damping(theta_m, p):
    N, eta = p.trans.N_g, p.trans.eta
    return p.trans.b_mg + nonlinear_damping(N * np.asarray(theta_m, dtype=float), p.mech) * N**2 / eta


def dynamics(x, u_a, p, w=0.0):
    """Time derivative of the augmented plant state.

    Parameters
    ----------
    x : array_like, shape (..., 3)
        ``[i_a, theta_m, omega_m]``.
    u_a : array_like, shape (...)
        Terminal voltage [V].
    p : PlantParams
    w : array_like, optional
        Additive disturbance torque on the motor shaft [N m].

    Returns
    -------
    ndarray, shape (..., 3)
    """
    x = np.asarray(x, dtype=float)
    i_a, th, om = x[..., 0], x[..., 1], x[..., 2]
    m = p.motor
    di = (-m.R_a * i_a - m.k_t * om + u_a) / m.L_a
    dom = (m.k_t * i_a - total_damping(th, p) * om - load_torque(th, om, p) + w) / p.J_tot
    return np.stack(np.broadcast_arrays(di, om, dom), axis=-1)


def dynamics_jacobian(x, u_a, p):
    """Analytic Jacobians ``(df/dx, df/du_a)`` of :func:`dynamics`.

    Returns arrays of shape ``(..., 3, 3)`` and ``(..., 3)``.
    """
    x = np.asarray(x, dtype=float)
    i_a, th, om = x[..., 0], x[..., 1], x[..., 2]
    m, t = p.motor, p.trans
    N, eta = t.N_g, t.eta
    J = p.J_tot
    theta = N * th
    b_tot = total_damping(th, p)
    db_tot = nonlinear_damping_derivative(theta, p.mech) * N**3 / eta
    dtau_dth = reaction_torque_derivative(theta, p.mech) * N**2 / eta
    th_ = np.tanh(om / p.omega_eps)
    dtau_dom = t.tau_c * (1.0 - th_**2) / p.omega_eps

    shape = np.broadcast(i_a, th, om, np.asarray(u_a, dtype=float)).shape
    A = np.zeros(shape + (3, 3))
    A[..., 0, 0] = -m.R_a / m.L_a
    A[..., 0, 2] = -m.k_t / m.L_a
    A[..., 1, 2] = 1.0
    A[..., 2, 0] = m.k_t / J
    A[..., 2, 1] = (-db_tot * om - dtau_dth) / J
    A[..., 2, 2] = (-b_tot - dtau_dom) / J
    B = np.zeros(shape + (3,))
    B[..., 0] = 1.0 / m.L_a
    return A, B


def equilibrium_state(p, theta=None):
    """Rest state at load angle ``theta`` (defaults to ``theta_e``) with the
    holding current that balances the load torque."""
    theta = p.mech.theta_e if theta is None else theta
    th_m = theta / p.trans.N_g
    i_hold = float(load_torque(th_m, 0.0, p)) / p.motor.k_t
    return np.array([i_hold, th_m, 0.0])
