"""
Offline optimal opening manoeuvre by direct multiple shooting.

The plant state is augmented with the terminal voltage ``u`` and driven by
its rate ``v = u'`` so that the planned feedforward is continuous. On each of
``N`` shooting intervals ``v`` and the current-floor slack ``eps`` are
constant; the state is propagated by RK4 with a configurable number of
sub-steps. The resulting NLP is solved by SQP: the Hessian is the exact
Gauss-Newton Hessian of the least-squares cost plus a convexified
curvature term of the dynamics constraints, the QP subproblems run in
elastic mode, and an Armijo line search on the l1 merit function (with a
second-order correction) globalizes the iteration.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .drive import DriveParams, admissible_band
from .errors import ConfigError, ConvergenceError, InfeasibleError
from .integrators import SimGrid, read_csv_columns, simulate_zoh, write_csv_columns
from .plant import dynamics, dynamics_jacobian
from .qp import QpSettings, solve_qp

PLAN_COLUMNS = ("t", "i_a", "theta_m", "omega_m", "u_ff", "v", "eps", "r")


@dataclass(frozen=True)
class OcpConfig:
    t0: float = 0.0
    tf: float = 5.0
    N: int = 500
    T_s: float = 0.01
    theta0: float = 0.0
    thetaf: float = math.pi / 2
    W: tuple = (1e-1, 1e2, 1e-3, 1e7)
    W_f: tuple = (1e-1, 1e2)
    i_aM: float = 10.0
    margin: float = 0.05
    substeps: int = 10
    max_iter: int = 200
    kkt_tol: float = 1e-6
    qp_tol: float = 1e-8
    defect_tol: float = 1e-9
    elastic_weight: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "W", tuple(float(w) for w in self.W))
        object.__setattr__(self, "W_f", tuple(float(w) for w in self.W_f))
        if self.N < 1 or self.substeps < 1:
            raise ConfigError("N and substeps must be >= 1")
        if not self.T_s > 0:
            raise ConfigError("T_s must be > 0")
        if abs(self.N * self.T_s - (self.tf - self.t0)) > 1e-9 * max(1.0, self.tf - self.t0):
            raise ConfigError(f"N*T_s={self.N * self.T_s} must equal tf-t0={self.tf - self.t0}")
        if len(self.W) != 4 or len(self.W_f) != 2:
            raise ConfigError("W needs 4 and W_f needs 2 diagonal entries")
        if min(self.W + self.W_f) <= 0:
            raise ConfigError("weights must be positive")
        if not 0 <= self.margin < 0.5:
            raise ConfigError(f"margin must lie in [0, 0.5), got {self.margin!r}")
        if not self.i_aM > 0:
            raise ConfigError("i_aM must be > 0")

    @property
    def h(self):
        return self.T_s / self.substeps

    def to_dict(self):
        d = asdict(self)
        d["W"] = list(self.W)
        d["W_f"] = list(self.W_f)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown OCP settings: {sorted(unknown)}")
        for k in ("N", "substeps", "max_iter"):
            if k in d:
                d[k] = int(d[k])
        return cls(**d)


# ---------------------------------------------------------------------------
# cost and constraints


def ocp_cost(x, v, eps, cfg, N_g):
    """Stage cost ``||h||_W^2`` and terminal cost ``||h_f||_{W_f}^2``.

    ``x`` has rows ``[i_a, theta_m, omega_m(, u)]``; returns
    ``(stage, terminal)`` evaluated row-wise.
    """
    x = np.asarray(x, dtype=float)
    i_a = x[..., 0]
    dth = N_g * x[..., 1] - cfg.thetaf
    W, Wf = cfg.W, cfg.W_f
    stage = W[0] * i_a**2 + W[1] * dth**2 + W[2] * np.asarray(v) ** 2 + W[3] * np.asarray(eps) ** 2
    terminal = Wf[0] * i_a**2 + Wf[1] * dth**2
    return stage, terminal


def _band(omega, k_t, drv, margin):
    """Tightened input band and its derivative with respect to ``omega``."""
    u_min, u_max, du_min, du_max = admissible_band(k_t * np.asarray(omega, dtype=float), drv)
    lo = (1 - margin) * u_min + margin * u_max
    hi = (1 - margin) * u_max + margin * u_min
    dlo = k_t * ((1 - margin) * du_min + margin * du_max)
    dhi = k_t * ((1 - margin) * du_max + margin * du_min)
    return lo, hi, dlo, dhi


def ocp_constraints(x, u, eps, cfg, k_t, drv):
    """The six soft/hard path constraints; feasible iff every row is <= 0.

    Returns an array whose last axis has the six rows.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    eps = np.asarray(eps, dtype=float)
    lo, hi, _, _ = _band(x[..., 2], k_t, drv, cfg.margin)
    i_floor = cfg.margin * cfg.i_aM
    rows = [lo - u, u - hi, i_floor - eps - x[..., 0], x[..., 0] - 0.5 * cfg.i_aM,
            -eps, eps - i_floor]
    return np.stack(np.broadcast_arrays(*rows), axis=-1)


# ---------------------------------------------------------------------------
# shooting


def augmented_field(p):
    """``f(x, v)`` of the 4-state system ``[i_a, theta_m, omega_m, u]``."""

    def f(x, v):
        x = np.asarray(x, dtype=float)
        d3 = dynamics(x[..., :3], x[..., 3], p)
        return np.concatenate([d3, np.broadcast_to(np.asarray(v, float), x.shape[:-1])[..., None]],
                              axis=-1)

    return f


def _aug_jacobian(x, p):
    A3, B3 = dynamics_jacobian(x[..., :3], x[..., 3], p)
    J = np.zeros(x.shape[:-1] + (4, 4))
    J[..., :3, :3] = A3
    J[..., :3, 3] = B3
    return J


def shoot(X, V, p, h, substeps, sensitivities=True):
    """Propagate each node over one interval.

    Parameters
    ----------
    X : ndarray, shape (N, 4)
        Interval start states.
    V : ndarray, shape (N,)
        Held input rates.

    Returns
    -------
    Xn : ndarray, shape (N, 4)
    S : ndarray, shape (N, 4, 5) or None
        Derivatives of ``Xn`` with respect to ``(X, V)``.
    """
    f = augmented_field(p)
    x = np.array(X, dtype=float)
    V = np.asarray(V, dtype=float)
    n = len(x)
    if not sensitivities:
        for _ in range(substeps):
            k1 = f(x, V)
            k2 = f(x + 0.5 * h * k1, V)
            k3 = f(x + 0.5 * h * k2, V)
            k4 = f(x + h * k3, V)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return x, None
    S = np.zeros((n, 4, 5))
    S[:, :, :4] = np.eye(4)
    Ev = np.zeros((4, 5))
    Ev[3, 4] = 1.0
    for _ in range(substeps):
        k1 = f(x, V)
        K1 = _aug_jacobian(x, p) @ S + Ev
        x2 = x + 0.5 * h * k1
        k2 = f(x2, V)
        K2 = _aug_jacobian(x2, p) @ (S + 0.5 * h * K1) + Ev
        x3 = x + 0.5 * h * k2
        k3 = f(x3, V)
        K3 = _aug_jacobian(x3, p) @ (S + 0.5 * h * K2) + Ev
        x4 = x + h * k3
        k4 = f(x4, V)
        K4 = _aug_jacobian(x4, p) @ (S + h * K3) + Ev
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        S = S + (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4)
    if not np.all(np.isfinite(x)):
        raise ConvergenceError("shooting produced non-finite states")
    return x, S


# ---------------------------------------------------------------------------
# NLP assembly


@dataclass
class PlannedTrajectory:
    times: np.ndarray
    states: np.ndarray
    v: np.ndarray
    eps: np.ndarray
    kkt_residual: float
    objective: float
    iterations: int
    converged: bool
    defect_max: float = math.nan
    psi_max: float = math.nan
    history: list = field(default_factory=list)

    @property
    def r(self):
        """Speed reference, the planned ``omega_m`` at the nodes."""
        return self.states[:, 2]

    @property
    def u_ff(self):
        """Feedforward voltage, the planned ``u`` at the nodes."""
        return self.states[:, 3]

    @property
    def T_s(self):
        return float(self.times[1] - self.times[0])

    def held_feedforward(self):
        """Per-interval mean of the planned voltage ramp (for a ZOH actuator)."""
        return self.u_ff[:-1] + 0.5 * self.v * self.T_s

    def report(self):
        return {
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "defect_max": self.defect_max,
            "psi_max": self.psi_max,
        }

    def to_csv(self, path):
        v = np.append(self.v, self.v[-1])
        e = np.append(self.eps, self.eps[-1])
        write_csv_columns(path, {
            "t": self.times, "i_a": self.states[:, 0], "theta_m": self.states[:, 1],
            "omega_m": self.states[:, 2], "u_ff": self.states[:, 3], "v": v, "eps": e,
            "r": self.states[:, 2],
        })

    @classmethod
    def from_csv(cls, path):
        d = read_csv_columns(path)
        missing = [c for c in PLAN_COLUMNS if c not in d]
        if missing:
            raise ConfigError(f"{path}: missing plan columns {missing}")
        states = np.column_stack([d["i_a"], d["theta_m"], d["omega_m"], d["u_ff"]])
        return cls(d["t"], states, d["v"][:-1], d["eps"][:-1], math.nan, math.nan, 0, True)


class _Layout(NamedTuple):
    N: int
    nx: int
    iv: int
    ie: int
    n: int


def _layout(N):
    nx = 4 * (N + 1)
    return _Layout(N, nx, nx, nx + N, nx + 2 * N)


class _Problem:
    """Scaled NLP data: decision vector ``w = [X (N+1)x4, V (N), eps (N)]``."""

    def __init__(self, p, drv, cfg, x0):
        self.p, self.drv, self.cfg = p, drv, cfg
        self.L = _layout(cfg.N)
        N_g = p.trans.N_g
        th_span = max(abs(cfg.thetaf), abs(cfg.theta0), 1e-3) / N_g
        omega_s = drv.peak / p.motor.k_t
        self.xs = np.array([cfg.i_aM, th_span, omega_s, drv.peak])
        self.vs = drv.peak
        self.es = max(cfg.margin * cfg.i_aM, 1e-3 * cfg.i_aM)
        self.x0 = np.asarray(x0, dtype=float)
        self.scale = np.concatenate([np.tile(self.xs, cfg.N + 1), np.full(cfg.N, self.vs),
                                     np.full(cfg.N, self.es)])
        self._cost_matrices()
        self._memo = None

    # -- packing -----------------------------------------------------------

    def unpack(self, w):
        L = self.L
        z = w * self.scale
        return z[:L.nx].reshape(L.N + 1, 4), z[L.iv:L.ie], z[L.ie:]

    def pack(self, X, V, E):
        return np.concatenate([np.ravel(X), V, E]) / self.scale

    # -- cost --------------------------------------------------------------

    def _cost_matrices(self):
        # J(w) = || R w - r0 ||^2 with R diagonal in the scaled variables
        cfg, L = self.cfg, self.L
        Ts, W, Wf = cfg.T_s, cfg.W, cfg.W_f
        N_g = self.p.trans.N_g
        rdiag = np.zeros(L.n)
        r0 = np.zeros(L.n)
        for k in range(L.N + 1):
            wi, wt = (Ts * W[0], Ts * W[1]) if k < L.N else (Wf[0], Wf[1])
            rdiag[4 * k] = math.sqrt(wi) * self.xs[0]
            rdiag[4 * k + 1] = math.sqrt(wt) * N_g * self.xs[1]
            r0[4 * k + 1] = math.sqrt(wt) * cfg.thetaf
        rdiag[L.iv:L.ie] = math.sqrt(Ts * W[2]) * self.vs
        rdiag[L.ie:] = math.sqrt(Ts * W[3]) * self.es
        self.rdiag, self.r0 = rdiag, r0
        self.P = sp.diags(2.0 * rdiag**2, format="csc")

    def objective(self, w):
        res = self.rdiag * w - self.r0
        return float(res @ res)

    def gradient(self, w):
        return 2.0 * self.rdiag * (self.rdiag * w - self.r0)

    # -- constraints -------------------------------------------------------

    def equalities(self, w, jac=True):
        """Scaled initial-state and continuity residuals (and Jacobian)."""
        key = (w.tobytes(), jac)
        if self._memo is not None and self._memo[0] == key:
            return self._memo[1]
        out = self._equalities(w, jac)
        self._memo = (key, out)
        return out

    def _equalities(self, w, jac):
        L, cfg = self.L, self.cfg
        X, V, _ = self.unpack(w)
        Xn, S = shoot(X[:-1], V, self.p, cfg.h, cfg.substeps, sensitivities=jac)
        c0 = (X[0, :3] - self.x0[:3]) / self.xs[:3]
        cd = ((Xn - X[1:]) / self.xs).ravel()
        c = np.concatenate([c0, cd])
        if not jac:
            return c, None
        rows, cols, vals = [0, 1, 2], [0, 1, 2], [1.0, 1.0, 1.0]
        N = L.N
        k = np.arange(N)
        # d defect_k / d X_k (scaled): diag(1/xs) S_x diag(xs)
        Sx = S[:, :, :4] * (self.xs[None, None, :] / self.xs[None, :, None])
        Sv = S[:, :, 4] * (self.vs / self.xs[None, :])
        ii, jj = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
        r_x = (3 + 4 * k[:, None, None] + ii[None]).ravel()
        c_x = (4 * k[:, None, None] + jj[None]).ravel()
        r_v = (3 + 4 * k[:, None] + np.arange(4)[None]).ravel()
        c_v = (L.iv + k[:, None] + 0 * np.arange(4)[None]).ravel()
        r_n = (3 + 4 * k[:, None] + np.arange(4)[None]).ravel()
        c_n = (4 * (k[:, None] + 1) + np.arange(4)[None]).ravel()
        rows = np.concatenate([rows, r_x, r_v, r_n])
        cols = np.concatenate([cols, c_x, c_v, c_n])
        vals = np.concatenate([vals, Sx.ravel(), Sv.ravel(), -np.ones(4 * N)])
        Jc = sp.csc_matrix((vals, (rows, cols)), shape=(3 + 4 * N, L.n))
        return c, Jc

    def inequalities(self, w, jac=True):
        """Rows 1-4 of the path constraints at every node (units as stated)."""
        L, cfg = self.L, self.cfg
        X, _, E = self.unpack(w)
        En = np.append(E, E[-1])
        k_t = self.p.motor.k_t
        lo, hi, dlo, dhi = _band(X[:, 2], k_t, self.drv, cfg.margin)
        i_floor = cfg.margin * cfg.i_aM
        g = np.stack([lo - X[:, 3], X[:, 3] - hi, i_floor - En - X[:, 0],
                      X[:, 0] - 0.5 * cfg.i_aM], axis=1)
        # scale rows to comparable magnitudes
        gs = np.array([self.xs[3], self.xs[3], cfg.i_aM, cfg.i_aM])
        g = (g / gs).ravel()
        if not jac:
            return g, None
        n_nodes = L.N + 1
        k = np.arange(n_nodes)
        ke = np.minimum(k, L.N - 1)
        r = lambda j: 4 * k + j
        rows = np.concatenate([r(0), r(0), r(1), r(1), r(2), r(2), r(3)])
        cols = np.concatenate([4 * k + 2, 4 * k + 3, 4 * k + 2, 4 * k + 3, 4 * k, L.ie + ke, 4 * k])
        vals = np.concatenate([
            dlo * self.xs[2] / gs[0], -np.full(n_nodes, self.xs[3] / gs[0]),
            -dhi * self.xs[2] / gs[1], np.full(n_nodes, self.xs[3] / gs[1]),
            -np.full(n_nodes, self.xs[0] / gs[2]), -np.full(n_nodes, self.es / gs[2]),
            np.full(n_nodes, self.xs[0] / gs[3]),
        ])
        Jg = sp.csc_matrix((vals, (rows, cols)), shape=(4 * n_nodes, L.n))
        return g, Jg

    def eps_bounds(self, w):
        """Bounds on the scaled step of ``eps``: ``0 <= eps + d <= margin i_aM``."""
        _, _, E = self.unpack(w)
        return -E / self.es, (self.cfg.margin * self.cfg.i_aM - E) / self.es


def _merit(prob, w, nu):
    c, _ = prob.equalities(w, jac=False)
    g, _ = prob.inequalities(w, jac=False)
    _, _, E = prob.unpack(w)
    lb, ub = prob.eps_bounds(w)
    viol = np.abs(c).sum() + np.maximum(g, 0).sum() + np.maximum(lb, 0).sum() + np.maximum(-ub, 0).sum()
    return prob.objective(w) + nu * viol, viol, c, g


def initial_guess(p, drv, cfg, x0):
    """Linear angle ramp, matching speed, zero current, mid-band voltage."""
    N = cfg.N
    N_g = p.trans.N_g
    t = np.linspace(0.0, 1.0, N + 1)
    th = (cfg.theta0 + (cfg.thetaf - cfg.theta0) * t) / N_g
    om = np.gradient(th, cfg.T_s)
    lo, hi, _, _ = _band(om, p.motor.k_t, drv, cfg.margin)
    X = np.column_stack([np.zeros(N + 1), th, om, 0.5 * (lo + hi)])
    X[0, :3] = x0[:3]
    return X, np.zeros(N), np.full(N, cfg.margin * cfg.i_aM)


def _psd_blocks(H):
    """Project a stack of symmetric blocks onto the PSD cone."""
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    lam, Q = np.linalg.eigh(H)
    return (Q * np.maximum(lam, 0.0)[..., None, :]) @ np.swapaxes(Q, -1, -2)


def _curvature(prob, w, y_eq, y_in, fd=1e-5):
    """Convexified Hessian of the constraint terms of the Lagrangian.

    The dynamics part is block diagonal over shooting intervals; each 5x5
    block is a central difference of the multiplier-weighted analytic
    sensitivities. The band rows add a diagonal term in ``omega``. Every
    block is projected onto the PSD cone so the QP stays convex.
    """
    L, cfg = prob.L, prob.cfg
    X, V, _ = prob.unpack(w)
    lam = y_eq[3:].reshape(L.N, 4) / prob.xs
    zs = np.append(prob.xs, prob.vs)

    # all +/- perturbations of the 5 interval inputs in one batched shot
    n = L.N
    dz = fd * zs
    Xb = np.tile(X[:-1], (10, 1))
    Vb = np.tile(V, 10)
    for j in range(5):
        for sgn, blk in ((1.0, 2 * j), (-1.0, 2 * j + 1)):
            sl = slice(blk * n, (blk + 1) * n)
            if j < 4:
                Xb[sl, j] += sgn * dz[j]
            else:
                Vb[sl] += sgn * dz[j]
    _, S = shoot(Xb, Vb, prob.p, cfg.h, cfg.substeps)
    G = (np.einsum("ni,nij->nj", np.tile(lam, (10, 1)), S) * zs).reshape(5, 2, n, 5)
    H = np.moveaxis((G[:, 0] - G[:, 1]) / (2 * fd), 0, -1)
    H = _psd_blocks(H)
    k = np.arange(L.N)
    idx = np.concatenate([4 * k[:, None] + np.arange(4), (L.iv + k)[:, None]], axis=1)
    rows = np.repeat(idx, 5, axis=1).ravel()
    cols = np.tile(idx, (1, 5)).ravel()
    Hd = sp.csc_matrix((H.ravel(), (rows, cols)), shape=(L.n, L.n))
    # band rows: second derivative of the tightened limits in omega
    om = X[:, 2]
    dom = fd * prob.xs[2]
    k_t, m = prob.p.motor.k_t, cfg.margin
    _, _, dlo_p, dhi_p = _band(om + dom, k_t, prob.drv, m)
    _, _, dlo_m, dhi_m = _band(om - dom, k_t, prob.drv, m)
    d2lo = (dlo_p - dlo_m) / (2 * dom)
    d2hi = (dhi_p - dhi_m) / (2 * dom)
    yi = y_in.reshape(L.N + 1, 4)
    hb = (yi[:, 0] * d2lo - yi[:, 1] * d2hi) * prob.xs[2] ** 2 / prob.xs[3]
    hb = np.maximum(hb, 0.0)
    Hb = sp.csc_matrix((hb, (4 * np.arange(L.N + 1) + 2, 4 * np.arange(L.N + 1) + 2)),
                       shape=(L.n, L.n))
    return Hd + Hb


def _kkt_residual(prob, w, y_eq, y_in, y_eps):
    c, Jc = prob.equalities(w)
    g, Jg = prob.inequalities(w)
    grad = prob.gradient(w)
    lag = grad + Jc.T @ y_eq + Jg.T @ y_in
    lag[prob.L.ie:] += y_eps
    stat = np.abs(lag).max() / (1.0 + np.abs(grad).max())
    lb, ub = prob.eps_bounds(w)
    prim = max(np.abs(c).max(), np.maximum(g, 0).max(initial=0.0),
               np.maximum(lb, 0).max(initial=0.0), np.maximum(-ub, 0).max(initial=0.0))
    comp = max(np.abs(y_in * np.minimum(g, 0)).max(initial=0.0),
               np.abs(np.minimum(y_eps, 0) * lb).max(initial=0.0),
               np.abs(np.maximum(y_eps, 0) * ub).max(initial=0.0))
    return max(stat, prim, comp), c, g


def solve_ocp(p, drv=None, cfg=None, x0=None, guess=None, verbose=False):
    """Plan the opening manoeuvre.

    Parameters
    ----------
    p : PlantParams
    drv : DriveParams
    cfg : OcpConfig
    x0 : array_like, optional
        Initial ``[i_a, theta_m, omega_m]``; defaults to rest at ``theta0``
        with zero current.
    guess : tuple, optional
        ``(X, V, E)`` warm start in physical units.

    Returns
    -------
    PlannedTrajectory
        ``converged`` is False if the iteration limit was hit; the best
        (last accepted) iterate is returned in that case.
    """
    drv = DriveParams() if drv is None else drv
    cfg = OcpConfig() if cfg is None else cfg
    x0 = np.array([0.0, cfg.theta0 / p.trans.N_g, 0.0]) if x0 is None else np.asarray(x0, float)
    prob = _Problem(p, drv, cfg, x0)
    X, V, E = initial_guess(p, drv, cfg, x0) if guess is None else guess
    w = prob.pack(X, V, E)
    L = prob.L
    qs = QpSettings(eps_abs=cfg.qp_tol, eps_rel=cfg.qp_tol)
    nu = 1.0
    # fixed weight of the elastic slacks; it bounds the path multipliers
    nu_el = cfg.elastic_weight
    y_eq = y_in = y_eps = None
    history = []
    converged = False
    kkt = math.inf
    it = 0
    t_start = time.perf_counter()
    for it in range(1, cfg.max_iter + 1):
        c, Jc = prob.equalities(w)
        g, Jg = prob.inequalities(w)
        lb_e, ub_e = prob.eps_bounds(w)
        ne, ni = len(c), len(g)
        Ieps = sp.csc_matrix((np.ones(L.N), (np.arange(L.N), L.ie + np.arange(L.N))),
                             shape=(L.N, L.n))
        # elastic mode: l1-penalized slacks keep every linearization feasible
        I_in = sp.identity(ni, format="csc")
        A = sp.bmat([[Jc, None], [Jg, -I_in], [Ieps, None], [None, I_in]], format="csc")
        lower = np.concatenate([-c, np.full(ni, -np.inf), lb_e, np.zeros(ni)])
        upper = np.concatenate([-c, -g, ub_e, np.full(ni, np.inf)])
        grad = prob.gradient(w)
        H = prob.P if y_eq is None else prob.P + _curvature(prob, w, y_eq, y_in)
        P = sp.block_diag([H, sp.csc_matrix((ni, ni))], format="csc")
        q = np.concatenate([grad, np.full(ni, nu_el)])
        y_warm = None if y_eq is None else np.concatenate([y_eq, y_in, y_eps, np.zeros(ni)])
        try:
            qp = solve_qp(P, q, A, lower, upper, qs, y0=y_warm)
        except ConvergenceError as exc:
            if exc.best is None:
                raise
            qp = exc.best
        d = qp.x[:L.n]
        slack = float(qp.x[L.n:].max(initial=0.0))
        y = qp.y[:ne + ni + L.N]
        y_eq, y_in, y_eps = y[:ne], y[ne:ne + ni], y[ne + ni:]
        nu = max(nu, 1.1 * np.abs(y).max(initial=0.0))
        phi0, viol0, _, _ = _merit(prob, w, nu)
        dphi = float(grad @ d) - nu * viol0
        step = 1.0
        soc = False
        while True:
            w_new = w + step * d
            try:
                phi, _, c_t, g_t = _merit(prob, w_new, nu)
            except ConvergenceError:
                phi, c_t = math.inf, None
            if phi <= phi0 + 1e-4 * step * min(dphi, 0.0) or step < 1e-8:
                break
            if step == 1.0 and c_t is not None:
                # second-order correction against the Maratos effect
                lo_c = lower.copy()
                up_c = upper.copy()
                lo_c[:ne] = up_c[:ne] = -(c_t - Jc @ d)
                up_c[ne:ne + ni] = -(g_t - Jg @ d)
                try:
                    d_soc = solve_qp(P, q, A, lo_c, up_c, qs).x[:L.n]
                    w_soc = w + d_soc
                    phi_soc, _, _, _ = _merit(prob, w_soc, nu)
                except (ConvergenceError, InfeasibleError):
                    phi_soc = math.inf
                if phi_soc <= phi0 + 1e-4 * min(dphi, 0.0):
                    w_new, phi, soc = w_soc, phi_soc, True
                    break
            step *= 0.5
        stalled = phi > phi0
        if stalled:
            phi, step = phi0, 0.0
        else:
            w = w_new
        if slack > 1e-9 and step >= 0.5 and nu_el < 1e12:
            # slacks still active on a nearly full step: the weight is too small
            nu_el *= 10.0
        kkt, c_new, g_new = _kkt_residual(prob, w, y_eq, y_in, y_eps)
        X, V, E = prob.unpack(w)
        defect = np.abs(c_new[3:].reshape(-1, 4) * prob.xs).max()
        history.append({"iteration": it, "objective": prob.objective(w),
                        "merit_before": phi0, "merit": phi,
                        "step": step, "soc": soc, "kkt": kkt, "defect": defect, "qp_iter": qp.iterations})
        if verbose:
            print(f"it {it:3d} J={prob.objective(w):.9g} kkt={kkt:.2e} step={step:.3g}"
                  f"{' soc' if soc else ''} defect={defect:.2e} t={time.perf_counter() - t_start:.1f}s")
        if kkt <= cfg.kkt_tol and defect <= cfg.defect_tol:
            converged = True
            break
        if stalled:
            # the line search found no merit decrease; keep the last iterate
            break
    X, V, E = prob.unpack(w)
    times = cfg.t0 + cfg.T_s * np.arange(L.N + 1)
    c, _ = prob.equalities(w, jac=False)
    defect = float(np.abs(c[3:].reshape(-1, 4) * prob.xs).max())
    psi = ocp_constraints(X[:, :3], X[:, 3], np.append(E, E[-1]), cfg, p.motor.k_t, drv)
    return PlannedTrajectory(times, X, V, E, float(kkt), prob.objective(w), it, converged,
                             defect, float(psi.max()), history)


def resimulate(plan, p, substeps):
    """Forward-simulate the planned ``v`` from the first node, independently of
    the shooting code, on the same inner step."""
    f = augmented_field(p)
    grid = SimGrid(plan.times[0], plan.times[-1], plan.T_s / substeps, plan.T_s)
    traj = simulate_zoh(f, plan.states[0], plan.v, grid)
    return traj.states[::substeps]
