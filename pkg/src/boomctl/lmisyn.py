"""
PD gain synthesis by linear matrix inequalities.

The tracking error ``e = [e_theta, e_omega]`` of the reduced (zero
inductance) motor model obeys ``e' = A e + B u_fb + E w`` with performance
output ``z = C e``. With ``M = A W + B X`` the design problem is

    minimize gamma over W = W^T, X, gamma subject to
        W > 0
        M + M^T + 2 alpha W < 0                            (decay rate)
        [[sin(t)(M+M^T), cos(t)(M-M^T)],
         [cos(t)(M^T-M), sin(t)(M+M^T)]] <= 0              (damping sector)
        [[-rho W, M^T], [M, -rho W]] <= 0                  (disk)
        [[M+M^T, E, W C^T], [E^T, -gamma, 0],
         [C W, 0, -gamma]] < 0                             (bounded real)

and ``K = X W^{-1}``. The SDP is solved by the small primal-dual interior-point
kernel :func:`sdp_solve` after rescaling time, state, input, disturbance and
output so that the data are of order one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import ConfigError, ConvergenceError, InfeasibleError, VerificationError
from .plant import total_damping

# ---------------------------------------------------------------------------
# SDP kernel


@dataclass
class LmiBlock:
    """Affine symmetric constraint ``F0 + sum_j y_j F[j] <= 0`` (``< 0`` if strict)."""

    F0: np.ndarray
    F: np.ndarray
    strict: bool = False
    name: str = ""

    def __post_init__(self):
        self.F0 = np.asarray(self.F0, dtype=float)
        self.F = np.asarray(self.F, dtype=float)
        m = self.F0.shape[0]
        if self.F0.shape != (m, m) or self.F.shape[1:] != (m, m):
            raise ConfigError(f"block {self.name!r}: inconsistent shapes")
        if not (np.allclose(self.F0, self.F0.T) and np.allclose(self.F, self.F.transpose(0, 2, 1))):
            raise ConfigError(f"block {self.name!r}: matrices must be symmetric")

    def value(self, y):
        return self.F0 + np.tensordot(y, self.F, axes=1)

    @classmethod
    def from_affine(cls, fn, n, strict=False, name=""):
        """Sample an affine matrix function of ``y`` at the unit vectors."""
        F0 = np.asarray(fn(np.zeros(n)), dtype=float)
        F = np.stack([np.asarray(fn(e), dtype=float) - F0 for e in np.eye(n)])
        sym = lambda a: 0.5 * (a + np.swapaxes(a, -1, -2))
        return cls(sym(F0), sym(F), strict, name)


class SdpResult(NamedTuple):
    y: np.ndarray
    objective: float
    margins: dict
    iterations: int
    gap: float


def _chol_inv(S):
    L = np.linalg.cholesky(S)
    Li = scipy.linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    return L, Li.T @ Li


def _max_step(L, D):
    """Largest step ``a <= 1`` (damped) keeping ``L L^T + a D`` positive definite."""
    Li = scipy.linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    lam = np.linalg.eigvalsh(Li @ D @ Li.T)[0]
    return 1.0 if lam >= 0 else min(1.0, -0.95 / lam)


def _pd_solve(c, blocks, y, tol, max_iter=100, stop=None):
    """Primal-dual path following (HKM direction, Mehrotra corrector).

    ``y`` must be strictly feasible; every iterate stays so. Returns the
    final ``y``, the iteration count and the duality gap ``sum tr(S_i Z_i)``.
    """
    n = len(y)
    Fs = [b.F for b in blocks]
    Fflat = [F.reshape(n, -1) for F in Fs]
    m_total = sum(b.F0.shape[0] for b in blocks)
    try:
        fac = [_chol_inv(-b.value(y)) for b in blocks]
    except np.linalg.LinAlgError:
        raise ConvergenceError("starting point is not strictly feasible") from None
    # start on the central path as far as a single scalar allows
    g = np.array([sum(np.sum(F[j] * Si) for F, (_, Si) in zip(Fs, fac)) for j in range(n)])
    cn = np.linalg.norm(c)
    mu0 = abs(float(c @ g)) / float(g @ g) if cn > 0 and g @ g > 0 else 1.0
    mu0 = max(mu0, 1e-8 * cn / max(np.linalg.norm(g), 1e-300), 1e-12)
    Z = [mu0 * Si for _, Si in fac]
    gap = mu0 * m_total
    for it in range(1, max_iter + 1):
        S = [-b.value(y) for b in blocks]
        rp = c + np.array([sum(np.sum(F[j] * Zi) for F, Zi in zip(Fs, Z)) for j in range(n)])
        gap = float(sum(np.sum(Si * Zi) for Si, Zi in zip(S, Z)))
        if stop is not None and stop(y, gap):
            break
        if gap <= tol * max(1.0, abs(float(c @ y))) and np.linalg.norm(rp) <= tol * (1.0 + cn):
            break
        mu = gap / m_total
        M = np.zeros((n, n))
        for F, Ff, (_, Si), Zi in zip(Fs, Fflat, fac, Z):
            P = Si @ F @ Zi
            M += Ff @ P.transpose(0, 2, 1).reshape(n, -1).T
        M = 0.5 * (M + M.T)
        d = 1.0 / np.sqrt(np.maximum(np.diag(M), np.finfo(float).tiny))
        try:
            cf = scipy.linalg.cho_factor(M * np.outer(d, d))
        except np.linalg.LinAlgError:
            break

        def direction(target, corr):
            h = np.zeros(n)
            for k, (F, (_, Si), Zi) in enumerate(zip(Fs, fac, Z)):
                R = target * Si - Zi + (corr[k] if corr else 0.0)
                h += np.tensordot(F, R, axes=([1, 2], [0, 1]))
            dy = -d * scipy.linalg.cho_solve(cf, (rp + h) * d)
            dS = [-np.tensordot(dy, F, axes=1) for F in Fs]
            dZ = []
            for k, ((_, Si), Zi, D) in enumerate(zip(fac, Z, dS)):
                T = target * Si - Zi - Si @ D @ Zi + (corr[k] if corr else 0.0)
                dZ.append(0.5 * (T + T.T))
            return dy, dS, dZ

        def steps(dS, dZ):
            ap = min(_max_step(L, D) for (L, _), D in zip(fac, dS))
            ad = min(_max_step(np.linalg.cholesky(Zi), D) for Zi, D in zip(Z, dZ))
            return ap, ad

        try:
            dy, dS, dZ = direction(0.0, None)
            ap, ad = steps(dS, dZ)
            mu_aff = sum(np.sum((Si + ap * a) * (Zi + ad * b))
                         for Si, a, Zi, b in zip(S, dS, Z, dZ)) / m_total
            sigma = min(1.0, max(mu_aff / mu, 0.0) ** 3)
            corr = [-(Si @ a @ b) for (_, Si), a, b in zip(fac, dS, dZ)]
            dy, dS, dZ = direction(sigma * mu, corr)
            ap, ad = steps(dS, dZ)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(dy)):
            break
        # round-off can make the predicted step slightly infeasible
        while True:
            try:
                fac_new = [_chol_inv(-b.value(y + ap * dy)) for b in blocks]
                Z_new = [Zi + ad * D for Zi, D in zip(Z, dZ)]
                for Zi in Z_new:
                    np.linalg.cholesky(Zi)
                break
            except np.linalg.LinAlgError:
                ap *= 0.5
                ad *= 0.5
                if ap < 1e-12:
                    fac_new = None
                    break
        if fac_new is None:
            break
        y = y + ap * dy
        fac, Z = fac_new, Z_new
    else:
        if gap > 1e3 * tol * max(1.0, abs(float(c @ y))):
            raise ConvergenceError(f"interior-point iteration limit reached (gap {gap:.3g})")
    return y, it, gap


def _box_block(n, bound):
    F0 = -bound * np.eye(2 * n)
    F = np.zeros((n, 2 * n, 2 * n))
    for j in range(n):
        F[j, j, j] = 1.0
        F[j, n + j, n + j] = -1.0
    return LmiBlock(F0, F, False, "box")


def sdp_solve(c, blocks, A_eq=None, b_eq=None, tol=1e-8, bound=1e4,
              strict_margin=1e-9, feas_tol=1e-10):
    """Minimize ``c.y`` subject to affine matrix inequalities.

    Parameters
    ----------
    c : array_like, shape (n,)
        Linear objective.
    blocks : list of LmiBlock
        Constraints ``F_i(y) <= 0``. Strict blocks are tightened to
        ``F_i(y) <= -strict_margin I``.
    A_eq, b_eq : array_like, optional
        Linear equalities, eliminated through a null-space basis.
    tol : float
        Barrier duality-gap target, relative to ``max(1, |c.y|)``. If
        round-off stops the path earlier, the gap reached is reported.
    bound : float
        Box ``|y_j| <= bound`` that keeps the problem bounded.

    Returns
    -------
    SdpResult
        ``margins`` holds, per block name, the smallest eigenvalue of
        ``-F_i(y)`` (before tightening).

    Raises
    ------
    InfeasibleError
        If no strictly feasible point exists.
    ConvergenceError
        On numerical failure.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    if A_eq is not None:
        A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float))
        b_eq = np.zeros(A_eq.shape[0]) if b_eq is None else np.asarray(b_eq, dtype=float)
        y0 = np.linalg.lstsq(A_eq, b_eq, rcond=None)[0]
        if np.linalg.norm(A_eq @ y0 - b_eq) > 1e-9 * (1 + np.linalg.norm(b_eq)):
            raise InfeasibleError("equality constraints are inconsistent")
        N = scipy.linalg.null_space(A_eq)
    else:
        y0 = np.zeros(n)
        N = np.eye(n)
    nz = N.shape[1]

    def reduce(b):
        F0 = b.value(y0) + (strict_margin * np.eye(b.F0.shape[0]) if b.strict else 0.0)
        F = np.tensordot(N.T, b.F, axes=1)
        return LmiBlock(F0, F, False, b.name)

    red = [reduce(b) for b in blocks]
    # box on y expressed in z
    box = _box_block(n, bound)
    red.append(LmiBlock(box.value(y0), np.tensordot(N.T, box.F, axes=1), False, "box"))
    cz = N.T @ c

    # phase I: minimize s subject to F_i(z) <= s I, s >= -1
    def lift(b):
        m = b.F0.shape[0]
        F = np.concatenate([b.F, -np.eye(m)[None]], axis=0)
        return LmiBlock(b.F0, F, False, b.name)

    p1 = [lift(b) for b in red]
    lower = np.zeros((nz + 1, 1, 1))
    lower[-1, 0, 0] = -1.0
    p1.append(LmiBlock(-np.ones((1, 1)), lower, False, "s_floor"))
    z = np.zeros(nz)
    s0 = max(np.linalg.eigvalsh(b.F0)[-1] for b in red) + 1.0
    c1 = np.zeros(nz + 1)
    c1[-1] = 1.0
    v, steps1, _ = _pd_solve(c1, p1, np.append(z, max(s0, 0.0)), 1e-8,
                             stop=lambda v, gap: v[-1] < -0.5 or v[-1] + 100.0 * gap < 0.0)
    s_star = v[-1]
    if not s_star < -feas_tol:
        raise InfeasibleError(f"no strictly feasible point (phase-one optimum {s_star:.3g})")
    z = v[:-1]
    z, steps2, gap = _pd_solve(cz, red, z, tol)
    y = y0 + N @ z
    margins = {}
    for b in blocks:
        key = b.name or f"block{len(margins)}"
        margins[key] = float(-np.linalg.eigvalsh(b.value(y))[-1])
    return SdpResult(y, float(c @ y), margins, steps1 + steps2, gap)


# ---------------------------------------------------------------------------
# error model


def _controllable(A, B, rtol=1e-10):
    """Rank test on ``[B, AB]`` after row/column equilibration.

    Row scaling is a change of state coordinates and column scaling does not
    change the rank, so the test is insensitive to units.
    """
    Ctrb = np.column_stack([B, A @ B])
    for _ in range(20):
        cols = np.abs(Ctrb).max(axis=0)
        rows = np.abs(Ctrb).max(axis=1)
        if not (np.all(cols > 0) and np.all(rows > 0)):
            return False
        Ctrb = Ctrb / np.sqrt(rows)[:, None] / np.sqrt(cols)[None, :]
    sv = np.linalg.svd(Ctrb, compute_uv=False)
    return sv[-1] > rtol * sv[0]


@dataclass
class ErrorModel:
    """Linear tracking-error dynamics ``e' = A e + B u + E w``, ``z = C e``."""

    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    C: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float).reshape(2, 2)
        self.B = np.asarray(self.B, dtype=float).reshape(2)
        self.E = np.asarray(self.E, dtype=float).reshape(2)
        self.C = np.asarray(self.C, dtype=float).reshape(2)
        if not all(np.all(np.isfinite(m)) for m in (self.A, self.B, self.E, self.C)):
            raise ConfigError("error model matrices must be finite")
        if not _controllable(self.A, self.B):
            raise ConfigError("(A, B) is not controllable")

    @classmethod
    def from_physical(cls, R_a, k_t, J_tot, b_tot):
        a22 = -(k_t**2 + b_tot * R_a) / (R_a * J_tot)
        b2 = -k_t / (R_a * J_tot)
        return cls(np.array([[0.0, 1.0], [0.0, a22]]), np.array([0.0, b2]),
                   np.array([0.0, 1.0 / J_tot]))

    @property
    def a22(self):
        return float(self.A[1, 1])

    @property
    def b2(self):
        return float(self.B[1])

    def scaled(self, f_a22=1.0, f_b2=1.0):
        """Copy with ``A[1,1]`` and ``B[1]`` multiplied by the given factors."""
        A = self.A.copy()
        B = self.B.copy()
        A[1, 1] *= f_a22
        B[1] *= f_b2
        return ErrorModel(A, B, self.E.copy(), self.C.copy())

    def closed_loop(self, K):
        return self.A + np.outer(self.B, np.asarray(K, dtype=float))

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("A", "B", "E", "C")}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["A"], d["B"], d["E"], d.get("C", [0.0, 1.0]))
        except KeyError as exc:
            raise ConfigError(f"error model is missing {exc.args[0]!r}") from None


def build_error_model(p, theta_lin=None):
    """Reduced error model of the plant linearized at load angle ``theta_lin``.

    ``theta_lin`` defaults to the rest angle ``theta_e``.
    """
    theta_lin = p.mech.theta_e if theta_lin is None else theta_lin
    b_tot = float(total_damping(theta_lin / p.trans.N_g, p))
    return ErrorModel.from_physical(p.motor.R_a, p.motor.k_t, p.J_tot, b_tot)


def polytope_vertices(model, spread=0.2):
    """The four models with ``a22`` and ``b2`` at ``(1 +/- spread)`` times nominal."""
    return [model.scaled(fa, fb) for fa in (1 - spread, 1 + spread)
            for fb in (1 - spread, 1 + spread)]


# ---------------------------------------------------------------------------
# H-infinity oracles


def _transfer_abs(A, E, C, w):
    n = A.shape[0]
    out = np.empty(len(w))
    for i, wi in enumerate(w):
        out[i] = abs(C @ np.linalg.solve(1j * wi * np.eye(n) - A, E))
    return out


def hinf_norm_grid(A, E, C, n=1000):
    """Peak of ``|C (j w I - A)^{-1} E|`` over ``n`` log-spaced frequencies (plus 0)."""
    A = np.asarray(A, dtype=float)
    if np.max(np.linalg.eigvals(A).real) >= 0:
        return math.inf
    lam = np.abs(np.linalg.eigvals(A))
    lo = max(lam.min(), 1e-12) * 1e-3
    hi = max(lam.max(), 1e-12) * 1e3
    w = np.concatenate([[0.0], np.logspace(math.log10(lo), math.log10(hi), n)])
    return float(_transfer_abs(A, np.asarray(E, float), np.asarray(C, float), w).max())


def _has_imaginary_eig(A, E, C, gamma):
    """True if ``|G(j w)| = gamma`` at some frequency.

    Near-imaginary Hamiltonian eigenvalues are confirmed by evaluating the
    transfer function there, which keeps slow real poles of stiff loops from
    being mistaken for crossings.
    """
    H = np.block([[A, np.outer(E, E) / gamma**2], [-np.outer(C, C), -A.T]])
    mu = np.linalg.eigvals(H)
    hn = np.abs(H).max()
    cand = np.abs(mu.real) <= 1e-6 * np.abs(mu) + 1e-14 * hn
    if not cand.any():
        return False
    g = _transfer_abs(A, E, C, np.abs(mu[cand].imag))
    return bool(np.any(g >= gamma * (1.0 - 1e-6)))


def hinf_norm(A, E, C, rtol=1e-10):
    """H-infinity norm by bisection on the Hamiltonian imaginary-axis test.

    Returns an upper end of the final bracket, so the true norm is at most
    the returned value (up to the eigenvalue tolerance).
    """
    A = np.asarray(A, dtype=float)
    E = np.asarray(E, dtype=float)
    C = np.asarray(C, dtype=float)
    if np.max(np.linalg.eigvals(A).real) >= 0:
        return math.inf
    if not np.any(E) or not np.any(C):
        return 0.0
    # a coarse frequency sweep gives a valid lower bound to start from
    lo = hinf_norm_grid(A, E, C, n=50)
    if lo == 0.0:
        return 0.0
    hi = 2.0 * lo
    while _has_imaginary_eig(A, E, C, hi):
        lo, hi = hi, 2.0 * hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if _has_imaginary_eig(A, E, C, mid):
            lo = mid
        else:
            hi = mid
    return hi


# ---------------------------------------------------------------------------
# synthesis


@dataclass(frozen=True)
class RegionSpec:
    alpha: float = 0.0
    rho: float = math.inf
    theta: float = math.pi / 2

    def __post_init__(self):
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ConfigError(f"alpha must be finite and >= 0, got {self.alpha!r}")
        if not self.rho > self.alpha:
            raise ConfigError(f"rho must exceed alpha, got rho={self.rho!r}")
        if not 0 <= self.theta <= math.pi / 2:
            raise ConfigError(f"theta must lie in [0, pi/2], got {self.theta!r}")

    def to_dict(self):
        return {"alpha": self.alpha, "rho": self.rho if math.isfinite(self.rho) else None,
                "theta": self.theta}

    @classmethod
    def from_dict(cls, d):
        rho = d.get("rho")
        return cls(float(d.get("alpha", 0.0)), math.inf if rho is None else float(rho),
                   float(d.get("theta", math.pi / 2)))


@dataclass
class GainSynthesisResult:
    K: np.ndarray | None
    gamma: float
    W: np.ndarray | None
    X: np.ndarray | None
    eigenvalues: np.ndarray | None
    status: str
    region: RegionSpec
    hinf: float = math.nan
    margins: dict = field(default_factory=dict)
    vertex_eigenvalues: list = field(default_factory=list)

    @property
    def feasible(self):
        return self.status == "optimal"

    def to_dict(self):
        arr = lambda a: None if a is None else np.asarray(a).tolist()
        eig = None if self.eigenvalues is None else [[float(z.real), float(z.imag)]
                                                     for z in self.eigenvalues]
        return {
            "status": self.status,
            "K": arr(self.K),
            "gamma": self.gamma,
            "hinf": self.hinf,
            "W": arr(self.W),
            "X": arr(self.X),
            "eigenvalues": eig,
            "region": self.region.to_dict(),
            "margins": self.margins,
        }


class _Scaling(NamedTuple):
    omega0: float
    D: np.ndarray
    su: float
    sw: float
    sz: float

    def model(self, A, B, E, C):
        Di = np.diag(1.0 / np.diag(self.D))
        return (Di @ A @ self.D / self.omega0, Di @ B * self.su / self.omega0,
                Di @ E * self.sw / self.omega0, C @ self.D / self.sz)


def _scaling(model, region, vertices=()):
    A = model.A
    if math.isfinite(region.rho):
        omega0 = region.rho
    else:
        omega0 = max(region.alpha, *(np.linalg.norm(m.A, 2) for m in (model, *vertices)), 0.0)
        omega0 = omega0 if omega0 > 0 else 1.0
    A1 = A / omega0
    B1 = model.B / omega0
    Ctrb = np.column_stack([B1, A1 @ B1])
    d = np.linalg.norm(Ctrb, axis=1)
    d = np.where(d > 0, d, 1.0)
    D = np.diag(d)
    b = np.linalg.norm(model.B / d)
    e = np.linalg.norm(model.E / d)
    z = np.linalg.norm(model.C * d)
    su = omega0 / b
    sw = omega0 / e if e > 0 else 1.0
    sz = z if z > 0 else 1.0
    return _Scaling(omega0, D, su, sw, sz)


def _sym(a):
    return 0.5 * (a + a.T)


def _unpack(y):
    W = np.array([[y[0], y[1]], [y[1], y[2]]])
    return W, np.array([y[3], y[4]]), y[5]


def _lmi_blocks(A, B, E, C, region, vertices=()):
    """LMI blocks of the design problem in the scaled coordinates."""
    n = 6
    alpha, rho, th = region.alpha, region.rho, region.theta

    def M_of(y, A=A, B=B):
        W, X, _ = _unpack(y)
        return A @ W + np.outer(B, X)

    blocks = [
        LmiBlock.from_affine(lambda y: -_unpack(y)[0], n, True, "W_pd"),
        LmiBlock.from_affine(lambda y: (lambda M: M + M.T)(M_of(y)) + 2 * alpha * _unpack(y)[0],
                             n, True, "decay"),
    ]
    if 0 < th < math.pi / 2:
        s, c = math.sin(th), math.cos(th)

        def sector(y):
            M = M_of(y)
            P, Q = M + M.T, M - M.T
            return np.block([[s * P, c * Q], [-c * Q, s * P]])

        blocks.append(LmiBlock.from_affine(sector, n, False, "sector"))
    if math.isfinite(rho):
        def disk(y):
            W = _unpack(y)[0]
            M = M_of(y)
            return np.block([[-rho * W, M.T], [M, -rho * W]])

        blocks.append(LmiBlock.from_affine(disk, n, False, "disk"))

    def bounded_real(y):
        W, _, g = _unpack(y)
        M = M_of(y)
        WC = W @ C
        return np.block([
            [M + M.T, E[:, None], WC[:, None]],
            [E[None, :], -g * np.ones((1, 1)), np.zeros((1, 1))],
            [WC[None, :], np.zeros((1, 1)), -g * np.ones((1, 1))],
        ])

    blocks.append(LmiBlock.from_affine(bounded_real, n, True, "bounded_real"))
    for j, (Aj, Bj) in enumerate(vertices):
        blocks.append(LmiBlock.from_affine(
            lambda y, Aj=Aj, Bj=Bj: (lambda M: M + M.T)(M_of(y, Aj, Bj)), n, True, f"vertex{j}"))
    A_eq = None
    if th == 0:
        # sector of zero width: M must be symmetric
        A_eq = np.array([[(M_of(e) - M_of(np.zeros(n)))[0, 1] - (M_of(e) - M_of(np.zeros(n)))[1, 0]
                          for e in np.eye(n)]])
    return blocks, A_eq


def region_violation(eigs, region, tol):
    """Largest violation of the region conditions by the eigenvalues (<= 0 if inside)."""
    eigs = np.asarray(eigs)
    v = [np.max(eigs.real + region.alpha)]
    if math.isfinite(region.rho):
        v.append(np.max(np.abs(eigs) - region.rho))
    v.append(np.max(np.abs(eigs) * math.cos(region.theta) + eigs.real))
    return float(max(v)) - tol


def _eig_tol(region, eigs):
    scale = region.rho if math.isfinite(region.rho) else max(np.abs(eigs).max(), region.alpha, 1.0)
    return 1e-6 * scale


def synthesize(model, region, vertices=(), tol=1e-8, verify=True):
    """Minimize the L2 gain subject to the pole-region LMIs.

    Parameters
    ----------
    model : ErrorModel
        Nominal model.
    region : RegionSpec
    vertices : sequence of ErrorModel
        Extra polytope vertices whose closed loops must be stable with the
        same Lyapunov certificate.
    tol : float
        Duality-gap target of the (scaled) SDP.
    verify : bool
        Post-check the region and the gain with independent oracles.

    Returns
    -------
    GainSynthesisResult
        ``status`` is ``"optimal"`` or ``"infeasible"``.

    Raises
    ------
    VerificationError
        If a returned design fails its post-check.
    """
    sc = _scaling(model, region, vertices)
    A, B, E, C = sc.model(model.A, model.B, model.E, model.C)
    verts = [sc.model(v.A, v.B, v.E, v.C)[:2] for v in vertices]
    reg = RegionSpec(region.alpha / sc.omega0, region.rho / sc.omega0, region.theta)
    blocks, A_eq = _lmi_blocks(A, B, E, C, reg, verts)
    cost = np.zeros(6)
    cost[5] = 1.0
    try:
        sol = sdp_solve(cost, blocks, A_eq=A_eq, tol=tol, strict_margin=1e-9 * max(np.linalg.norm(A, 2), 1.0))
    except InfeasibleError:
        return GainSynthesisResult(None, math.inf, None, None, None, "infeasible", region)
    Ws, Xs, gs = _unpack(sol.y)
    Ks = np.linalg.solve(Ws, Xs)  # X W^{-1} with W symmetric
    K = sc.su * Ks @ np.diag(1.0 / np.diag(sc.D))
    gamma = gs * sc.sz / sc.sw
    # W, X in physical coordinates: e = D x, so W_e = D W_x D, X_e = su X_x D
    W = sc.D @ Ws @ sc.D
    X = sc.su * Xs @ sc.D
    Acl = model.closed_loop(K)
    eigs = np.linalg.eigvals(Acl)
    res = GainSynthesisResult(K, float(gamma), W, X, eigs, "optimal", region,
                              margins=sol.margins)
    res.vertex_eigenvalues = [np.linalg.eigvals(v.closed_loop(K)) for v in vertices]
    if verify:
        _post_verify(model, res, vertices)
    return res


def _post_verify(model, res, vertices):
    tol = _eig_tol(res.region, res.eigenvalues)
    Acl = model.closed_loop(res.K)
    hinf = hinf_norm(Acl, model.E, model.C)
    grid = hinf_norm_grid(Acl, model.E, model.C)
    res.hinf = hinf
    problems = []
    if region_violation(res.eigenvalues, res.region, tol) > 0:
        problems.append("closed-loop eigenvalues outside the region")
    if not max(hinf, grid) <= res.gamma * (1 + 1e-6) + 1e-300:
        problems.append(f"H-infinity norm {max(hinf, grid):.9g} exceeds gamma {res.gamma:.9g}")
    if np.linalg.eigvalsh(_sym(res.W))[0] <= 0:
        problems.append("certificate W is not positive definite")
    for j, ev in enumerate(res.vertex_eigenvalues):
        if np.max(ev.real) >= 0:
            problems.append(f"vertex {j} closed loop is not Hurwitz")
    if problems:
        raise VerificationError("; ".join(problems), dump=res.to_dict())


def synthesize_robust(vertices, region, nominal, tol=1e-8):
    """Nominal design plus common-Lyapunov stability at every polytope vertex."""
    vertices = list(vertices)
    if not vertices:
        raise ConfigError("need at least one vertex")
    return synthesize(nominal, region, vertices=vertices, tol=tol)


class TradeoffPoint(NamedTuple):
    alpha: float
    gamma: float
    K: np.ndarray | None
    status: str


def _tradeoff_task(args):
    model, region, vertices = args
    r = synthesize(model, region, vertices)
    return TradeoffPoint(region.alpha, r.gamma, r.K, r.status)


def tradeoff_curve(model, theta, rho, alphas, vertices=(), jobs=1):
    """Optimal gain bound for each decay rate in ``alphas``."""
    tasks = [(model, RegionSpec(float(a), rho, theta), tuple(vertices)) for a in alphas]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(_tradeoff_task, tasks))
    return [_tradeoff_task(t) for t in tasks]
