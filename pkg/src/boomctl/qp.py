"""
Sparse convex QP by operator splitting (ADMM).

Solves

    minimize 0.5 x^T P x + q^T x   subject to  l <= A x <= u

following the OSQP iteration: a quasi-definite KKT system is factorized once
per penalty value, box projections handle the inequalities, and equality
rows get a larger penalty. Ruiz equilibration conditions the data and a
final polishing step solves the equality-constrained problem on the guessed
active set to high accuracy.

The default backend is the Clarabel interior-point solver, which is robust to
the poor conditioning of stiff multiple-shooting linearizations; the ADMM
iteration is kept as a dependency-light alternative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, ConvergenceError, InfeasibleError

_INF = 1e20


@dataclass
class QpSettings:
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    max_iter: int = 20000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iters: int = 15
    adaptive_rho_interval: int = 50
    check_interval: int = 10
    polish: bool = True
    eps_infeas: float = 1e-9
    backend: str = "clarabel"


class QpResult(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    prim_res: float
    dual_res: float
    polished: bool


def _ruiz(P, q, A, iters):
    n, m = P.shape[0], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    c = 1.0
    Ps, As, qs = P.copy(), A.copy(), q.copy()
    for _ in range(iters):
        col_P = np.abs(Ps).max(axis=0).toarray().ravel() if n else np.zeros(0)
        col_A = np.abs(As).max(axis=0).toarray().ravel() if m else np.zeros(n)
        dn = np.maximum(col_P, col_A)
        dm = np.abs(As).max(axis=1).toarray().ravel() if m else np.zeros(0)
        dn = 1.0 / np.sqrt(np.clip(dn, 1e-4, 1e4))
        dm = 1.0 / np.sqrt(np.clip(dm, 1e-4, 1e4))
        Dn, Dm = sp.diags(dn), sp.diags(dm)
        Ps = Dn @ Ps @ Dn
        As = Dm @ As @ Dn
        qs = dn * qs
        D *= dn
        E *= dm
        # cost scaling
        gamma = max(np.mean(np.abs(Ps).max(axis=0).toarray()), np.abs(qs).max(initial=0.0))
        gamma = 1.0 / np.clip(gamma, 1e-4, 1e4)
        Ps = gamma * Ps
        qs = gamma * qs
        c *= gamma
    return Ps.tocsc(), qs, As.tocsc(), D, E, c


class _Kkt:
    def __init__(self, P, A, sigma, rho_vec):
        n = P.shape[0]
        K = sp.bmat([[P + sigma * sp.eye(n), A.T], [A, -sp.diags(1.0 / rho_vec)]], format="csc")
        self.n = n
        self.lu = spla.splu(K, permc_spec="COLAMD", diag_pivot_thresh=0.0,
                            options={"SymmetricMode": True})

    def solve(self, rhs):
        return self.lu.solve(rhs)


def solve_qp(P, q, A, l, u, settings=None, x0=None, y0=None):
    """Solve a convex QP; ``P`` symmetric PSD, ``A`` sparse, ``l <= u``.

    Raises
    ------
    InfeasibleError
        With the most violated rows in ``report`` when a primal
        infeasibility certificate is found.
    ConvergenceError
        When the iteration limit is reached (``best`` holds the iterate).
    """
    st = settings or QpSettings()
    P = sp.csc_matrix(P)
    A = sp.csc_matrix(A)
    q = np.asarray(q, dtype=float)
    l = np.maximum(np.asarray(l, dtype=float), -_INF)
    u = np.minimum(np.asarray(u, dtype=float), _INF)
    if np.any(l > u):
        raise InfeasibleError("QP has l > u", report={"rows": np.flatnonzero(l > u)[:10].tolist()})
    if st.backend == "clarabel":
        return _solve_clarabel(P, q, A, l, u, st)
    if st.backend != "admm":
        raise ConfigError(f"unknown QP backend {st.backend!r}")
    n, m = P.shape[0], A.shape[0]
    Ps, qs, As, D, E, c = _ruiz(P, q, A, st.scaling_iters)
    ls = np.where(l > -_INF, E * l, -_INF)
    us = np.where(u < _INF, E * u, _INF)

    eq = (u - l) < 1e-12 * np.maximum(1.0, np.abs(l))
    loose = (l <= -_INF) & (u >= _INF)
    rho = st.rho

    def rho_vector(r):
        v = np.full(m, r)
        v[eq] = 1e3 * r
        v[loose] = 1e-6
        return v

    rv = rho_vector(rho)
    kkt = _Kkt(Ps, As, st.sigma, rv)

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float) / D
    y = np.zeros(m) if y0 is None else np.asarray(y0, dtype=float) / E / c
    z = np.clip(As @ x, ls, us)
    it = 0
    prim = dual = np.inf
    status = "max_iter"
    while it < st.max_iter:
        it += 1
        rhs = np.concatenate([st.sigma * x - qs, z - y / rv])
        sol = kkt.solve(rhs)
        xt = sol[:n]
        nu = sol[n:]
        zt = z + (nu - y) / rv
        x_prev, z_prev, y_prev = x, z, y
        x = st.alpha * xt + (1 - st.alpha) * x_prev
        zr = st.alpha * zt + (1 - st.alpha) * z_prev
        z = np.clip(zr + y_prev / rv, ls, us)
        y = y_prev + rv * (zr - z)

        if it % st.check_interval == 0 or it == st.max_iter:
            Ax = As @ x
            Px = Ps @ x
            Aty = As.T @ y
            # residuals in original units
            prim_v = (Ax - z) / E
            dual_v = (Px + qs + Aty) / D / c
            prim = np.abs(prim_v).max(initial=0.0)
            dual = np.abs(dual_v).max(initial=0.0)
            eps_p = st.eps_abs + st.eps_rel * max(np.abs(Ax / E).max(initial=0.0),
                                                  np.abs(z / E).max(initial=0.0))
            eps_d = st.eps_abs + st.eps_rel * max(np.abs(Px / D / c).max(initial=0.0),
                                                  np.abs(Aty / D / c).max(initial=0.0),
                                                  np.abs(qs / D / c).max(initial=0.0))
            if prim <= eps_p and dual <= eps_d:
                status = "solved"
                break
            dy = y - y_prev
            if _primal_infeasible(As, dy, ls, us, E, st.eps_infeas):
                x_orig = D * x
                viol = np.maximum(l - A @ x_orig, A @ x_orig - u)
                rows = np.argsort(-viol)[:10]
                raise InfeasibleError(
                    "QP is primal infeasible",
                    report={"rows": rows.tolist(), "violation": viol[rows].tolist()},
                )
            if it % st.adaptive_rho_interval == 0:
                num = prim / max(np.abs(Ax / E).max(initial=0.0), np.abs(z / E).max(initial=0.0), 1e-30)
                den = dual / max(np.abs(Px / D / c).max(initial=0.0), np.abs(Aty / D / c).max(initial=0.0),
                                 np.abs(qs / D / c).max(initial=0.0), 1e-30)
                new_rho = np.clip(rho * np.sqrt(num / max(den, 1e-30)), 1e-6, 1e6)
                if new_rho > 5 * rho or new_rho < rho / 5:
                    rho = new_rho
                    rv = rho_vector(rho)
                    kkt = _Kkt(Ps, As, st.sigma, rv)

    x_out = D * x
    y_out = c * E * y
    z_out = z / E
    polished = False
    if st.polish:
        pol = _polish(P, q, A, l, u, x_out, y_out, z_out)
        if pol is not None and max(pol[2], pol[3]) <= max(prim, dual):
            x_out, y_out, prim, dual = pol
            polished = True
            if prim <= st.eps_abs and dual <= st.eps_abs * (1.0 + np.abs(q).max(initial=0.0)):
                status = "solved"
    if status != "solved":
        raise ConvergenceError(f"QP not solved after {it} iterations "
                               f"(primal {prim:.2e}, dual {dual:.2e})",
                               best=QpResult(x_out, y_out, status, it, prim, dual, polished))
    return QpResult(x_out, y_out, status, it, float(prim), float(dual), polished)


def _solve_clarabel(P, q, A, l, u, st):
    import clarabel

    m = A.shape[0]
    eq = (u - l) <= 1e-12 * np.maximum(1.0, np.abs(l))
    up = ~eq & (u < _INF)
    lo = ~eq & (l > -_INF)
    ie, iu, il = np.flatnonzero(eq), np.flatnonzero(up), np.flatnonzero(lo)
    Ab = sp.vstack([A[ie], A[iu], -A[il]], format="csc")
    b = np.concatenate([u[ie], u[iu], -l[il]])
    cones = [clarabel.ZeroConeT(len(ie)), clarabel.NonnegativeConeT(len(iu) + len(il))]
    cs = clarabel.DefaultSettings()
    cs.verbose = False
    cs.tol_gap_abs = cs.tol_gap_rel = cs.tol_feas = min(st.eps_abs, 1e-8)
    cs.max_iter = 200
    sol = clarabel.DefaultSolver(sp.triu(P, format="csc"), q, Ab, b, cones, cs).solve()
    x = np.asarray(sol.x)
    z = np.asarray(sol.z)
    y = np.zeros(m)
    np.add.at(y, ie, z[:len(ie)])
    np.add.at(y, iu, z[len(ie):len(ie) + len(iu)])
    np.add.at(y, il, -z[len(ie) + len(iu):])
    status = str(sol.status)
    if "Infeasible" in status and "Dual" not in status:
        raise InfeasibleError("QP is primal infeasible", report={"solver_status": status})
    Ax = A @ x
    prim = float(np.maximum(np.maximum(l - Ax, Ax - u), 0.0).max(initial=0.0))
    dual = float(np.abs(P @ x + q + A.T @ y).max(initial=0.0))
    res = QpResult(x, y, "solved", int(sol.iterations), prim, dual, False)
    if status not in ("Solved", "AlmostSolved"):
        raise ConvergenceError(f"QP backend returned {status}", best=res._replace(status=status))
    return res


def _primal_infeasible(A, dy, l, u, E, eps):
    ndy = np.abs(E * dy).max(initial=0.0)
    if ndy < 1e-30:
        return False
    dys = dy / ndy
    if np.abs(A.T @ dys).max(initial=0.0) > eps:
        return False
    pos, neg = np.maximum(dys, 0), np.minimum(dys, 0)
    ub = np.where(u < _INF, u, 0.0)
    lb = np.where(l > -_INF, l, 0.0)
    if np.any((pos > 0) & (u >= _INF)) or np.any((neg < 0) & (l <= -_INF)):
        return False
    return float(ub @ pos + lb @ neg) < -eps


def _polish(P, q, A, l, u, x, y, z, delta=1e-10, refine=5):
    """Equality-constrained solve on the active set guessed from ``y`` and ``z``."""
    n = P.shape[0]
    lower = (z - l < -y) | (y < -1e-12 * max(1.0, np.abs(y).max(initial=0.0)))
    upper = (u - z < y) | (y > 1e-12 * max(1.0, np.abs(y).max(initial=0.0)))
    eqr = np.isclose(l, u)
    lower |= eqr
    upper &= ~lower
    act = np.flatnonzero(lower | upper)
    Aact = A[act]
    b = np.where(lower[act], l[act], u[act])
    K = sp.bmat([[P + delta * sp.eye(n), Aact.T], [Aact, -delta * sp.eye(len(act))]], format="csc")
    Kt = sp.bmat([[P, Aact.T], [Aact, None]], format="csc")
    try:
        lu = spla.splu(K, permc_spec="COLAMD")
    except RuntimeError:
        return None
    rhs = np.concatenate([-q, b])
    sol = lu.solve(rhs)
    for _ in range(refine):
        sol = sol + lu.solve(rhs - Kt @ sol)
    if not np.all(np.isfinite(sol)):
        return None
    xp = sol[:n]
    yp = np.zeros_like(y)
    yp[act] = sol[n:]
    # multipliers must have the right sign on one-sided active rows
    bad = (lower[act] & ~eqr[act] & (sol[n:] > 1e-9 * max(1.0, np.abs(sol[n:]).max(initial=0.0)))) | \
          (upper[act] & (sol[n:] < -1e-9 * max(1.0, np.abs(sol[n:]).max(initial=0.0))))
    if np.any(bad):
        return None
    Ax = A @ xp
    prim = np.maximum(np.maximum(l - Ax, Ax - u), 0.0).max(initial=0.0)
    dual = np.abs(P @ xp + q + A.T @ yp).max(initial=0.0)
    return xp, yp, prim, dual
