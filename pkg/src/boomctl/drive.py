"""
Averaged model of the unidirectional AC-chopper drive and its inverse.

The drive chops the rectified semi-sinusoid ``v_+(t) = sqrt(2) V_ac sin(pi t/T)``.
With duty cycle ``delta`` the switch is off on ``[0, (1-delta) T]`` (the open
motor terminals show the back-EMF ``e_a``) and on for the rest of the period.
The period-averaged terminal voltage is non-monotone in ``delta``; it is
inverted on the branch between its minimum and maximum with an explicit
arccos formula whose error is at most about one percent of the admissible
range. The second half of the module bounds that error numerically with
interval branch and bound.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DomainError, InconclusiveError
from .interval import Dual, Interval, centered_enclosure, icos, isin
from .plant import dynamics

PSI_BOUND = 0.01001
SINE_CUBIC_BOUND = 0.02002
BEMF_CLIP = 0.999


@dataclass(frozen=True)
class DriveParams:
    V_ac: float = 24.0
    T: float = 0.01
    V_D: float = 0.7

    def __post_init__(self):
        if not self.V_ac > 0:
            raise ConfigError(f"V_ac must be > 0, got {self.V_ac!r}")
        if not self.T > 0:
            raise ConfigError(f"T must be > 0, got {self.T!r}")
        if not self.V_D >= 0:
            raise ConfigError(f"V_D must be >= 0, got {self.V_D!r}")

    @property
    def peak(self):
        """Amplitude of the rectified supply, sqrt(2) V_ac."""
        return math.sqrt(2.0) * self.V_ac

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - {"V_ac", "T", "V_D"}
        if unknown:
            raise ConfigError(f"unknown drive parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


def _check_bemf(e_a, drv):
    e_a = np.asarray(e_a, dtype=float)
    if np.any(~np.isfinite(e_a)) or np.any(e_a < 0) or np.any(e_a >= drv.peak):
        raise DomainError(f"back-EMF must satisfy 0 <= e_a < {drv.peak:.6g} V")
    return e_a


def _check_duty(delta):
    delta = np.asarray(delta, dtype=float)
    if np.any(~(delta >= 0)) or np.any(~(delta <= 1)):
        raise DomainError("duty cycle must lie in [0, 1]")
    return delta


def clip_bemf(e_a, drv):
    """Clamp a measured back-EMF into the drive's admissible domain."""
    return np.clip(e_a, 0.0, BEMF_CLIP * drv.peak)


def _average(delta, e_a, peak):
    return e_a * (1.0 - delta) + (peak / math.pi) * (1.0 - np.cos(math.pi * delta))


def average_voltage(delta, e_a, drv):
    """Period-averaged motor voltage for duty ``delta`` and back-EMF ``e_a``."""
    delta = _check_duty(delta)
    e_a = _check_bemf(e_a, drv)
    return _average(delta, e_a, drv.peak)


class DutyExtrema(NamedTuple):
    delta_m: np.ndarray
    delta_M: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray


def _extrema(e_a, peak):
    dm = np.arcsin(e_a / peak) / math.pi
    sn, cs = np.sin(math.pi * dm), np.cos(math.pi * dm)
    u_min = peak * ((1.0 - dm) * sn + (1.0 - cs) / math.pi)
    u_max = peak * (dm * sn + (1.0 + cs) / math.pi)
    return DutyExtrema(dm, 1.0 - dm, u_min, u_max)


def duty_extrema(e_a, drv):
    """Duty cycles of the minimum/maximum average voltage and those voltages."""
    return _extrema(_check_bemf(e_a, drv), drv.peak)


def admissible_band(e_a, drv):
    """``(u_min, u_max)`` and their derivatives with respect to ``e_a``.

    Negative or too-large ``e_a`` are clamped (derivative zero there), which is
    what the trajectory optimizer needs for iterates that stray slightly.
    """
    e_a = np.asarray(e_a, dtype=float)
    e_c = clip_bemf(e_a, drv)
    ext = _extrema(e_c, drv.peak)
    inside = (e_a >= 0) & (e_a <= BEMF_CLIP * drv.peak)
    # envelope theorem: d u_min/d e_a = 1 - delta_m, d u_max/d e_a = 1 - delta_M
    du_min = np.where(inside, 1.0 - ext.delta_m, 0.0)
    du_max = np.where(inside, ext.delta_m, 0.0)
    return ext.u_min, ext.u_max, du_min, du_max


# ---------------------------------------------------------------------------
# normalization and mismatch


def normalized_voltage(dtilde, e_a, drv):
    """Average voltage rescaled to [0, 1] over the invertible branch."""
    dtilde = _check_duty(dtilde)
    ext = duty_extrema(e_a, drv)
    delta = ext.delta_m + (1.0 - 2.0 * ext.delta_m) * dtilde
    u = _average(delta, np.asarray(e_a, dtype=float), drv.peak)
    return (u - ext.u_min) / (ext.u_max - ext.u_min)


def mismatch_psi(dtilde, e_a, drv):
    """Deviation of the normalized map from ``(1 - cos(pi dtilde)) / 2``."""
    dtilde = np.asarray(dtilde, dtype=float)
    return normalized_voltage(dtilde, e_a, drv) - 0.5 * (1.0 - np.cos(math.pi * dtilde))


def mismatch_psi_closed(dtilde, e_a, drv):
    """Same as :func:`mismatch_psi`, via the tan(pi delta_m) closed form.

    Ill-conditioned as ``e_a`` approaches the supply peak.
    """
    dtilde = _check_duty(dtilde)
    dm = duty_extrema(e_a, drv).delta_m
    sigma = math.pi * (1.0 - 2.0 * dm)
    tn = np.tan(math.pi * dm)
    sd = sigma * dtilde
    num = (tn * (np.sin(sd) + sigma * np.sin(0.5 * math.pi * dtilde) ** 2 - sd)
           + np.cos(math.pi * dtilde) - np.cos(sd))
    return num / (2.0 - sigma * tn)


def sine_cubic_gap(alpha):
    """``sin(pi alpha / 2) - (3 alpha - alpha^3) / 2``; works on intervals too."""
    return isin(_half_pi_times(alpha)) - 0.5 * (3.0 * alpha - alpha * alpha * alpha)


def sinc_derivative(s):
    return (s * np.cos(s) - np.sin(s)) / s**2


def psi_bar(alpha, s):
    """Mismatch in the ``(alpha, s)`` chart, written with ``Phi(s) = sin(s)/s``.

    Here ``dtilde = (1 - alpha)/2`` and ``e_a = sqrt(2) V_ac cos(s)``; valid for
    ``0 <= alpha < 1`` and ``0 < s <= pi/2``.
    """
    alpha = np.asarray(alpha, dtype=float)
    s = np.asarray(s, dtype=float)
    Phi = np.sin(s) / s
    Phi_a = np.sinc(alpha * s / math.pi)
    quotient = (Phi - Phi_a) / ((1.0 - alpha) * s) / sinc_derivative(s)
    return 0.5 * (np.sin(0.5 * math.pi * alpha) - alpha - alpha * (1.0 - alpha) * quotient)


def psi_bar_limit(alpha):
    """Limit of :func:`psi_bar` as ``s -> 0``."""
    return 0.5 * sine_cubic_gap(np.asarray(alpha, dtype=float))


# sinc-series coefficients c_k = (-1)^k / (2k+1)!
_SERIES_TERMS = 14
_C = [(-1) ** k / math.factorial(2 * k + 1) for k in range(_SERIES_TERMS + 1)]
T_MAX = (math.pi / 2) ** 2
HALF_PI = Interval(0.5 * math.pi, np.nextafter(0.5 * math.pi, np.inf))


def _series_tail_bound(K, t_max):
    # bounds value, d/dt and d/dalpha of the omitted sinc-series terms
    total = 0.0
    for k in range(K + 1, K + 60):
        total += 4.0 * k**3 * max(t_max, 1.0) ** k / math.factorial(2 * k + 1)
    return 2.0 * total


_TAIL = _series_tail_bound(_SERIES_TERMS, T_MAX)


def psi_bar_series(alpha, t, pad=True):
    """:func:`psi_bar` as a function of ``t = s**2`` via power series.

    The factor ``1 - alpha`` is cancelled analytically, so the expression is
    smooth on the closed box ``[0, 1] x [0, pi^2/4]`` and suitable for
    interval evaluation. ``alpha`` and ``t`` may be floats, arrays,
    :class:`~boomctl.interval.Interval` or :class:`~boomctl.interval.Dual`.
    """
    K = _SERIES_TERMS
    # P_k(alpha) = sum_{j<2k} alpha^j, built incrementally
    P = [None]
    acc = 1.0 + alpha
    P.append(acc)
    a_pow = alpha
    for k in range(2, K + 1):
        a2 = a_pow * alpha
        a3 = a2 * alpha
        acc = acc + a2 + a3
        a_pow = a3
        P.append(acc)
    num = _C[K] * P[K]
    den = 2 * K * _C[K]
    for k in range(K - 1, 0, -1):
        num = num * t + _C[k] * P[k]
        den = den * t + 2 * k * _C[k]
    if pad and isinstance(num, Dual):
        num, den = num.pad(_TAIL), den.pad(_TAIL)
    elif pad and isinstance(num, Interval):
        r = Interval(-_TAIL, _TAIL)
        num, den = num + r, den + r
    quotient = num / den
    return 0.5 * (isin(_half_pi_times(alpha)) - alpha - alpha * (1.0 - alpha) * quotient)


def _is_interval(x):
    return isinstance(x, (Interval, Dual))


def _half_pi_times(a):
    # keep an enclosure of pi/2 for interval arguments
    return HALF_PI * a if _is_interval(a) else 0.5 * math.pi * np.asarray(a, dtype=float)


# ---------------------------------------------------------------------------
# inversion


class Inversion(NamedTuple):
    delta: np.ndarray
    saturated: np.ndarray


def invert(u, e_a, drv):
    """Duty cycle that approximately produces average voltage ``u``.

    Requests outside ``[u_min(e_a), u_max(e_a)]`` are saturated to the nearest
    end of the band and flagged.

    Returns
    -------
    Inversion
        ``(delta, saturated)``.
    """
    u = np.asarray(u, dtype=float)
    ext = duty_extrema(e_a, drv)
    saturated = (u < ext.u_min) | (u > ext.u_max)
    uc = np.clip(u, ext.u_min, ext.u_max)
    arg = np.clip(1.0 - 2.0 * (uc - ext.u_min) / (ext.u_max - ext.u_min), -1.0, 1.0)
    delta = ext.delta_m + (1.0 - 2.0 * ext.delta_m) / math.pi * np.arccos(arg)
    if delta.ndim == 0:
        return Inversion(float(delta), bool(saturated))
    return Inversion(delta, saturated)


def switched_waveform(delta, e_a, drv, n=4001):
    """Sampled terminal voltage over one period, assuming zero current while off.

    Returns ``(t, u_a)``: ``n`` uniformly spaced samples on ``[0, T]`` plus the
    switching instant twice (off value, then on value), so trapezoid
    quadrature does not straddle the jump.
    """
    delta = float(_check_duty(delta))
    e_a = float(_check_bemf(e_a, drv))
    t_sw = (1.0 - delta) * drv.T
    grid = np.linspace(0.0, drv.T, n)
    before, after = grid[grid < t_sw], grid[grid > t_sw]
    t = np.concatenate([before, [t_sw, t_sw], after])
    u_a = np.concatenate([
        np.full(before.size + 1, e_a),
        [drv.peak * math.sin(math.pi * t_sw / drv.T)],
        drv.peak * np.sin(math.pi * after / drv.T),
    ])
    if delta == 0.0:
        u_a[-1] = e_a  # off for the whole period, the jump sits at t = T
    return t, u_a


# ---------------------------------------------------------------------------
# certified bounds


@dataclass(frozen=True)
class InversionCertificate:
    sup_bound: float
    boxes_processed: int
    tolerance: float
    lower_bound: float = 0.0
    threshold: float = PSI_BOUND

    @property
    def certified(self):
        return self.sup_bound < self.threshold

    def to_dict(self):
        return {"sup_bound": self.sup_bound, "boxes_processed": self.boxes_processed,
                "tolerance": self.tolerance}


def branch_and_bound_sup(f, lo, hi, tol, threshold=np.inf, absolute=True,
                         max_boxes=2_000_000, min_width=1e-12):
    """Certified upper bound on ``sup f`` (or ``sup |f|``) over a box.

    Boxes are processed breadth-first in vectorized batches. A box is retired
    once its upper bound is below ``threshold`` and within ``tol`` of the best
    value found at a sample point.

    Returns
    -------
    (upper, lower, processed)
        ``lower <= sup <= upper`` with ``lower`` attained at a box centre.
    """
    lo = [np.atleast_1d(np.asarray(v, dtype=float)) for v in lo]
    hi = [np.atleast_1d(np.asarray(v, dtype=float)) for v in hi]
    scale = [float(h[0] - l[0]) or 1.0 for l, h in zip(lo, hi)]
    best_lower = -np.inf
    upper_retired = -np.inf
    processed = 0
    while lo[0].size:
        boxes = [Interval(l, h) for l, h in zip(lo, hi)]
        enc = centered_enclosure(f, boxes)
        centre = f(*(Interval.point(b.mid) for b in boxes))
        processed += lo[0].size
        if absolute:
            upper = enc.mag()
            point = np.maximum(centre.lo, -centre.hi)
        else:
            upper = enc.hi
            point = centre.lo
        best_lower = max(best_lower, float(point.max()))
        widths = np.stack([(h - l) / s for l, h, s in zip(lo, hi, scale)])
        tiny = widths.max(axis=0) < min_width
        done = ((upper < threshold) & (upper <= best_lower + tol)) | tiny
        if done.any():
            upper_retired = max(upper_retired, float(upper[done].max()))
        keep = ~done
        if not keep.any():
            break
        if processed > max_boxes:
            best = max(upper_retired, float(upper[keep].max()))
            raise InconclusiveError(
                f"box budget exhausted after {processed} boxes; best bound {best:.8g}",
                best=best,
            )
        axis = np.argmax(widths[:, keep], axis=0)
        new_lo, new_hi = [], []
        for d in range(len(lo)):
            l, h = lo[d][keep], hi[d][keep]
            m = 0.5 * (l + h)
            split = axis == d
            new_lo.append(np.concatenate([l, np.where(split, m, l)]))
            new_hi.append(np.concatenate([np.where(split, m, h), h]))
        lo, hi = new_lo, new_hi
    return upper_retired, best_lower, processed


def verify_psi_bound(tol=1e-4, threshold=PSI_BOUND, max_boxes=2_000_000):
    """Certify an upper bound on ``|Psi|`` over the full drive domain.

    Works in the ``(alpha, t = s^2)`` chart, which by the antisymmetry of the
    mismatch about ``dtilde = 1/2`` covers every ``(dtilde, e_a)``.
    """
    if not tol > 0:
        raise ConfigError("tol must be > 0")
    upper, lower, processed = branch_and_bound_sup(
        psi_bar_series, [0.0, 0.0], [1.0, T_MAX], tol, threshold=threshold,
        absolute=True, max_boxes=max_boxes,
    )
    return InversionCertificate(upper, processed, tol, lower, threshold)


@dataclass(frozen=True)
class SineCubicCertificate:
    max_upper: float
    max_lower: float
    nonnegative: bool
    boxes_processed: int


def _certify_positive(f, lo, hi, max_boxes=200_000):
    """True if ``f > 0`` is certified on ``[lo, hi]``."""
    l, h = np.array([lo]), np.array([hi])
    processed = 0
    while l.size:
        enc = centered_enclosure(f, [Interval(l, h)])
        processed += l.size
        if np.any(enc.hi <= 0) or processed > max_boxes:
            return False, processed
        keep = enc.lo <= 0
        l, h = l[keep], h[keep]
        m = 0.5 * (l + h)
        l, h = np.concatenate([l, m]), np.concatenate([m, h])
    return True, processed


def _gap_d1(a):
    # first derivative of sine_cubic_gap
    return HALF_PI * icos(_half_pi_times(a)) - 1.5 + 1.5 * a * a


def _gap_d2(a):
    # second derivative of sine_cubic_gap
    return 3.0 * a - HALF_PI.sqr() * isin(_half_pi_times(a))


def verify_sine_cubic_bound(tol=1e-7, threshold=SINE_CUBIC_BOUND, split=(0.01, 0.99)):
    """Certify ``0 <= sine_cubic_gap <= max_upper`` on ``[0, 1]``.

    Non-negativity cannot come from enclosures alone because the gap vanishes
    at both ends. Near 0 the first derivative is certified positive (so the
    gap grows from its exact zero); near 1 the second derivative is certified
    positive, which with the exact zero slope and value at 1 makes the gap
    non-increasing down to 0 there.
    """
    upper, lower, processed = branch_and_bound_sup(
        sine_cubic_gap, [0.0], [1.0], tol, threshold=threshold, absolute=False,
    )
    a, b = split
    ok_mid, n1 = _certify_positive(sine_cubic_gap, a, b)
    ok_left, n2 = _certify_positive(_gap_d1, 0.0, a)
    ok_right, n3 = _certify_positive(_gap_d2, b, 1.0)
    return SineCubicCertificate(upper, lower, ok_mid and ok_left and ok_right,
                                processed + n1 + n2 + n3)


def duty_dynamics(x, delta, p, drv, w=0.0):
    """Plant vector field driven by duty cycle instead of terminal voltage.

    The average voltage is evaluated from the instantaneous back-EMF
    ``k_t * omega_m``, clamped into the drive's admissible domain.
    """
    x = np.asarray(x, dtype=float)
    e_a = clip_bemf(p.motor.k_t * x[..., 2], drv)
    return dynamics(x, _average(delta, e_a, drv.peak), p, w)
