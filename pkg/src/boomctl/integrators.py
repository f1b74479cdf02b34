"""Fixed-step RK4 integration and zero-order-hold sampled simulation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, IntegrationError

TRAJECTORY_COLUMNS = ("t", "i_a", "theta_m", "omega_m", "input")


def rk4_step(f, x, u, dt):
    """One classical Runge-Kutta step of ``x' = f(x, u)`` with ``u`` held."""
    if not dt > 0:
        raise ConfigError(f"dt must be > 0, got {dt!r}")
    x = np.asarray(x, dtype=float)
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise IntegrationError("RK4 step produced a non-finite state")
    return x_next


@dataclass(frozen=True)
class SimGrid:
    """Simulation horizon, inner step and controller (hold) period.

    ``T_ctrl`` must be an integer multiple of ``dt``.
    """

    t0: float
    tf: float
    dt: float
    T_ctrl: float

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ConfigError("tf must exceed t0")
        if not (self.dt > 0 and self.T_ctrl > 0):
            raise ConfigError("dt and T_ctrl must be positive")
        ratio = self.T_ctrl / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise ConfigError(f"T_ctrl={self.T_ctrl} is not an integer multiple of dt={self.dt}")

    @classmethod
    def default(cls, tf, T_ctrl=0.01, substeps=20, t0=0.0):
        return cls(t0, tf, T_ctrl / substeps, T_ctrl)

    @property
    def substeps(self):
        return int(round(self.T_ctrl / self.dt))

    @property
    def n_ticks(self):
        """Number of controller periods covering ``[t0, tf]``."""
        return int(math.ceil((self.tf - self.t0) / self.T_ctrl - 1e-9))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        n = len(self.times)
        if len(self.states) != n or len(self.inputs) != n:
            raise ConfigError("times, states and inputs must have equal lengths")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ConfigError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRAJECTORY_COLUMNS)
            for t, x, u in zip(self.times, self.states, self.inputs):
                w.writerow([format_float(t), *(format_float(v) for v in x[:3]), format_float(u)])

    @classmethod
    def from_csv(cls, path):
        data = read_csv_columns(path)
        missing = [c for c in TRAJECTORY_COLUMNS if c not in data]
        if missing:
            raise ConfigError(f"{path}: missing columns {missing}")
        states = np.column_stack([data["i_a"], data["theta_m"], data["omega_m"]])
        return cls(data["t"], states, data["input"])


def format_float(v):
    return format(float(v), ".17g")


def _cell(v):
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return format_float(v)


def write_csv_columns(path, columns):
    """Write a dict of equal-length 1-D columns as CSV with 17-digit floats."""
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(len(cols[0])):
            w.writerow([_cell(c[i]) for c in cols])


def read_csv_columns(path):
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise ConfigError(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in body]
        try:
            out[name] = np.array([float(v) for v in col])
        except ValueError:
            out[name] = np.array(col)
    return out


def _schedule_value(schedule, k, t, x):
    if callable(schedule):
        return schedule(k, t, x)
    return schedule[k]


def simulate_zoh(f, x0, schedule, grid):
    """Simulate ``x' = f(x, u)`` with ``u`` updated every ``grid.T_ctrl``.

    Parameters
    ----------
    f : callable
        Vector field ``f(x, u) -> x'``.
    x0 : array_like
        Initial state at ``grid.t0``.
    schedule : sequence or callable
        Either one held input per controller period (length at least
        ``grid.n_ticks``) or a policy ``schedule(k, t_k, x_k) -> u``
        evaluated at each tick from the sampled state.
    grid : SimGrid

    Returns
    -------
    Trajectory
        Sampled at every inner step; ``inputs[j]`` is the value held over
        the step starting at ``times[j]`` (the final sample repeats the last
        held value).
    """
    n_ticks = grid.n_ticks
    if not callable(schedule) and len(schedule) < n_ticks:
        raise ConfigError(f"input schedule has {len(schedule)} values, needs {n_ticks}")
    m = grid.substeps
    x = np.array(x0, dtype=float)
    nx = x.size
    n = n_ticks * m + 1
    times = grid.t0 + grid.dt * np.arange(n)
    states = np.empty((n, nx))
    inputs = np.empty(n)
    states[0] = x
    j = 0
    u = 0.0
    for k in range(n_ticks):
        u = _schedule_value(schedule, k, times[j], x)
        for _ in range(m):
            inputs[j] = u
            try:
                x = rk4_step(f, x, u, grid.dt)
            except IntegrationError:
                raise IntegrationError("simulation blew up", time=float(times[j])) from None
            j += 1
            states[j] = x
    inputs[-1] = u
    return Trajectory(times, states, inputs)
