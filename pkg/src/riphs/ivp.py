"""Integration of the controlled state equation and balance audits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .core import (
    ModelSpec,
    _as_state,
    entropy_production,
    eval_outputs,
    eval_rhs,
    exergy,
)
from .errors import BlowUp, DimensionMismatch, DomainViolation, InconsistentTrajectory, InvalidParams, NonFinite

__all__ = [
    "ControlSignal",
    "Trajectory",
    "BalanceReport",
    "integrate",
    "euler_step",
    "balance_report",
    "trapezoid_cumulative",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

MAX_HALVINGS = 40
DEFAULT_MAX_NORM = 1e8


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control: row ``k`` acts on ``[t0 + k h, t0 + (k+1) h)``."""

    values: np.ndarray
    h: float
    t0: float = 0.0
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DimensionMismatch("control values must be a K x m matrix")
        if not self.h > 0:
            raise InvalidParams("control step h must be positive")
        if not np.all(np.isfinite(values)):
            raise NonFinite("control values must be finite")
        m = values.shape[1]
        for name in ("lo", "hi"):
            b = getattr(self, name)
            if b is not None:
                b = np.broadcast_to(np.asarray(b, dtype=float), (m,)).copy()
                b.setflags(write=False)
                object.__setattr__(self, name, b)
        if self.lo is not None and np.any(values < self.lo):
            raise InvalidParams("control values below lower bound")
        if self.hi is not None and np.any(values > self.hi):
            raise InvalidParams("control values above upper bound")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def t_end(self) -> float:
        return self.t0 + self.K * self.h

    @classmethod
    def constant(cls, value, K, h, t0=0.0, lo=None, hi=None):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.tile(value, (K, 1)), h, t0, lo, hi)

    @classmethod
    def zeros(cls, K, m, h, t0=0.0, lo=None, hi=None):
        return cls(np.zeros((K, m)), h, t0, lo, hi)


@dataclass(frozen=True)
class Trajectory:
    """Samples of a solution on the control grid.

    ``quad`` maps integrand names to cumulative integrals at the sample
    times; ``supply_H``/``supply_S`` (``u^T y_H`` and ``u^T y_S``) and
    ``production`` (irreversible entropy production) are always present
    for trajectories produced by :func:`integrate`.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    H: np.ndarray
    S: np.ndarray
    E: np.ndarray
    quad: Mapping[str, np.ndarray] = field(default_factory=dict)
    method: str = "euler"

    def __post_init__(self):
        for name in ("times", "states", "controls", "H", "S", "E"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "quad", {k: _frozen(v) for k, v in self.quad.items()})
        n_samples = self.times.shape[0]
        if self.states.shape[0] != n_samples or self.controls.shape[0] != max(n_samples - 1, 0):
            raise InconsistentTrajectory("sample counts of times/states/controls disagree")
        if n_samples > 1 and np.any(np.diff(self.times) <= 0):
            raise InconsistentTrajectory("times must be strictly increasing")

    @property
    def n(self):
        return self.states.shape[1]

    @property
    def m(self):
        return self.controls.shape[1]

    @property
    def final_state(self):
        return self.states[-1]

    @classmethod
    def from_states(cls, model, times, states, controls, quad=None, method="euler"):
        states = np.asarray(states, dtype=float)
        return cls(
            times=times,
            states=states,
            controls=np.asarray(controls, dtype=float).reshape(-1, model.m),
            H=model.hamiltonian(states),
            S=model.entropy(states),
            E=exergy(model, states),
            quad=quad or {},
            method=method,
        )


@dataclass(frozen=True)
class BalanceReport:
    power_residual: float
    entropy_slack: float
    exergy_bound_margin: Optional[float] = None
    quadrature: str = "integrated"


# --------------------------------------------------------------------------
# steppers


def _supply_integrands(model, x, u):
    y_h, y_s = eval_outputs(model, x)
    return np.array([u @ y_h, u @ y_s, float(entropy_production(model, x))])


BASE_QUADS = ("supply_H", "supply_S", "production")


def euler_step(model: ModelSpec, x, u, h):
    """One explicit Euler step ``x + h f(x, u)``."""
    return x + h * eval_rhs(model, x, u)


def _augmented(model, extra):
    names = BASE_QUADS + tuple(extra)
    fns = tuple(extra.values())

    def rhs(z, u):
        x = z[: model.n]
        base = _supply_integrands(model, x, u)
        if fns:
            base = np.concatenate([base, [float(fn(x, u)) for fn in fns]])
        return np.concatenate([eval_rhs(model, x, u), base])

    return names, rhs


def _rk4(rhs, z, u, h):
    k1 = rhs(z, u)
    k2 = rhs(z + 0.5 * h * k1, u)
    k3 = rhs(z + 0.5 * h * k2, u)
    k4 = rhs(z + h * k3, u)
    return z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_DP_E = _DP_B - _DP_B4


def dopri_step(rhs, z, u, h):
    """One Dormand-Prince step; returns (5th order solution, error estimate)."""
    k = np.empty((7, z.shape[0]))
    k[0] = rhs(z, u)
    for i in range(1, 7):
        k[i] = rhs(z + h * (np.asarray(_DP_A[i]) @ k[:i]), u)
    return z + h * (_DP_B @ k), h * (_DP_E @ k)


def _check_state(model, z, max_norm):
    x = z[: model.n]
    if not np.all(np.isfinite(z)):
        raise NonFinite("integrator produced non-finite state")
    if np.max(np.abs(x)) > max_norm:
        raise BlowUp(f"state norm exceeded {max_norm:g}")
    if model.domain_guard is not None and not bool(model.domain_guard(x)):
        raise DomainViolation("integrator left the model domain")


def _interval_rk4(model, rhs, z, u, h, substeps, max_norm):
    for _ in range(MAX_HALVINGS + 1):
        try:
            zz = z
            dt = h / substeps
            for _ in range(substeps):
                zz = _rk4(rhs, zz, u, dt)
                _check_state(model, zz, max_norm)
            return zz
        except (DomainViolation, NonFinite):
            substeps *= 2
    raise DomainViolation(f"guard still violated after {MAX_HALVINGS} step halvings")


def _interval_rk45(model, rhs, z, u, h_total, tol, state, max_norm):
    """Adaptive integration across one control interval, PI step control."""
    t, t_end = 0.0, h_total
    dt = min(state["dt"], h_total)
    halvings = 0
    while t < t_end:
        last = t + dt >= t_end * (1 - 1e-14)
        step = t_end - t if last else dt
        try:
            z_new, err = dopri_step(rhs, z, u, step)
            _check_state(model, z_new, max_norm)
        except (DomainViolation, NonFinite, FloatingPointError):
            halvings += 1
            if halvings > MAX_HALVINGS:
                raise DomainViolation(f"step rejected {MAX_HALVINGS} times in a row")
            dt = step * 0.5
            continue
        scale = tol + tol * np.maximum(np.abs(z), np.abs(z_new))
        err_norm = math.sqrt(np.mean((err / scale) ** 2))
        if err_norm <= 1.0:
            t = t_end if last else t + step
            z = z_new
            halvings = 0
            err_prev = max(state["err_prev"], 1e-4)
            fac = 0.9 * max(err_norm, 1e-10) ** (-0.7 / 5) * err_prev ** (0.4 / 5)
            state["err_prev"] = max(err_norm, 1e-4)
            dt = step * min(5.0, max(0.2, fac))
        else:
            dt = step * max(0.1, 0.9 * err_norm ** (-1 / 5))
            halvings += 1
            if halvings > MAX_HALVINGS:
                raise DomainViolation(f"step rejected {MAX_HALVINGS} times in a row")
    state["dt"] = max(dt, 1e-12)
    return z


def integrate(
    model: ModelSpec,
    x0,
    u: ControlSignal,
    t_end: Optional[float] = None,
    method: str = "rk45",
    tol: float = 1e-8,
    *,
    substeps: int = 1,
    max_norm: float = DEFAULT_MAX_NORM,
    quadratures: Optional[Mapping[str, Callable]] = None,
) -> Trajectory:
    """Simulate ``x' = f(x, u)`` from ``x0`` on the grid of ``u``.

    ``method`` is ``"euler"`` (one explicit step per interval, identical to
    the transcription rollout), ``"rk4"`` (``substeps`` classical steps per
    interval) or ``"rk45"`` (adaptive Dormand-Prince, never straddling a
    control breakpoint).  ``quadratures`` adds named integrands ``q(x, u)``
    that are integrated alongside the state.
    """
    x0 = _as_state(model, x0).copy()
    if u.m != model.m:
        raise DimensionMismatch(f"control has {u.m} channels, model expects {model.m}")
    t_end = u.t_end if t_end is None else float(t_end)
    span = t_end - u.t0
    if span < -1e-12 * max(1.0, abs(u.t0)):
        raise InvalidParams("t_end precedes the control start time")
    K = int(round(span / u.h)) if span > 0 else 0
    if abs(K * u.h - span) > 1e-9 * max(1.0, abs(span)):
        raise InvalidParams("t_end must lie on the control grid")
    if K > u.K:
        raise InvalidParams(f"control covers {u.K} steps, {K} requested")
    if method == "rk45" and not tol > 0:
        raise InvalidParams("rk45 requires tol > 0")
    if method not in ("euler", "rk4", "rk45"):
        raise InvalidParams(f"unknown method '{method}'")
    _check_state(model, np.concatenate([x0, [0.0]]), max_norm)

    names, rhs = _augmented(model, dict(quadratures or {}))
    nq = len(names)
    Z = np.empty((K + 1, model.n + nq))
    Z[0] = np.concatenate([x0, np.zeros(nq)])
    state = {"dt": u.h, "err_prev": 1e-4}
    for k in range(K):
        uk = u.values[k]
        z = Z[k]
        if method == "euler":
            d = rhs(z, uk)
            z_new = np.empty_like(z)
            z_new[: model.n] = euler_step(model, z[: model.n], uk, u.h)
            z_new[model.n :] = z[model.n :] + u.h * d[model.n :]
            _check_state(model, z_new, max_norm)
        elif method == "rk4":
            z_new = _interval_rk4(model, rhs, z, uk, u.h, substeps, max_norm)
        else:
            z_new = _interval_rk45(model, rhs, z, uk, u.h, tol, state, max_norm)
        Z[k + 1] = z_new

    times = u.t0 + u.h * np.arange(K + 1)
    quad = {name: Z[:, model.n + i] for i, name in enumerate(names)}
    return Trajectory.from_states(model, times, Z[:, : model.n], u.values[:K], quad, method)


# --------------------------------------------------------------------------
# audits


def trapezoid_cumulative(values, times):
    values = np.asarray(values, dtype=float)
    out = np.zeros_like(values)
    if values.shape[0] > 1:
        out[1:] = np.cumsum(0.5 * np.diff(times) * (values[1:] + values[:-1]))
    return out


def _supply_from_samples(model, traj):
    """Trapezoid rule on the sample grid; controls are held on each interval."""
    y_h, y_s = eval_outputs(model, traj.states)
    dt = np.diff(traj.times)
    u = traj.controls
    sup_h = 0.5 * dt * np.einsum("kj,kj->k", u, y_h[:-1] + y_h[1:])
    sup_s = 0.5 * dt * np.einsum("kj,kj->k", u, y_s[:-1] + y_s[1:])
    return np.concatenate([[0.0], np.cumsum(sup_h)]), np.concatenate([[0.0], np.cumsum(sup_s)])


def _check_consistent(model, traj):
    if traj.n != model.n or (traj.controls.size and traj.m != model.m):
        raise InconsistentTrajectory("trajectory dimensions do not match the model")
    H = model.hamiltonian(traj.states)
    if not np.allclose(H, traj.H, rtol=1e-12, atol=1e-12):
        raise InconsistentTrajectory("stored energies do not match the states")


def balance_report(
    model: ModelSpec,
    traj: Trajectory,
    c_hat: Optional[float] = None,
    shift: Optional[float] = None,
    *,
    quadrature: str = "auto",
) -> BalanceReport:
    """Power/entropy balance residuals and the exergy growth-bound margin.

    With ``quadrature="auto"`` the supply integrals accumulated by the
    integrator are used when present; otherwise (or with ``"trapezoid"``)
    they are approximated by the trapezoid rule on the sample grid.
    """
    _check_consistent(model, traj)
    use_integrated = quadrature == "integrated" or (
        quadrature == "auto" and "supply_H" in traj.quad and "supply_S" in traj.quad
    )
    if use_integrated:
        sup_h, sup_s = traj.quad["supply_H"], traj.quad["supply_S"]
    else:
        sup_h, sup_s = _supply_from_samples(model, traj)

    power = float(np.max(np.abs(traj.H - traj.H[0] - sup_h)))
    slack = float(np.min(traj.S - traj.S[0] - sup_s))

    margin = None
    if c_hat is not None:
        d = 0.0 if shift is None else float(shift)
        u_inf = float(np.max(np.abs(traj.controls))) if traj.controls.size else 0.0
        elapsed = traj.times - traj.times[0]
        bound = (traj.E[0] + d) * np.exp(c_hat * u_inf * elapsed)
        margin = float(np.min(bound - (traj.E + d)))
    return BalanceReport(power, slack, margin, "integrated" if use_integrated else "trapezoid")


# --------------------------------------------------------------------------
# CSV


def _fmt(v):
    return f"{v:.17g}"


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Columns ``t, x_1..x_n, u_1..u_m, H, S, E``; the final row has no
    applied control and carries ``nan`` in the control columns."""
    n, m = traj.n, traj.controls.shape[1] if traj.controls.ndim == 2 else 0
    header = ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{j + 1}" for j in range(m)] + ["H", "S", "E"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, t in enumerate(traj.times):
            u = traj.controls[k] if k < traj.controls.shape[0] else np.full(m, np.nan)
            row = [t, *traj.states[k], *u, traj.H[k], traj.S[k], traj.E[k]]
            w.writerow([_fmt(float(v)) for v in row])


def read_trajectory_csv(path, n, m):
    """Inverse of :func:`write_trajectory_csv`; returns a dict of arrays."""
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    data = np.atleast_1d(data)
    cols = data.dtype.names
    if len(cols) != 1 + n + m + 3:
        raise InconsistentTrajectory(f"expected {1 + n + m + 3} columns, found {len(cols)}")
    arr = np.column_stack([data[c] for c in cols])
    return {
        "t": arr[:, 0],
        "x": arr[:, 1 : 1 + n],
        "u": arr[:-1, 1 + n : 1 + n + m],
        "H": arr[:, 1 + n + m],
        "S": arr[:, 2 + n + m],
        "E": arr[:, 3 + n + m],
    }
