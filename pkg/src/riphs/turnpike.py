"""Turnpike steady states and diagnostics of the approach to them."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import ModelSpec, _as_state, entropy_production, eval_rhs
from .errors import InvalidParams, Infeasible, NonPositiveDistance, RiphsError
from .ivp import Trajectory, trapezoid_cumulative
from .ocp import _jacobian_x, tracking_cost
from .optim import augmented_lagrangian
from .parallel import parallel_map

__all__ = [
    "TurnpikePoint",
    "turnpike_objective",
    "solve_turnpike",
    "turnpike_distances",
    "exp_fit",
    "write_turnpike_json",
    "read_turnpike_json",
]

STATIONARITY_TOL = 1e-8


@dataclass(frozen=True)
class TurnpikePoint:
    x_tp: np.ndarray
    u_tp: np.ndarray
    objective: float
    stationarity_residual: float

    def to_dict(self):
        return {
            "x_tp": [float(v) for v in self.x_tp],
            "u_tp": [float(v) for v in self.u_tp],
            "objective": float(self.objective),
            "stationarity_residual": float(self.stationarity_residual),
        }


def turnpike_objective(model: ModelSpec, x, alpha2, alpha3, c_mat, y_ref):
    """Steady-state integrand ``a2 T0 sigma(x) + a3 |C x - y_ref|^2``.

    ``sigma`` is the entropy production; the energy weight ``a1`` has no
    influence on the steady state and is deliberately not a parameter.
    """
    val = alpha2 * model.t0 * entropy_production(model, x) + alpha3 * tracking_cost(x, c_mat, y_ref)
    return val if np.ndim(val) else float(val)


def _restore(model, x, u, free, lo, hi, iters=20):
    """Gauss-Newton projection of (x, u) onto f(x, u) = 0."""
    for _ in range(iters):
        r = eval_rhs(model, x, u)
        if np.max(np.abs(r)) <= 1e-14 * (1 + np.max(np.abs(x))):
            break
        fx = _jacobian_x(lambda Z: eval_rhs(model, Z, np.broadcast_to(u, Z.shape)), x[None], model.n)[0]
        g = np.broadcast_to(model.input_map(x, model.hamiltonian_grad(x)), (model.n, model.m))
        movable = free & (u > lo) & (u < hi)
        A = np.hstack([fx, g[:, movable]])
        step = np.linalg.lstsq(A, -r, rcond=None)[0]
        x = x + step[: model.n]
        u = u.copy()
        u[movable] = np.clip(u[movable] + step[model.n :], lo[movable], hi[movable])
    return x, u


def _solve_start(model, x_start, objective, lo, hi, free, u_fixed):
    n = model.n
    nf = int(free.sum())

    def split(z):
        u = u_fixed.copy()
        u[free] = z[n:]
        return z[:n], u

    def obj(z):
        x, _ = split(z)
        val = objective(x)
        gx = _jacobian_x(objective, x[None], None)[0]
        return val, np.concatenate([gx, np.zeros(nf)])

    def con(z):
        x, u = split(z)
        c = eval_rhs(model, x, u)
        fx = _jacobian_x(lambda Z: eval_rhs(model, Z, np.broadcast_to(u, Z.shape)), x[None], n)[0]
        g = np.broadcast_to(model.input_map(x, model.hamiltonian_grad(x)), (n, model.m))
        return c, np.hstack([fx, g[:, free]])

    z0 = np.concatenate([x_start, np.clip(np.zeros(nf), lo[free], hi[free])])
    zlo = np.concatenate([np.full(n, -np.inf), lo[free]])
    zhi = np.concatenate([np.full(n, np.inf), hi[free]])
    try:
        res = augmented_lagrangian(obj, con, z0, zlo, zhi)
        x, u = split(res.x)
        x, u = _restore(model, x, u, free, lo, hi)
        resid = float(np.max(np.abs(eval_rhs(model, x, u))))
        return x, u, float(objective(x)), resid
    except RiphsError:
        return None


def solve_turnpike(
    model: ModelSpec,
    alpha2: float,
    alpha3: float,
    c_mat,
    y_ref,
    u_lo,
    u_hi,
    n_starts: int = 8,
    seed: int = 42,
    x_starts: Optional[Sequence] = None,
) -> TurnpikePoint:
    """Best controlled equilibrium for the steady-state objective.

    Augmented Lagrangian on ``f(x, u) = 0`` with ``u`` in the box, from
    ``n_starts`` seeded uniform states in ``[0, 10]^n`` (plus any explicit
    ``x_starts``).  Raises :class:`Infeasible` if no start reaches a
    stationarity residual of ``1e-8``.
    """
    c_mat = np.atleast_2d(np.asarray(c_mat, dtype=float))
    y_ref = np.atleast_1d(np.asarray(y_ref, dtype=float))
    lo = np.broadcast_to(np.asarray(u_lo, dtype=float), (model.m,)).copy()
    hi = np.broadcast_to(np.asarray(u_hi, dtype=float), (model.m,)).copy()
    if np.any(lo > hi):
        raise InvalidParams("empty control box")
    free = lo < hi
    u_fixed = np.where(free, 0.0, lo)
    rng = np.random.default_rng(seed)
    starts = [rng.uniform(0.0, 10.0, model.n) for _ in range(n_starts)]
    starts += [_as_state(model, s) for s in (x_starts or [])]

    if alpha2 < 0 or alpha3 < 0:
        raise InvalidParams("weights must be nonnegative")
    # the minimiser depends only on the ratio of the weights
    scale = alpha2 + alpha3
    if scale == 0:
        scale = 1.0

    def objective(x):
        return turnpike_objective(model, x, alpha2 / scale, alpha3 / scale, c_mat, y_ref)

    results = parallel_map(lambda s: _solve_start(model, s, objective, lo, hi, free, u_fixed), starts)
    feasible = [r for r in results if r is not None and r[3] <= STATIONARITY_TOL and np.isfinite(r[2])]
    if not feasible:
        raise Infeasible(f"no start out of {len(starts)} reached stationarity residual {STATIONARITY_TOL:g}")
    x, u, val, resid = min(feasible, key=lambda r: r[2])
    return TurnpikePoint(x, u, max(val * scale, 0.0), resid)


def turnpike_distances(traj: Trajectory, x_tp) -> tuple:
    """Closest Euclidean distance to ``x_tp`` and trapezoid ``int |x - x_tp|^2 dt``."""
    d = np.linalg.norm(traj.states - np.asarray(x_tp, dtype=float), axis=1)
    return float(d.min()), float(trapezoid_cumulative(d**2, traj.times)[-1])


def exp_fit(horizons, min_dists) -> tuple:
    """Least-squares line through ``(T, ln d)``; returns ``(rate, intercept, r2)``.

    A target with no variance (up to rounding) is fitted exactly and reported with
    ``r2 = 1``.
    """
    T = np.asarray(horizons, dtype=float)
    d = np.asarray(min_dists, dtype=float)
    if T.shape != d.shape or T.size < 2:
        raise InvalidParams("need at least two (horizon, distance) pairs")
    if np.any(d <= 0):
        raise NonPositiveDistance("distances must be strictly positive for a log fit")
    y = np.log(d)
    A = np.column_stack([T, np.ones_like(T)])
    (rate, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - A @ np.array([rate, intercept])) ** 2))
    # rounding in log(d) leaves a nominally constant target with tiny spread
    flat = ss_tot <= y.size * (1e-12 * max(1.0, float(np.max(np.abs(y))))) ** 2
    r2 = 1.0 if flat else 1.0 - ss_res / ss_tot
    return float(rate), float(intercept), r2


def write_turnpike_json(tp: TurnpikePoint, path) -> None:
    with open(path, "w") as fh:
        json.dump(tp.to_dict(), fh, indent=2)
        fh.write("\n")


def read_turnpike_json(path) -> TurnpikePoint:
    with open(path) as fh:
        d = json.load(fh)
    return TurnpikePoint(np.array(d["x_tp"]), np.array(d["u_tp"]), d["objective"], d["stationarity_residual"])
