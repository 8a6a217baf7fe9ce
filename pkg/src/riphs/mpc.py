"""Receding-horizon control: re-solve, apply the first segment, shift."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import _as_state
from .errors import InvalidParams, RiphsError, SolverFailed
from .ivp import ControlSignal, Trajectory
from .ocp import OcpSpec, SolverOptions, _euler_states, _trajectory, solve_ocp

__all__ = ["MpcConfig", "ClosedLoopResult", "run_mpc", "detect_steady_state", "write_mpc_json"]


@dataclass(frozen=True)
class MpcConfig:
    """Control horizon ``delta``, the prediction OCP and the loop length.

    The initial state stored in ``ocp`` is ignored; :func:`run_mpc` takes
    the closed-loop initial state explicitly.
    """

    delta: float
    ocp: OcpSpec
    n_iterations: int
    warm_start: bool = True
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidParams("delta must be positive")
        r = self.delta / self.ocp.h
        if abs(r - round(r)) > 1e-9 * max(1.0, r):
            raise InvalidParams("delta / h must be an integer")
        if self.delta > self.ocp.T * (1 + 1e-12):
            raise InvalidParams("delta must not exceed the prediction horizon")
        if int(self.n_iterations) != self.n_iterations or self.n_iterations < 0:
            raise InvalidParams("n_iterations must be a nonnegative integer")

    @property
    def steps(self) -> int:
        return int(round(self.delta / self.ocp.h))


@dataclass(frozen=True)
class ClosedLoopResult:
    closed_loop: Trajectory
    costs: tuple
    iterations: tuple
    converged: tuple
    settled_state: Optional[np.ndarray] = None

    @property
    def settled(self) -> bool:
        return self.settled_state is not None

    def summary(self) -> dict:
        return {
            "n_iterations": len(self.costs),
            "costs": [float(c) for c in self.costs],
            "iterations": list(self.iterations),
            "converged": list(self.converged),
            "settled": self.settled,
            "settled_state": None if self.settled_state is None else [float(v) for v in self.settled_state],
        }


def _shifted(U, steps, spec):
    tail = np.repeat(U[-1:], steps, axis=0)
    return spec.project(np.concatenate([U[steps:], tail]))


def run_mpc(
    cfg: MpcConfig,
    x0,
    *,
    settle_window: Optional[float] = None,
    settle_tol: float = 1e-3,
    callback=None,
) -> ClosedLoopResult:
    """Run ``cfg.n_iterations`` receding-horizon steps from ``x0``.

    Each applied segment is the Euler rollout of the first ``delta / h``
    optimal controls, so it coincides with the prefix of the predicted
    trajectory.  If ``settle_window`` is given the closed loop is checked
    with :func:`detect_steady_state`.
    """
    spec = cfg.ocp
    model = spec.model
    x = _as_state(model, x0).copy()
    steps = cfg.steps
    states = [x[None]]
    controls = []
    costs, iters, conv = [], [], []
    guess = None
    for k in range(int(cfg.n_iterations)):
        sub = spec.with_x0(x)
        init = ControlSignal(guess, spec.h) if guess is not None else None
        try:
            sol = solve_ocp(sub, init, cfg.solver)
        except RiphsError as exc:
            raise SolverFailed(f"MPC iteration {k}: {exc}", k) from exc
        U = np.asarray(sol.u_opt.values)
        seg = _euler_states(model, x, U[:steps], spec.h)
        states.append(seg[1:])
        controls.append(U[:steps])
        x = seg[-1]
        costs.append(sol.cost)
        iters.append(sol.iterations)
        conv.append(sol.converged)
        guess = _shifted(U, steps, sub) if cfg.warm_start else None
        if callback is not None:
            callback(k, sol, x)

    X = np.concatenate(states)
    U = np.concatenate(controls) if controls else np.zeros((0, model.m))
    traj = _trajectory(spec, X, U)
    settled = None
    if settle_window is not None and traj.times[-1] - traj.times[0] >= settle_window > 0:
        settled = detect_steady_state(traj, settle_window, settle_tol)
    return ClosedLoopResult(traj, tuple(costs), tuple(iters), tuple(conv), settled)


def detect_steady_state(traj: Trajectory, window: float, tol: float) -> Optional[np.ndarray]:
    """Mean state over the final ``window`` seconds, or ``None``.

    The trajectory counts as settled when every sample in that window lies
    within ``tol`` (max-norm) of the window mean.
    """
    t = traj.times
    if window > t[-1] - t[0] + 1e-12:
        raise InvalidParams("window longer than the trajectory")
    sel = t >= t[-1] - window - 1e-9 * max(1.0, abs(t[-1]))
    W = traj.states[sel]
    mean = W.mean(axis=0)
    if np.max(np.abs(W - mean)) <= tol:
        return mean
    return None


def write_mpc_json(result: ClosedLoopResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.summary(), fh, indent=2)
        fh.write("\n")
