"""Box-constrained quasi-Newton solver and an augmented-Lagrangian wrapper.

Both solvers work on flat float vectors.  Objective callbacks return
``(value, gradient)``; any :class:`~riphs.errors.RiphsError` or non-finite
value raised at a trial point is treated as an infinite cost so the line
search simply backs off.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NonFinite, RiphsError

__all__ = ["BoxResult", "minimize_box", "ALResult", "augmented_lagrangian", "projected_gradient_norm"]


@dataclass
class BoxResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    pg_norm: float
    iterations: int
    converged: bool
    message: str
    history: list = field(default_factory=list)
    n_evals: int = 0


def projected_gradient_norm(x, g, lo, hi) -> float:
    return float(np.max(np.abs(np.clip(x - g, lo, hi) - x), initial=0.0))


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def minimize_box(
    fun: Callable[[np.ndarray], tuple],
    x0,
    lo,
    hi,
    *,
    memory: int = 10,
    g_tol: float = 1e-6,
    f_tol: float = 1e-10,
    f_window: int = 5,
    max_iter: int = 1000,
    c1: float = 1e-4,
    max_backtracks: int = 60,
    restart_on_active_change: bool = True,
    callback: Optional[Callable] = None,
) -> BoxResult:
    """Projected-gradient L-BFGS with Armijo backtracking on the projection arc.

    Curvature pairs act only on the free variables (those not held at a
    bound by an outward-pointing gradient); the memory is cleared when the
    free set changes.  Converges when ``||P(x - g) - x||_inf <= g_tol (1 +
    |f|)`` or when the relative decrease over ``f_window`` iterations drops
    below ``f_tol``.  Accepted iterates never increase the objective.
    """
    lo = np.broadcast_to(np.asarray(lo, dtype=float), np.shape(x0))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), np.shape(x0))
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    n_evals = 0

    def evaluate(z):
        nonlocal n_evals
        n_evals += 1
        try:
            f, g = fun(z)
        except (RiphsError, FloatingPointError, OverflowError):
            return np.inf, None
        f = float(f)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return np.inf, None
        return f, np.asarray(g, dtype=float)

    f, g = evaluate(x)
    if g is None:
        raise NonFinite("objective is not finite at the starting point")
    history = [f]
    pairs: deque = deque(maxlen=memory)
    prev_free = None
    message = "maximum iterations reached"
    converged = False
    it = 0
    pgn = projected_gradient_norm(x, g, lo, hi)

    for it in range(1, max_iter + 1):
        if pgn <= g_tol * (1.0 + abs(f)):
            converged, message = True, "projected gradient below tolerance"
            it -= 1
            break
        binding = ((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0))
        free = ~binding
        if prev_free is not None and restart_on_active_change and not np.array_equal(free, prev_free):
            pairs.clear()
        prev_free = free

        accepted = False
        for attempt in range(2):
            if pairs and attempt == 0:
                d = np.zeros_like(x)
                d[free] = -_two_loop(g[free], [(s[free], y[free], 1.0 / (s[free] @ y[free])) for s, y, _ in pairs
                                               if s[free] @ y[free] > 0])
                if not g @ d < 0:
                    continue
                t = 1.0
            else:
                pairs.clear()
                d = np.where(free, -g, 0.0)
                t = min(1.0, 1.0 / max(np.max(np.abs(d)), 1e-300))
            for _ in range(max_backtracks):
                x_new = np.clip(x + t * d, lo, hi)
                step = x_new - x
                decrease = g @ step
                if not np.any(step):
                    break
                f_new, g_new = evaluate(x_new)
                if f_new <= f + c1 * decrease and f_new <= f:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
        if not accepted:
            converged = pgn <= 1e3 * g_tol * (1.0 + abs(f))
            message = "line search failed"
            it -= 1
            break

        s, yv = x_new - x, g_new - g
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            pairs.append((s, yv, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        history.append(f)
        pgn = projected_gradient_norm(x, g, lo, hi)
        if callback is not None:
            callback(x, f)
        if len(history) > f_window:
            ref = history[-1 - f_window]
            if (ref - f) <= f_tol * max(1.0, abs(f)):
                converged, message = True, "relative cost decrease below tolerance"
                break

    return BoxResult(x, f, g, pgn, it, converged, message, history, n_evals)


@dataclass
class ALResult:
    x: np.ndarray
    fun: float
    constraint_norm: float
    multipliers: np.ndarray
    penalty: float
    outer_iterations: int
    inner_iterations: int
    converged: bool


def augmented_lagrangian(
    objective: Callable[[np.ndarray], tuple],
    constraint: Callable[[np.ndarray], tuple],
    x0,
    lo,
    hi,
    *,
    c_tol: float = 1e-8,
    penalty: float = 10.0,
    growth: float = 10.0,
    penalty_cap: float = 1e8,
    max_outer: int = 40,
    inner_options: Optional[dict] = None,
) -> ALResult:
    """Minimise ``F(x)`` s.t. ``c(x) = 0`` and ``lo <= x <= hi``.

    ``objective`` returns ``(F, dF)``; ``constraint`` returns ``(c, dc)``
    with ``dc`` the ``p x d`` Jacobian.  First-order multiplier updates; the
    penalty grows by ``growth`` whenever the constraint violation fails to
    drop by a factor of four, capped at ``penalty_cap``.
    """
    opts = {"g_tol": 1e-10, "f_tol": 1e-14, "max_iter": 2000}
    opts.update(inner_options or {})
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    c, _ = constraint(x)
    lam = np.zeros_like(np.asarray(c, dtype=float))
    rho = penalty
    c_norm_prev = np.inf
    inner_total = 0
    res = None
    outer = 0

    for outer in range(1, max_outer + 1):

        def merit(z, lam=lam, rho=rho):
            fv, fg = objective(z)
            cv, cj = constraint(z)
            w = lam + rho * cv
            return fv + lam @ cv + 0.5 * rho * (cv @ cv), fg + cj.T @ w

        res = minimize_box(merit, x, lo, hi, **opts)
        inner_total += res.iterations
        x = res.x
        c, _ = constraint(x)
        c_norm = float(np.max(np.abs(c)))
        if c_norm <= c_tol:
            break
        lam = lam + rho * c
        if c_norm > 0.25 * c_norm_prev:
            rho = min(rho * growth, penalty_cap)
        c_norm_prev = c_norm

    fv, _ = objective(x)
    c, _ = constraint(x)
    c_norm = float(np.max(np.abs(c)))
    return ALResult(x, float(fv), c_norm, lam, rho, outer, inner_total, c_norm <= c_tol)
