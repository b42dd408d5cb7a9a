"""Limited-memory quasi-Newton and Adam minimizers over flat vectors.

Both calibration and network training reduce to minimizing a smooth scalar
objective f(x) with an analytic gradient over a packed float64 vector.
The quasi-Newton path is the default: two-loop recursion over a short
(s, y) history with a backtracking line search enforcing the Armijo
sufficient-decrease condition, so the trace of accepted values is
monotone. Optional box bounds are handled by projecting trial points.

Everything here is pure and deterministic for a given objective.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool
    message: str
    loss_trace: list[float] = field(default_factory=list)


def _project(x: np.ndarray, bounds) -> np.ndarray:
    if bounds is None:
        return x
    lo, hi = bounds
    return np.clip(x, lo, hi)


def minimize_lbfgs(
    fun: Objective,
    x0: np.ndarray,
    max_iterations: int = 200,
    history_size: int = 10,
    convergence_tol: float = 1e-10,
    grad_tol: float = 1e-10,
    armijo_c1: float = 1e-4,
    backtrack_factor: float = 0.5,
    max_backtracks: int = 40,
    bounds=None,
    max_seconds: float | None = None,
) -> OptimizeResult:
    """Minimize fun from x0; returns the best accepted point.

    Convergence is declared when the relative loss decrease of an accepted
    step falls below convergence_tol or the gradient norm falls below
    grad_tol. A failed line search (including non-finite trial values,
    which just shrink the step) ends the run with the best point so far
    and converged=False. max_iterations = 0 returns x0 untouched.
    """
    deadline = None if max_seconds is None else time.monotonic() + max_seconds
    x = _project(np.array(x0, dtype=float), bounds)
    f, g = fun(x)
    if not np.isfinite(f):
        return OptimizeResult(x, f, 0, False, "non-finite objective at start", [f])
    trace = [f]
    history: deque[tuple[np.ndarray, np.ndarray, float]] = deque(maxlen=history_size)
    gamma = 1.0

    for it in range(max_iterations):
        if np.linalg.norm(g) < grad_tol:
            return OptimizeResult(x, f, it, True, "gradient norm below tolerance", trace)
        if deadline is not None and time.monotonic() > deadline:
            return OptimizeResult(x, f, it, False, "time budget exhausted", trace)

        d = _two_loop_direction(g, history, gamma)
        if np.dot(d, g) >= 0.0:  # not a descent direction; fall back to steepest descent
            history.clear()
            d = -g

        step = 1.0
        accepted = False
        dx = np.zeros_like(x)
        for _ in range(max_backtracks):
            x_try = _project(x + step * d, bounds)
            dx = x_try - x
            f_try, g_try = fun(x_try)
            if np.isfinite(f_try) and f_try <= f + armijo_c1 * np.dot(g, dx):
                accepted = True
                break
            step *= backtrack_factor
        if not accepted or not np.any(dx):
            return OptimizeResult(x, f, it, False, "line search failed", trace)

        y = g_try - g
        sy = float(np.dot(dx, y))
        if sy > 1e-12:
            history.append((dx, y, 1.0 / sy))
            gamma = sy / float(np.dot(y, y))

        rel_decrease = (f - f_try) / max(abs(f), 1.0)
        x, f, g = x_try, f_try, g_try
        trace.append(f)
        if rel_decrease < convergence_tol:
            return OptimizeResult(x, f, it + 1, True, "relative decrease below tolerance", trace)

    return OptimizeResult(x, f, max_iterations, max_iterations == 0, "iteration limit", trace)


def _two_loop_direction(g, history, gamma) -> np.ndarray:
    """Standard L-BFGS two-loop recursion, H0 = gamma * I."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * np.dot(s, q)
        q -= a * y
        alphas.append(a)
    q *= gamma
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def minimize_adam(
    fun: Objective,
    x0: np.ndarray,
    max_iterations: int = 1000,
    learning_rate: float = 0.01,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    convergence_tol: float = 0.0,
    bounds=None,
    max_seconds: float | None = None,
) -> OptimizeResult:
    """Plain full-batch Adam; trace is not guaranteed monotone."""
    deadline = None if max_seconds is None else time.monotonic() + max_seconds
    x = _project(np.array(x0, dtype=float), bounds)
    f, g = fun(x)
    trace = [f]
    best_x, best_f = x.copy(), f
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for it in range(1, max_iterations + 1):
        if deadline is not None and time.monotonic() > deadline:
            return OptimizeResult(best_x, best_f, it - 1, False, "time budget exhausted", trace)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**it)
        v_hat = v / (1.0 - beta2**it)
        x = _project(x - learning_rate * m_hat / (np.sqrt(v_hat) + eps), bounds)
        f_prev = f
        f, g = fun(x)
        if not np.isfinite(f):
            return OptimizeResult(best_x, best_f, it, False, "non-finite objective", trace)
        trace.append(f)
        if f < best_f:
            best_x, best_f = x.copy(), f
        if convergence_tol > 0.0 and abs(f_prev - f) / max(abs(f_prev), 1.0) < convergence_tol:
            return OptimizeResult(best_x, best_f, it, True, "relative decrease below tolerance", trace)
    return OptimizeResult(best_x, best_f, max_iterations, max_iterations == 0, "iteration limit", trace)
