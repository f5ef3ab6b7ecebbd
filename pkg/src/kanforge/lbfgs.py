"""Limited-memory BFGS with a strong-Wolfe line search.

Works on flat float vectors through a ``fun(x) -> (f, g)`` callable.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError

log = logging.getLogger(__name__)


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    reason: str
    history: list = field(default_factory=list)  # (iteration, f, |g|_inf)


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating (a, fa, da), (b, fb, db), or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


class _LineSearchFailed(Exception):
    pass


def strong_wolfe(phi, f0, d0, alpha1, c1=1e-4, c2=0.9, max_iter=20):
    """Find a step satisfying the strong Wolfe conditions.

    ``phi(alpha)`` returns ``(f, g, dphi)``. Non-finite trial values halve the
    step toward the last good point. Returns ``(alpha, f, g)`` or raises
    :class:`_LineSearchFailed`.
    """
    a_prev, f_prev, d_prev = 0.0, f0, d0
    alpha = alpha1
    evals = 0
    first = True
    while evals < max_iter:
        f, g, d = phi(alpha)
        evals += 1
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            alpha = a_prev + 0.5 * (alpha - a_prev)
            continue
        if f > f0 + c1 * alpha * d0 or (not first and f >= f_prev):
            return _zoom(phi, f0, d0, a_prev, f_prev, d_prev, alpha, f, d, c1, c2, max_iter - evals)
        if abs(d) <= -c2 * d0:
            return alpha, f, g
        if d >= 0:
            return _zoom(phi, f0, d0, alpha, f, d, a_prev, f_prev, d_prev, c1, c2, max_iter - evals)
        a_prev, f_prev, d_prev = alpha, f, d
        first = False
        alpha = 2.0 * alpha
    raise _LineSearchFailed("bracketing did not finish")


def _zoom(phi, f0, d0, lo, f_lo, d_lo, hi, f_hi, d_hi, c1, c2, budget):
    for _ in range(max(budget, 0)):
        width = abs(hi - lo)
        if width < 1e-16 * max(1.0, abs(lo)):
            break
        trial = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
        left, right = min(lo, hi), max(lo, hi)
        if trial is None or not np.isfinite(trial) or not (left + 0.1 * width <= trial <= right - 0.1 * width):
            trial = 0.5 * (lo + hi)
        f, g, d = phi(trial)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            # stand-in finite endpoint so the cubic model stays defined
            hi, f_hi, d_hi = trial, f_lo + abs(d_lo) * width + 1.0, 0.0
            continue
        if f > f0 + c1 * trial * d0 or f >= f_lo:
            hi, f_hi, d_hi = trial, f, d
        else:
            if abs(d) <= -c2 * d0:
                return trial, f, g
            if d * (hi - lo) >= 0:
                hi, f_hi, d_hi = lo, f_lo, d_lo
            lo, f_lo, d_lo = trial, f, d
    raise _LineSearchFailed("zoom did not satisfy the strong Wolfe conditions")


def minimize(fun, x0, history=10, max_iters=200, grad_tol=1e-7, c1=1e-4, c2=0.9,
             max_ls=20, callback=None) -> LbfgsResult:
    """Minimize ``fun`` starting at ``x0``.

    Stops when ``max|g| <= grad_tol``, after ``max_iters`` accepted steps, or
    when the line search fails twice in a row (once with the curvature
    history reset to steepest descent).
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise TrainingError(f"non-finite objective at iteration 0 (f={f})")
    S, Y = deque(maxlen=history), deque(maxlen=history)
    hist = []
    it = 0
    reason = "max_iters"
    while True:
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= grad_tol:
            reason = "grad_tol"
            break
        if it >= max_iters:
            break
        d = _two_loop(g, S, Y)
        if d @ g >= 0:
            S.clear(); Y.clear()
            d = -g
        alpha1 = min(1.0, 1.0 / np.sum(np.abs(g))) if not S else 1.0

        def phi(a):
            fa, ga = fun(x + a * d)
            return fa, ga, float(ga @ d) if np.all(np.isfinite(ga)) else np.nan

        try:
            alpha, f_new, g_new = strong_wolfe(phi, f, float(g @ d), alpha1, c1, c2, max_ls)
        except _LineSearchFailed:
            if not S:
                reason = "line_search"
                break
            log.debug("line search failed at iteration %d; resetting history", it)
            S.clear(); Y.clear()
            continue
        s = alpha * d
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(y @ y):
            S.append(s); Y.append(y)
        x = x + s
        f, g = f_new, g_new
        it += 1
        hist.append((it, f, float(np.max(np.abs(g)))))
        if callback is not None:
            callback(it, x, f, g)
    return LbfgsResult(x, float(f), g, it, reason, hist)


def _two_loop(g, S, Y):
    q = -g.copy()
    if not S:
        return q
    rhos = [1.0 / float(y @ s) for s, y in zip(S, Y)]
    alphas = []
    for s, y, rho in zip(reversed(S), reversed(Y), reversed(rhos)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y = S[-1], Y[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(zip(S, Y, rhos), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q
