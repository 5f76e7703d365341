"""Dense bounded-variable primal simplex.

Pricing is Dantzig's (largest reduced-cost violation, lowest index on ties);
after ``degenerate_run`` consecutive zero-step pivots it switches to Bland's
smallest-index rule until the objective moves again, which rules out cycling.

Solves ``min c.x  s.t.  A x = b,  lo <= x <= hi`` for small row counts and
many columns. The basis matrix is refactorized every iteration, which is
cheap at the sizes used here (tens of rows) and keeps the iterates clean.
Phase 1 adds one artificial per row; in phase 2 artificials are pinned to
zero through their upper bound, so redundant rows need no special handling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidArgument, LPFailure

__all__ = ["LPResult", "simplex"]

_AT_LOWER, _AT_UPPER, _BASIC = 0, 1, 2


@dataclass(frozen=True)
class LPResult:
    """Optimal vertex with its duals and residual diagnostics."""

    value: float
    x: np.ndarray
    duals: np.ndarray
    reduced_costs: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    complementarity: float

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "iterations": self.iterations,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "complementarity": self.complementarity,
        }


class _Tableau:
    def __init__(self, A, b, lo, hi, basis, state, x):
        self.A, self.b, self.lo, self.hi = A, b, lo, hi
        self.basis, self.state, self.x = basis, state, x
        self.iterations = 0

    def run(self, c, max_iter, tol, pivot_tol=1e-7, feas_tol=1e-9, degenerate_run=50):
        A, lo, hi = self.A, self.lo, self.hi
        stalled = 0
        while True:
            B = A[:, self.basis]
            lu = scipy.linalg.lu_factor(B)
            nonbasic = self.state != _BASIC
            self.x[self.basis] = scipy.linalg.lu_solve(lu, self.b - A[:, nonbasic] @ self.x[nonbasic])
            y = scipy.linalg.lu_solve(lu, c[self.basis], trans=1)
            d = c - A.T @ y
            at_lo = (self.state == _AT_LOWER) & (d < -tol) & (hi > lo)
            at_hi = (self.state == _AT_UPPER) & (d > tol) & (hi > lo)
            eligible = np.flatnonzero(at_lo | at_hi)
            if eligible.size == 0:
                return y, d
            if self.iterations >= max_iter:
                raise LPFailure(f"simplex iteration limit {max_iter} reached (cycling guard)")
            self.iterations += 1
            if stalled >= degenerate_run:
                j = int(eligible[0])
            else:
                j = int(eligible[np.argmax(np.abs(d[eligible]))])
            direction = 1.0 if self.state[j] == _AT_LOWER else -1.0
            alpha = scipy.linalg.lu_solve(lu, A[:, j])
            # basic variables move by -direction * theta * alpha
            delta = -direction * alpha
            theta, leave = self._ratio_test(j, delta, pivot_tol, feas_tol, bland=stalled >= degenerate_run)
            if not np.isfinite(theta):
                raise LPFailure("problem is unbounded")
            stalled = stalled + 1 if theta <= 1e-12 else 0
            self.x[j] += direction * theta
            if leave < 0:
                self.state[j] = _AT_UPPER if direction > 0 else _AT_LOWER
                self.x[j] = hi[j] if direction > 0 else lo[j]
                continue
            k = self.basis[leave]
            self.x[k] = lo[k] if delta[leave] < 0 else hi[k]
            self.state[k] = _AT_LOWER if delta[leave] < 0 else _AT_UPPER
            self.basis[leave] = j
            self.state[j] = _BASIC

    def _ratio_test(self, j, delta, pivot_tol, feas_tol, bland):
        """Two-pass (Harris) ratio test; Bland mode takes the smallest index among ties."""
        lo, hi = self.lo[self.basis], self.hi[self.basis]
        xb = self.x[self.basis]
        piv = pivot_tol * max(1.0, float(np.abs(delta).max(initial=0.0)))
        dec, inc = delta < -piv, (delta > piv) & np.isfinite(hi)
        room = np.full(delta.size, np.inf)
        room[dec] = (xb[dec] - lo[dec] + feas_tol) / -delta[dec]
        room[inc] = (hi[inc] - xb[inc] + feas_tol) / delta[inc]
        bound = self.hi[j] - self.lo[j]
        relaxed = float(room.min(initial=np.inf))
        if bound <= relaxed:
            return bound, -1
        exact = np.full(delta.size, np.inf)
        exact[dec] = np.maximum(xb[dec] - lo[dec], 0.0) / -delta[dec]
        exact[inc] = np.maximum(hi[inc] - xb[inc], 0.0) / delta[inc]
        cand = np.flatnonzero(exact <= relaxed)
        if bland:
            leave = int(cand[np.argmin(self.basis[cand])])
        else:
            leave = int(cand[np.argmax(np.abs(delta[cand]))])
        return float(exact[leave]), leave


def simplex(c, A_eq, b_eq, upper=None, max_iter: int = 100_000, tol: float = 1e-10) -> LPResult:
    """Minimize ``c.x`` subject to ``A_eq x = b_eq`` and ``0 <= x <= upper``.

    Raises
    ------
    LPFailure
        If the problem is infeasible or unbounded, or the iteration limit
        (the cycling guard) is hit.
    """
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A_eq, dtype=float))
    b = np.asarray(b_eq, dtype=float).reshape(-1)
    m, n = A.shape
    if c.shape != (n,) or b.shape != (m,):
        raise InvalidArgument("inconsistent LP dimensions")
    if n == 0:
        raise InvalidArgument("LP has no variables")
    hi = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float).reshape(n)
    if np.any(hi < 0):
        raise InvalidArgument("upper bounds must be nonnegative")

    sign = np.where(b < 0, -1.0, 1.0)
    Aa = np.hstack([A * sign[:, None], np.eye(m)])
    ba = b * sign
    lo_all = np.zeros(n + m)
    hi_all = np.concatenate([hi, np.full(m, np.inf)])
    x = np.concatenate([np.zeros(n), ba])
    state = np.concatenate([np.full(n, _AT_LOWER), np.full(m, _BASIC)])
    tab = _Tableau(Aa, ba, lo_all, hi_all, np.arange(n, n + m), state, x)

    scale = 1.0 + np.abs(ba).max(initial=0.0)
    tab.run(np.concatenate([np.zeros(n), np.ones(m)]), max_iter, tol)
    infeas = tab.x[n:].sum()
    if infeas > 1e-8 * scale:
        raise LPFailure(f"problem is infeasible (phase-1 residual {infeas:.3g})")
    tab.x[n:] = 0.0
    tab.hi[n:] = 0.0
    phase1 = tab.iterations
    y, d = tab.run(np.concatenate([c, np.zeros(m)]), max_iter + phase1, tol)

    xs = np.clip(tab.x[:n], 0.0, hi)
    duals = y * sign
    red = c - A.T @ duals
    primal = float(np.abs(A @ xs - b).max(initial=0.0))
    dual = float(np.maximum(-red, 0.0)[xs < hi - 1e-12].max(initial=0.0))
    slack_hi = np.where(np.isfinite(hi), hi - xs, 0.0)
    comp = float(np.max(np.maximum(red, 0.0) * xs + np.maximum(-red, 0.0) * slack_hi, initial=0.0))
    return LPResult(float(c @ xs), xs, duals, red, tab.iterations, primal, dual, comp)
