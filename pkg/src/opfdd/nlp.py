"""
Small dense smooth NLP engine.

Bound constraints are handled exactly by a projected Newton method; general
equalities ``h(x) = 0`` and inequalities ``g(x) <= 0`` are moved into a
Powell-Hestenes-Rockafellar augmented Lagrangian whose multipliers are
updated in an outer loop. Only local optimality is sought, and the answer
depends on the starting point by design.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

CONVERGED = "converged"
MAX_ITER = "max_iter"
UNBOUNDED = "unbounded_below"

UNBOUNDED_LEVEL = -1e12
MULTIPLIER_CAP = 1e12
PENALTY_CAP = 1e12
INITIAL_PENALTY = 10.0
PENALTY_GROWTH = 10.0


@dataclass
class NlpProblem:
    """``min f(x)`` s.t. ``lower <= x <= upper``, ``ineq(x) <= 0``, ``eq(x) = 0``.

    ``objective`` returns ``(f, grad)``; ``ineq`` and ``eq`` return
    ``(values, jacobian)`` with the Jacobian shaped ``(m, n)``.
    """

    n: int
    objective: Callable
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    ineq: Callable | None = None
    eq: Callable | None = None

    def bounds(self):
        lo = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        hi = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        return lo, hi


@dataclass
class NlpResult:
    x: np.ndarray
    f: float
    kkt_residual: float
    status: str
    iterations: int = 0
    inner_iterations: int = 0
    violation: float = 0.0
    lam_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam_ineq: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def converged(self):
        return self.status == CONVERGED


def projected_gradient(x, g, lo, hi):
    return x - np.clip(x - g, lo, hi)


def _hessian(fun, x, g, lo, hi):
    """Symmetrised forward-difference Hessian of ``fun`` from its gradient.

    Steps go inward when a bound is closer than the step length.
    """
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        h = 1e-7 * max(1.0, abs(x[i]))
        if x[i] + h > hi[i]:
            h = -h
        xh = x.copy()
        xh[i] += h
        H[i] = (fun(xh)[1] - g) / h
    return 0.5 * (H + H.T)


def _newton_direction(H, g):
    """Solve ``H d = -g`` after flooring the eigenvalues of ``H``."""
    w, V = np.linalg.eigh(H)
    floor = 1e-8 * max(1.0, np.abs(w).max(initial=0.0))
    w = np.maximum(np.abs(w), floor)
    return -V @ ((V.T @ g) / w)


def minimize_box(fun, x, lo, hi, tol, max_iter=500):
    """Projected Newton method for ``min fun(x)`` over a box.

    The Hessian of the free variables is approximated by differencing the
    gradient and made positive definite by flipping and flooring its
    eigenvalues; variables held at a bound by the gradient take a scaled
    steepest-descent step. Steps follow the projection arc with an Armijo
    test.

    Returns ``(x, f, grad, pg_norm, iterations)``; ``pg_norm`` is the
    infinity norm of the projected gradient at the returned point.
    """
    x = np.clip(np.asarray(x, float), lo, hi)
    f, g = fun(x)
    g = np.asarray(g, float)
    n = x.size
    stalls = 0
    pg = np.abs(projected_gradient(x, g, lo, hi)).max(initial=0.0)
    it = 0
    while it < max_iter and pg >= tol:
        it += 1
        eps = min(1e-6, pg)
        binding = ((x <= lo + eps) & (g > 0)) | ((x >= hi - eps) & (g < 0))
        free = ~binding
        H = _hessian(fun, x, g, lo, hi)
        d = np.zeros(n)
        if free.any():
            d[free] = _newton_direction(H[np.ix_(free, free)], g[free])
        if binding.any():
            diag = np.maximum(np.abs(np.diag(H))[binding], 1e-8)
            d[binding] = -g[binding] / diag
        t = 1.0
        accepted = False
        for _ in range(60):
            xn = np.clip(x + t * d, lo, hi)
            fn, gn = fun(xn)
            if fn <= f + 1e-4 * (g @ (xn - x)):
                accepted = True
                break
            if fn <= f + 1e-13 * max(1.0, abs(f)):
                # Decrease is below rounding level; accept on gradient progress.
                pgn = np.abs(projected_gradient(xn, np.asarray(gn, float), lo, hi)).max(initial=0.0)
                if pgn < pg:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            break
        gn = np.asarray(gn, float)
        if abs(f - fn) <= 1e-15 * max(1.0, abs(f)):
            stalls += 1
        else:
            stalls = 0
        x, f, g = xn, fn, gn
        pg = np.abs(projected_gradient(x, g, lo, hi)).max(initial=0.0)
        if f < UNBOUNDED_LEVEL or stalls >= 5:
            break
    return x, f, g, pg, it


def solve(p: NlpProblem, x0, tol=1e-8, max_iter=200, inner_max_iter=500) -> NlpResult:
    """Find a KKT point of ``p`` near ``x0``.

    Convergence means the projected gradient of the Lagrangian, the constraint
    violation and the complementarity residual are all below ``tol``.
    Running out of iterations is reported through ``status``, not raised.
    """
    lo, hi = p.bounds()
    x = np.clip(np.asarray(x0, float), lo, hi)
    if not np.all(np.isfinite(x)):
        raise ValueError("starting point must be finite")

    if p.eq is None and p.ineq is None:
        x, f, _, pg, it = minimize_box(p.objective, x, lo, hi, tol, inner_max_iter)
        status = UNBOUNDED if f < UNBOUNDED_LEVEL else (CONVERGED if pg < tol else MAX_ITER)
        return NlpResult(x, f, pg, status, iterations=1, inner_iterations=it)

    m_eq = p.eq(x)[0].size if p.eq is not None else 0
    m_in = p.ineq(x)[0].size if p.ineq is not None else 0
    y = np.zeros(m_eq)
    z = np.zeros(m_in)
    mu = INITIAL_PENALTY
    inner_tol = max(tol, 1e-2 * np.sqrt(tol))
    prev_viol = np.inf
    total_inner = 0
    status = MAX_ITER
    kkt = np.inf
    viol = np.inf
    best_kkt = np.inf
    stuck = 0

    def merit(xv):
        f, grad = p.objective(xv)
        grad = np.array(grad, float)
        if m_eq:
            h, jh = p.eq(xv)
            f += y @ h + 0.5 * mu * (h @ h)
            grad += jh.T @ (y + mu * h)
        if m_in:
            gv, jg = p.ineq(xv)
            s = np.maximum(0.0, z + mu * gv)
            f += (s @ s - z @ z) / (2.0 * mu)
            grad += jg.T @ s
        return f, grad

    def violation(xv):
        out = 0.0
        if m_eq:
            out = max(out, np.abs(p.eq(xv)[0]).max())
        if m_in:
            out = max(out, p.ineq(xv)[0].max())
        return out

    k = 0
    for k in range(1, max_iter + 1):
        xn, fm, _, _, it = minimize_box(merit, x, lo, hi, inner_tol, inner_max_iter)
        total_inner += it
        if fm < UNBOUNDED_LEVEL and violation(xn) > tol and mu < PENALTY_CAP:
            # The penalty is too weak to bound the merit; retry from the last
            # accepted point with a stiffer one.
            mu = min(PENALTY_CAP, mu * PENALTY_GROWTH)
            continue
        x = xn
        f, grad = p.objective(x)
        grad = np.array(grad, float)
        viol = 0.0
        compl = 0.0
        if m_eq:
            h, jh = p.eq(x)
            y = np.clip(y + mu * h, -MULTIPLIER_CAP, MULTIPLIER_CAP)
            grad += jh.T @ y
            viol = max(viol, np.abs(h).max())
        if m_in:
            gv, jg = p.ineq(x)
            z = np.clip(z + mu * gv, 0.0, MULTIPLIER_CAP)
            grad += jg.T @ z
            viol = max(viol, max(0.0, gv.max()))
            compl = np.abs(np.minimum(-gv, z)).max()
        stat = np.abs(projected_gradient(x, grad, lo, hi)).max(initial=0.0)
        kkt = max(stat, viol, compl)
        if f < UNBOUNDED_LEVEL:
            status = UNBOUNDED
            break
        if kkt < tol:
            status = CONVERGED
            break
        if kkt >= best_kkt:
            stuck += 1
            if stuck >= 10:
                break
        else:
            best_kkt, stuck = kkt, 0
        if viol > 0.25 * prev_viol:
            mu = min(PENALTY_CAP, mu * PENALTY_GROWTH)
        prev_viol = viol
        inner_tol = max(tol, 0.1 * inner_tol)

    f = float(p.objective(x)[0])
    return NlpResult(x, f, float(kkt), status, iterations=k, inner_iterations=total_inner,
                     violation=float(viol), lam_eq=y, lam_ineq=z)
