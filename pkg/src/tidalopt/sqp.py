"""Sequential quadratic programming with a damped-BFGS Hessian.

Solves ``min f(x)`` subject to ``lower <= x <= upper`` and ``c(x) >= 0``.
Each iteration solves a convex QP model by a primal active-set method,
then backtracks on an l1 merit function. The structure follows the classic
SLSQP design: bounds are kept exactly, nonlinear inequalities enter the
merit function with adaptive penalty weights, and an inconsistent
linearisation is handled by a single relaxation variable.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import LineSearchFailed, QPInfeasible

log = logging.getLogger(__name__)

ARMIJO = 0.1
MAX_BACKTRACKS = 30
RESET_AFTER_SKIPS = 3


@dataclass
class QPSolution:
    x: np.ndarray
    multipliers: np.ndarray   # one per row of G, >= 0
    active: list
    iterations: int


def solve_qp(B, g, G, h, x0, tol: float = 1e-12, max_iter: int | None = None) -> QPSolution:
    """Minimise ``0.5 x'Bx + g'x`` subject to ``G x >= h`` from a feasible ``x0``.

    Primal active-set method for positive definite ``B``. The working set
    starts empty; blocking constraints are added one at a time and the one
    with the most negative multiplier is dropped when the step vanishes.
    """
    B = np.asarray(B, dtype=float)
    g = np.asarray(g, dtype=float)
    G = np.asarray(G, dtype=float).reshape(-1, len(g))
    h = np.asarray(h, dtype=float)
    x = np.array(x0, dtype=float)
    n, m = len(g), len(h)
    if m and np.min(G @ x - h) < -1e-8 * (1.0 + np.max(np.abs(h))):
        raise QPInfeasible("starting point violates the QP constraints",
                           int(np.argmin(G @ x - h)))
    row_norm = np.maximum(np.linalg.norm(G, axis=1), 1e-300) if m else np.zeros(0)
    working: list[int] = []
    lam = np.zeros(m)
    max_iter = max_iter or 20 * (n + m) + 50
    for it in range(max_iter):
        Gw = G[working]
        k = len(working)
        K = np.zeros((n + k, n + k))
        K[:n, :n] = B
        K[:n, n:] = -Gw.T
        K[n:, :n] = Gw
        rhs = np.concatenate([-(B @ x + g), np.zeros(k)])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        p, lw = sol[:n], sol[n:]
        if np.max(np.abs(p), initial=0.0) <= tol * (1.0 + np.max(np.abs(x))):
            lam[:] = 0.0
            lam[working] = lw
            if k == 0 or np.min(lw) >= -tol * (1.0 + np.max(np.abs(lw))):
                lam = np.maximum(lam, 0.0)
                return QPSolution(x, lam, list(working), it)
            working.pop(int(np.argmin(lw)))
            continue
        # ratio test over the constraints outside the working set
        Gp = G @ p
        alpha, block = 1.0, None
        slack = G @ x - h
        for i in np.flatnonzero(Gp < -1e-14 * row_norm * np.max(np.abs(p))):
            if i in working:
                continue
            a = max(slack[i], 0.0) / -Gp[i]
            if a < alpha:
                alpha, block = a, i
        x = x + alpha * p
        if block is not None:
            working.append(int(block))
    log.warning("QP active-set iteration limit reached")
    lam[:] = 0.0
    return QPSolution(x, lam, list(working), max_iter)


@dataclass
class SQPResult:
    x: np.ndarray
    fun: float
    multipliers: np.ndarray        # nonlinear inequality multipliers
    bound_multipliers: np.ndarray  # lower minus upper: g - A'lam - mu = 0 at a KKT point
    reason: str
    iterations: int
    n_feval: int
    n_geval: int
    history: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.reason.startswith("converged")


class _Counted:
    def __init__(self, fn):
        self.fn, self.calls = fn, 0

    def __call__(self, x):
        self.calls += 1
        return self.fn(x)


def _damped_bfgs(B, s, y):
    """Powell-damped BFGS update. Returns the new matrix and whether damping was needed."""
    Bs = B @ s
    sBs = float(s @ Bs)
    sy = float(s @ y)
    if sBs <= 0.0:
        return B, True
    damped = sy < 0.2 * sBs
    if damped:
        theta = 0.8 * sBs / (sBs - sy)
        y = theta * y + (1.0 - theta) * Bs
        sy = float(s @ y)
    B = B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy
    return 0.5 * (B + B.T), damped


def sqp_minimise(f, grad, x0, lower, upper, ineq=None, tol: float = 1e-6, max_iter: int = 100,
                 callback=None) -> SQPResult:
    """Minimise ``f`` over a box with optional inequalities ``c(x) >= 0``.

    Parameters
    ----------
    f, grad : callable
        Objective and its gradient.
    lower, upper : array_like
        Bounds, kept satisfied by every iterate.
    ineq : callable, optional
        Returns ``(c, A)`` with ``A`` the dense Jacobian of ``c``.
    tol : float
        Stop when ``|g'd| + sum |lam_i c_i|`` and the l1 constraint violation
        are both below ``tol``, or when an accepted step changes ``f`` by less
        than ``tol`` while feasible.
    callback : callable, optional
        Called with one dict per iteration (``iter``, ``f``, ``grad_inf_norm``,
        ``max_constraint_violation``, ``step_norm``).

    Raises
    ------
    LineSearchFailed
        No acceptable step even after resetting the Hessian; ``.result``
        holds the best point found.
    QPInfeasible
        The linearised constraints admit no feasible direction.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    n = len(x)
    f_c, g_c = _Counted(f), _Counted(grad)

    def constraints(z):
        if ineq is None:
            return np.zeros(0), np.zeros((0, n))
        c, A = ineq(z)
        return np.asarray(c, dtype=float), np.asarray(A, dtype=float).reshape(-1, n)

    fx, gx = f_c(x), g_c(x)
    cx, Ax = constraints(x)
    nc = len(cx)
    B = np.eye(n)
    mu = np.zeros(nc)
    skips = 0
    history: list = []
    lam = np.zeros(nc)
    mu_b = np.zeros(n)

    def violation(c):
        return float(np.sum(np.maximum(-c, 0.0)))

    def record(it, step):
        rec = {"iter": it, "f": float(fx), "grad_inf_norm": float(np.max(np.abs(gx), initial=0.0)),
               "max_constraint_violation": float(np.max(np.maximum(-cx, 0.0), initial=0.0)),
               "step_norm": float(step)}
        history.append(rec)
        if callback is not None:
            callback(dict(rec))
        return rec

    def result(reason, it):
        return SQPResult(x.copy(), float(fx), lam.copy(), mu_b.copy(), reason, it,
                         f_c.calls, g_c.calls, history)

    record(0, 0.0)
    retried = False
    it = 0
    while it < max_iter:
        d, lam, mu_b, zeta = _subproblem(B, gx, cx, Ax, lower - x, upper - x)
        kkt = abs(float(gx @ d)) + float(np.sum(np.abs(lam * cx)))
        if kkt <= tol and violation(cx) <= tol:
            return result("converged: KKT measure below tolerance", it)

        mu = np.maximum(np.abs(lam), 0.5 * (mu + np.abs(lam)))
        phi0 = fx + float(mu @ np.maximum(-cx, 0.0))
        dphi = float(gx @ d) - (1.0 - zeta) * float(mu @ np.maximum(-cx, 0.0))
        if dphi >= 0.0 and not retried and np.any(B != np.eye(n)):
            B, retried = np.eye(n), True
            continue
        alpha, accepted = 1.0, False
        for _ in range(MAX_BACKTRACKS):
            xt = np.clip(x + alpha * d, lower, upper)
            ft = f_c(xt)
            ct, _ = constraints(xt)
            phit = ft + float(mu @ np.maximum(-ct, 0.0))
            if np.isfinite(phit) and phit <= phi0 + ARMIJO * alpha * min(dphi, 0.0):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if not retried:
                log.info("line search failed; resetting the Hessian approximation")
                B, retried = np.eye(n), True
                continue
            raise LineSearchFailed("no acceptable step along the SQP direction", result("line search failed", it))
        retried = False
        it += 1

        s = xt - x
        gt = g_c(xt)
        ct, At = constraints(xt)
        y = (gt - At.T @ lam) - (gx - Ax.T @ lam)
        f_prev = fx
        x, fx, gx, cx, Ax = xt, ft, gt, ct, At
        B, damped = _damped_bfgs(B, s, y)
        skips = skips + 1 if damped else 0
        if skips >= RESET_AFTER_SKIPS:
            sy = float(s @ y)
            B = np.eye(n) * (float(y @ y) / sy if sy > 0 else 1.0)
            skips = 0
        record(it, np.linalg.norm(s))
        if abs(fx - f_prev) < tol and violation(cx) <= tol and np.linalg.norm(s) > 0:
            return result("converged: objective change below tolerance", it)
    return result("max_iter reached", it)


def _subproblem(B, g, c, A, dlo, dhi):
    """QP model in the step ``d``; relaxes violated linearisations if needed.

    Returns ``(d, lam, mu_bounds, zeta)`` where ``zeta`` in ``[0, 1]`` is the
    fraction of the constraint violation the step is allowed to keep.
    """
    n, nc = len(g), len(c)
    viol = np.maximum(-c, 0.0)
    relax = bool(np.any(viol > 0.0))
    nv = n + 1 if relax else n
    eye = np.eye(n)
    rows = [np.hstack([A, viol[:, None]]) if relax else A,
            np.hstack([eye, np.zeros((n, 1))]) if relax else eye,
            np.hstack([-eye, np.zeros((n, 1))]) if relax else -eye]
    rhs = [-c, dlo, -dhi]
    Bq, gq = B, g
    if relax:
        # penalty large against the model's own scale so zeta is driven to zero when possible
        rho = 1e3 * max(1.0, np.max(np.abs(g)), np.max(np.abs(B)))
        rows += [np.eye(1, nv, n), -np.eye(1, nv, n)]
        rhs += [np.zeros(1), -np.ones(1)]
        Bq = np.zeros((nv, nv))
        Bq[:n, :n] = B
        Bq[n, n] = rho
        gq = np.append(g, rho)
    G = np.vstack(rows)
    h = np.concatenate(rhs)
    start = np.zeros(nv)
    if relax:
        start[n] = 1.0
    qp = solve_qp(Bq, gq, G, h, start)
    d = qp.x[:n]
    zeta = float(qp.x[n]) if relax else 0.0
    if relax and zeta > 1.0 - 1e-8 and np.max(np.abs(d), initial=0.0) < 1e-12:
        worst = int(np.argmax(viol))
        raise QPInfeasible(f"linearised constraint {worst} cannot be satisfied (value {c[worst]:.3e})", worst)
    lam = qp.multipliers[:nc]
    mu_b = qp.multipliers[nc:nc + n] - qp.multipliers[nc + n:nc + 2 * n]
    return d, lam, mu_b, zeta
