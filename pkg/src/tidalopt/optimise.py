"""Reduced power functional, layout constraints and the optimisation driver."""
from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .adjoint import compute_gradient, solve_adjoint_steady, solve_adjoint_unsteady
from .errors import EvaluationFailed, ShapeMismatch, TidalOptError
from .power import power_steady, power_unsteady
from .sqp import SQPResult, sqp_minimise
from .swe import ShallowWater
from .turbine import FrictionField, Mode, TurbineFarm

log = logging.getLogger(__name__)


@dataclass
class ConstraintSpec:
    lower: np.ndarray
    upper: np.ndarray
    d_min: float = 0.0
    feasibility_tol: float = 1e-6

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape or np.any(self.lower > self.upper):
            raise ValueError("need lower <= upper componentwise")
        if self.d_min < 0:
            raise ValueError("d_min must be non-negative")

    @classmethod
    def for_farm(cls, farm: TurbineFarm, d_min: float = 0.0, k_max: float = 21.0,
                 feasibility_tol: float = 1e-6) -> "ConstraintSpec":
        """Keep turbine centres inside the farm's site and ``0 <= K <= k_max``."""
        site = farm.site
        if site is None:
            raise ValueError("farm has no site rectangle to bound positions with")
        n = farm.num_turbines
        lo = np.tile([site.xmin, site.ymin], n)
        hi = np.tile([site.xmax, site.ymax], n)
        if farm.mode is Mode.POSITIONS_AND_FRICTIONS:
            lo = np.concatenate([np.zeros(n), lo])
            hi = np.concatenate([np.full(n, k_max), hi])
        return cls(lo, hi, d_min, feasibility_tol)


def distance_constraints(m, n_turbines: int, mode, d_min: float):
    """Pairwise separation constraints ``|p_i - p_j|^2 - d_min^2 >= 0``.

    Returns the ``N(N-1)/2`` values (pairs ``i < j`` in row-major order) and
    their sparse Jacobian with respect to ``m``.
    """
    m = np.asarray(m, dtype=float)
    offset = n_turbines if Mode(mode) is Mode.POSITIONS_AND_FRICTIONS else 0
    p = m[offset:offset + 2 * n_turbines].reshape(n_turbines, 2)
    i, j = np.triu_indices(n_turbines, k=1)
    d = p[i] - p[j]
    values = np.sum(d * d, axis=1) - d_min ** 2
    rows = np.repeat(np.arange(len(i)), 4)
    cols = np.column_stack([offset + 2 * i, offset + 2 * i + 1, offset + 2 * j, offset + 2 * j + 1]).ravel()
    data = np.column_stack([2 * d[:, 0], 2 * d[:, 1], -2 * d[:, 0], -2 * d[:, 1]]).ravel()
    jac = sp.csr_matrix((data, (rows, cols)), shape=(len(i), len(m)))
    return values, jac


class ReducedFunctional:
    """Power as a function of the design parameters alone.

    Each evaluation runs the forward model for the farm encoded by ``m``;
    gradients add one adjoint solve. The most recent forward solution and
    gradient are cached, so querying the same ``m`` twice costs nothing.
    """

    def __init__(self, problem: ShallowWater, farm: TurbineFarm, bounds: ConstraintSpec | None = None):
        self.problem = problem
        self.farm = farm
        self.bounds = bounds
        self.n_feval = 0
        self.n_geval = 0
        self.timings = {"forward": 0.0, "adjoint": 0.0}
        self._m = None
        self._forward = None
        self._grad = None

    @property
    def unsteady(self) -> bool:
        return self.problem.config.kappa == 1

    def _prepare(self, m):
        m = np.array(m, dtype=float)
        if m.shape != (self.farm.num_params,):
            raise ShapeMismatch(f"expected {self.farm.num_params} parameters, got {m.shape}")
        if self.bounds is not None:
            out = np.maximum(self.bounds.lower - m, m - self.bounds.upper)
            if np.any(out > 1e-12 * (1.0 + np.abs(m))):
                raise EvaluationFailed("parameters outside the bounds", m)
            m = np.clip(m, self.bounds.lower, self.bounds.upper)
        return m

    def forward(self, m):
        """Forward solve; returns ``(friction, solution, power)``."""
        m = self._prepare(m)
        if self._m is not None and np.array_equal(m, self._m):
            return self._forward
        farm = self.farm.with_params(m)
        sp_ = self.problem.spaces
        t0 = time.perf_counter()
        try:
            friction = FrictionField.build(farm, sp_)
            if self.unsteady:
                sol = self.problem.solve_unsteady(friction)
                J = power_unsteady(sol, friction, sp_, self.problem.config)
            else:
                sol = self.problem.solve_steady(friction)
                J = power_steady(sol, friction, sp_, self.problem.config)
        except TidalOptError as exc:
            raise EvaluationFailed(f"forward solve failed: {exc}", m) from exc
        self.timings["forward"] = time.perf_counter() - t0
        self.n_feval += 1
        self._m, self._forward, self._grad = m, (friction, sol, J), None
        return self._forward

    def value(self, m) -> float:
        return self.forward(m)[2].value

    def gradient(self, m) -> np.ndarray:
        friction, sol, _ = self.forward(m)
        if self._grad is not None:
            return self._grad.copy()
        t0 = time.perf_counter()
        try:
            if self.unsteady:
                adj = solve_adjoint_unsteady(sol, friction, self.problem)
                grad = compute_gradient(sol.states[1:], adj, friction, self.problem)
            else:
                adj = solve_adjoint_steady(sol, friction, self.problem)
                grad = compute_gradient(sol, adj, friction, self.problem)
        except TidalOptError as exc:
            raise EvaluationFailed(f"adjoint solve failed: {exc}", self._m) from exc
        self.timings["adjoint"] = time.perf_counter() - t0
        self.n_geval += 1
        self._grad = grad
        return grad.copy()

    def __call__(self, m):
        return self.value(m), self.gradient(m)


def compute_scale(gradient, radius: float, position_slice: slice | None = None) -> float:
    """Factor making the largest position component of the gradient ``10 * radius``."""
    g = np.asarray(gradient, dtype=float)
    if position_slice is not None:
        g = g[position_slice]
    gmax = np.max(np.abs(g)) if g.size else 0.0
    if not np.isfinite(gmax) or gmax == 0.0:
        warnings.warn("zero gradient with respect to turbine positions; functional left unscaled")
        return 1.0
    return 10.0 * radius / gmax


@dataclass
class OptimisationResult:
    """Optimiser output in physical units (watts, metres).

    ``history`` holds one record per SQP iteration with the columns of the
    iteration log.
    """

    m: np.ndarray
    farm: TurbineFarm
    initial_power: float
    final_power: float
    scale: float
    reason: str
    n_feval: int
    n_geval: int
    max_violation: float
    history: list = field(default_factory=list)
    sqp: SQPResult | None = None

    @property
    def power_ratio(self) -> float:
        """``J_final / J_initial``."""
        return self.final_power / self.initial_power if self.initial_power else float("nan")

    @property
    def improvement(self) -> float:
        """Relative gain ``(J_final - J_initial) / J_initial``."""
        return self.power_ratio - 1.0

    @property
    def power_history(self) -> np.ndarray:
        return np.array([r["J_watts"] for r in self.history])


LOG_COLUMNS = ("iter", "J_watts", "grad_inf_norm", "max_constraint_violation", "step_norm", "n_feval", "n_geval")


def write_iteration_log(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(history)


def sqp_optimise(rf: ReducedFunctional, constraints: ConstraintSpec, m0, tol: float = 1e-6,
                 max_iter: int = 100, scale: float | None = None, callback=None) -> OptimisationResult:
    """Maximise power over the layout with bounds and minimum-distance constraints.

    The optimiser sees ``-scale * J``; reported powers stay in watts.
    """
    farm = rf.farm
    m0 = np.clip(np.asarray(m0, dtype=float), constraints.lower, constraints.upper)
    J0, g0 = rf(m0)
    if scale is None:
        scale = compute_scale(g0, farm.radius, farm.position_slice)
    log.info("initial power %.6e W, functional scale %.3e", J0, scale)

    def f(m):
        return -scale * rf.value(m)

    def grad(m):
        return -scale * rf.gradient(m)

    ineq = None
    if constraints.d_min > 0 and farm.num_turbines > 1:
        def ineq(m):
            c, A = distance_constraints(m, farm.num_turbines, farm.mode, constraints.d_min)
            return c, A.toarray()

    history: list = []

    def on_iter(record):
        record["J_watts"] = -record["f"] / scale
        record["grad_inf_norm"] = record["grad_inf_norm"] / scale
        record["n_feval"], record["n_geval"] = rf.n_feval, rf.n_geval
        history.append(record)
        log.info("iter %d  J=%.6e W  violation=%.2e  step=%.2e", record["iter"], record["J_watts"],
                 record["max_constraint_violation"], record["step_norm"])
        if callback is not None:
            callback(record)

    res = sqp_minimise(f, grad, m0, constraints.lower, constraints.upper, ineq=ineq,
                       tol=tol, max_iter=max_iter, callback=on_iter)
    final = rf.value(res.x)
    viol = 0.0
    if ineq is not None:
        viol = float(max(0.0, -np.min(ineq(res.x)[0])))
    return OptimisationResult(res.x, farm.with_params(res.x), J0, final, scale, res.reason,
                              rf.n_feval, rf.n_geval, viol, history, res)
