"""Discrete adjoint solves and the total derivative of power.

The adjoint operator is the transpose of the assembled forward Jacobian, so
the gradient is exact for the discrete functional (up to solver tolerance).
Only the friction term depends on the design parameters, which lets the
``-lambda^T dF/dm`` contribution be written as a single weighted field
contracted against each turbine's footprint.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotConverged, ShapeMismatch, SolverError
from .linsparse import Factorisation
from .power import power_density_weights, power_du
from .swe import EPS_SPEED, FRICTION_DEGREE, ShallowWater, State, Trajectory
from .turbine import FrictionField


@dataclass
class AdjointState:
    lam: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.lam)):
            raise SolverError(f"adjoint at t={self.t} contains non-finite values")


def _check_converged(problem: ShallowWater, state, friction, prev=None, rtol=1e-6):
    R = problem.residual(state.z, friction, prev, state.t)
    scale = state.info.get("residuals", [0.0])[0]
    if np.max(np.abs(R)) > rtol * (1.0 + scale):
        raise NotConverged(f"forward residual {np.max(np.abs(R)):.3e} too large for an adjoint solve")


def solve_adjoint_steady(state: State, friction: FrictionField, problem: ShallowWater) -> AdjointState:
    _check_converged(problem, state, friction)
    F = state.factor if state.factor is not None else Factorisation(problem.jacobian(state.z, friction))
    rhs = power_du(state, friction, problem.spaces, problem.config)
    rhs[problem.dirichlet] = 0.0
    return AdjointState(F.solve_transpose(rhs), state.t)


def solve_adjoint_unsteady(trajectory: Trajectory, friction: FrictionField, problem: ShallowWater) -> list:
    """Backward sweep over implicit Euler steps; returns adjoints for steps 1..N."""
    states = trajectory.states
    N = len(states) - 1
    if N < 1:
        raise ShapeMismatch("trajectory has no time steps")
    dt = trajectory.dt
    share = dt / (dt * N)
    coupling_T = problem.time_coupling().T.tocsr()
    adjoints = [None] * N
    lam_next = np.zeros(problem.ndof)
    for n in range(N, 0, -1):
        s = states[n]
        try:
            F = Factorisation(problem.jacobian(s.z, friction))
        except Exception as exc:
            raise SolverError(f"adjoint factorisation failed: {exc}", n) from exc
        rhs = share * power_du(s, friction, problem.spaces, problem.config) - coupling_T @ lam_next
        rhs[problem.dirichlet] = 0.0
        lam = F.solve_transpose(rhs)
        adjoints[n - 1] = AdjointState(lam, s.t)
        lam_next = lam
    return adjoints


def gradient_weights(state: State, adjoint: AdjointState, problem: ShallowWater, share: float = 1.0):
    """Per-point weights ``w`` such that ``dJ/dm_j = sum_q dc_t/dm_j * w``.

    ``share`` multiplies the explicit power term (``dt/T`` for time averages).
    """
    spaces, cfg = problem.spaces, problem.config
    u, _ = spaces.evaluate_velocity(state.z, FRICTION_DEGREE, gradient=False)
    speed = np.sqrt(np.sum(u * u, axis=-1) + EPS_SPEED ** 2)
    lu, _ = spaces.evaluate_velocity(adjoint.lam, FRICTION_DEGREE, gradient=False)
    w = spaces.quadrature(FRICTION_DEGREE).weights
    # dF/dc_t tested with the adjoint: <|u| u / H, lambda_u>
    return share * power_density_weights(spaces, state.z, cfg) - w * speed * np.sum(u * lu, axis=-1) / cfg.H


def compute_gradient(states, adjoints, friction: FrictionField, problem: ShallowWater) -> np.ndarray:
    """Total derivative ``dJ/dm = dJ/dm|_z - lambda^T dF/dm``.

    ``states`` and ``adjoints`` are single objects for a steady problem or
    matching sequences (steps 1..N) for a time-dependent one.
    """
    if isinstance(states, State):
        return friction.contract(gradient_weights(states, adjoints, problem))
    states, adjoints = list(states), list(adjoints)
    if len(states) != len(adjoints):
        raise ShapeMismatch(f"{len(states)} states but {len(adjoints)} adjoints")
    share = 1.0 / len(states)
    total = sum(gradient_weights(s, a, problem, share) for s, a in zip(states, adjoints))
    return friction.contract(total)
