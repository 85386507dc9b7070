"""Power extracted by turbine friction and its partial derivatives.

All integrals use the degree-6 rule of the friction term, so the functional
and the forward operator see the same quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrajectory
from .swe import EPS_SPEED, FRICTION_DEGREE, ModelConfig, State, Trajectory
from .turbine import FrictionField


@dataclass
class PowerValue:
    value: float            # W
    breakdown: np.ndarray   # W per turbine


def _speed(spaces, z):
    u, _ = spaces.evaluate_velocity(z, FRICTION_DEGREE, gradient=False)
    return u, np.sqrt(np.sum(u * u, axis=-1) + EPS_SPEED ** 2)


def power_density_weights(spaces, z, config: ModelConfig) -> np.ndarray:
    """``rho |u|^3`` times the quadrature weight, per cell and point.

    The value uses the exact speed (``|u|^3`` is smooth enough at rest); only
    derivatives use the regularised norm.
    """
    u, _ = spaces.evaluate_velocity(z, FRICTION_DEGREE, gradient=False)
    speed2 = np.sum(u * u, axis=-1)
    return config.rho * speed2 * np.sqrt(speed2) * spaces.quadrature(FRICTION_DEGREE).weights


def power_steady(state: State, friction: FrictionField, spaces, config: ModelConfig) -> PowerValue:
    w = power_density_weights(spaces, state.z, config)
    return PowerValue(float(np.sum(friction.values * w)), friction.per_turbine(w))


def power_unsteady(trajectory: Trajectory, friction: FrictionField, spaces, config: ModelConfig) -> PowerValue:
    """Time average by the right-endpoint rectangle rule; the initial state is excluded."""
    if len(trajectory) < 2:
        raise EmptyTrajectory("trajectory has no time steps")
    T = trajectory.dt * (len(trajectory) - 1)
    value, breakdown = 0.0, np.zeros(friction.farm.num_turbines)
    for s in trajectory.states[1:]:
        p = power_steady(s, friction, spaces, config)
        value += trajectory.dt * p.value
        breakdown += trajectory.dt * p.breakdown
    return PowerValue(value / T, breakdown / T)


def power_series(trajectory: Trajectory, friction: FrictionField, spaces, config) -> np.ndarray:
    """Instantaneous power at every stored time after the first."""
    return np.array([power_steady(s, friction, spaces, config).value for s in trajectory.states[1:]])


def power_du(state: State, friction: FrictionField, spaces, config: ModelConfig) -> np.ndarray:
    """Derivative of the steady power with respect to every state coefficient.

    Returned over the full unknown vector; the free-surface entries are zero.
    """
    q = spaces.quadrature(FRICTION_DEGREE)
    u, speed = _speed(spaces, state.z)
    coef = (3.0 * config.rho * friction.values * speed * q.weights)[..., None] * u
    loc = np.concatenate([coef[..., 0] @ q.phi, coef[..., 1] @ q.phi], axis=1)
    out = np.zeros(spaces.ndof)
    dofs = spaces.cell_dofs[:, :12]
    out[:2 * spaces.n2] = np.bincount(dofs.ravel(), weights=loc.ravel(), minlength=2 * spaces.n2)
    return out


def power_dm(state: State, friction: FrictionField, spaces, config: ModelConfig) -> np.ndarray:
    """Partial derivative with respect to the design parameters, flow held fixed."""
    return friction.contract(power_density_weights(spaces, state.z, config))
