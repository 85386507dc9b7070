import numpy as np
import pytest

from tidalopt.adjoint import compute_gradient, solve_adjoint_steady, solve_adjoint_unsteady
from tidalopt.errors import NotConverged, ShapeMismatch
from tidalopt.power import power_du
from tidalopt.swe import ModelConfig, ShallowWater, State
from tidalopt.turbine import FrictionField, Mode, TurbineFarm


def test_zero_source_zero_adjoint(steady_problem, coarse_spaces):
    ct = FrictionField.zero(coarse_spaces)
    s = steady_problem.solve_steady(ct)
    assert not np.any(solve_adjoint_steady(s, ct, steady_problem).lam)


def test_adjoint_residual(steady_problem, coarse_spaces, two_turbines):
    ct = FrictionField.build(two_turbines, coarse_spaces)
    s = steady_problem.solve_steady(ct)
    lam = solve_adjoint_steady(s, ct, steady_problem).lam
    rhs = power_du(s, ct, coarse_spaces, steady_problem.config)
    rhs[steady_problem.dirichlet] = 0.0
    J = steady_problem.jacobian(s.z, ct)
    assert np.max(np.abs(J.T @ lam - rhs)) <= 1e-9 * np.max(np.abs(rhs))
    # homogeneous adjoint boundary values
    assert not np.any(lam[steady_problem.dirichlet])


def test_unconverged_state_rejected(steady_problem, coarse_spaces, two_turbines):
    ct = FrictionField.build(two_turbines, coarse_spaces)
    with pytest.raises(NotConverged):
        solve_adjoint_steady(State(np.ones(steady_problem.ndof)), ct, steady_problem)


def test_steady_gradient_fd(steady_problem, coarse_spaces, two_turbines):
    farm = TurbineFarm(two_turbines.positions, 21.0, mode=Mode.POSITIONS_AND_FRICTIONS)
    from tidalopt.optimise import ReducedFunctional
    rf = ReducedFunctional(steady_problem, farm)
    m = farm.to_params()
    g = rf.gradient(m)
    for j in range(m.size):
        h = 1e-3
        e = np.zeros(m.size)
        e[j] = h
        fd = (rf.value(m + e) - rf.value(m - e)) / (2 * h)
        assert g[j] == pytest.approx(fd, rel=1e-4)


def test_unsteady_adjoint_fixed_point(coarse_spaces):
    """From a steady initial state the backward recursion settles on dt/T times the steady adjoint."""
    farm = TurbineFarm([[320.0, 160.0]], 21.0)
    ct = FrictionField.build(farm, coarse_spaces)
    steady = ShallowWater(coarse_spaces, ModelConfig())
    s0 = steady.solve_steady(ct)
    lam_s = solve_adjoint_steady(s0, ct, steady).lam
    N, dt = 6, 1e8
    p = ShallowWater(coarse_spaces, ModelConfig(kappa=1, T=N * dt, dt=dt))
    traj = p.solve_unsteady(ct, initial=State(s0.z, 0.0))
    for s in traj.states[1:]:
        assert np.allclose(s.z, s0.z, atol=1e-8)
    adj = solve_adjoint_unsteady(traj, ct, p)
    assert len(adj) == N
    target = lam_s / N
    scale = np.max(np.abs(target))
    assert np.max(np.abs(adj[0].lam - adj[1].lam)) <= 1e-9 * scale
    assert np.max(np.abs(adj[0].lam - target)) <= 1e-9 * scale
    # with the initial state held fixed the gradients differ only through the O(M/dt) memory term
    g_u = compute_gradient(traj.states[1:], adj, ct, p)
    g_s = compute_gradient(s0, solve_adjoint_steady(s0, ct, steady), ct, steady)
    assert np.allclose(g_u, g_s, rtol=1e-6)


def test_gradient_shape_checks(steady_problem, coarse_spaces, two_turbines):
    ct = FrictionField.build(two_turbines, coarse_spaces)
    s = steady_problem.solve_steady(ct)
    a = solve_adjoint_steady(s, ct, steady_problem)
    assert compute_gradient(s, a, ct, steady_problem).shape == (4,)
    with pytest.raises(ShapeMismatch):
        compute_gradient([s, s], [a], ct, steady_problem)
