import mpmath
import numpy as np
import pytest

from tidalopt.errors import EmptyTrajectory
from tidalopt.mesh import generate_channel_mesh
from tidalopt.power import power_dm, power_du, power_steady, power_unsteady
from tidalopt.spaces import build_spaces
from tidalopt.swe import ModelConfig, State, Trajectory
from tidalopt.turbine import FrictionField, Mode, TurbineFarm


def bump_integral():
    mpmath.mp.dps = 30
    return float(mpmath.quad(lambda s: mpmath.e ** (1 - 1 / (1 - s * s)), [-1, 0, 1]))


@pytest.fixture(scope="module")
def fine():
    return build_spaces(generate_channel_mesh(100.0, 100.0, 1.0))


def uniform(spaces, u=2.0, v=0.0):
    return State(spaces.interpolate(lambda x, y: (np.full_like(x, u), np.full_like(x, v)), lambda x, y: 0 * x))


def test_zero_friction(fine):
    ct = FrictionField.zero(fine)
    assert power_steady(uniform(fine), ct, fine, ModelConfig()).value == 0.0
    assert not np.any(power_du(uniform(fine), ct, fine, ModelConfig()))


def test_frozen_uniform_flow_closed_form(fine):
    K, r = 21.0, 10.0
    ct = FrictionField.build(TurbineFarm([[50.0, 50.0]], K, r), fine)
    J = power_steady(uniform(fine), ct, fine, ModelConfig()).value
    expected = 1000.0 * K * 8.0 * (r * bump_integral()) ** 2
    assert J == pytest.approx(expected, rel=1e-6)


def test_breakdown_and_scaling(fine):
    farm = TurbineFarm([[30.0, 40.0], [65.0, 60.0]], [21.0, 10.0])
    ct = FrictionField.build(farm, fine)
    rng = np.random.default_rng(0)
    s = State(rng.normal(size=fine.ndof))
    p = power_steady(s, ct, fine, ModelConfig())
    assert p.value >= 0 and np.sum(p.breakdown) == pytest.approx(p.value, rel=1e-10)
    assert power_steady(s, ct, fine, ModelConfig(rho=2000.0)).value == pytest.approx(2 * p.value, rel=1e-12)
    doubled = FrictionField.build(TurbineFarm(farm.positions, 2 * farm.frictions), fine)
    assert power_steady(s, doubled, fine, ModelConfig()).value == pytest.approx(2 * p.value, rel=1e-12)


def test_unsteady_average(fine):
    ct = FrictionField.build(TurbineFarm([[50.0, 50.0]], 21.0), fine)
    s = uniform(fine)
    cfg = ModelConfig()
    steady = power_steady(s, ct, fine, cfg).value
    const = Trajectory([State(s.z, t) for t in (0, 5, 10, 15)], 5.0)
    assert power_unsteady(const, ct, fine, cfg).value == pytest.approx(steady, rel=1e-12)
    zero = Trajectory([State(np.zeros(fine.ndof), t) for t in (0, 5)], 5.0)
    assert power_unsteady(zero, ct, fine, cfg).value == 0.0
    # the initial state does not enter the average
    mixed = Trajectory([State(np.zeros(fine.ndof), 0.0), State(s.z, 5.0)], 5.0)
    assert power_unsteady(mixed, ct, fine, cfg).value == pytest.approx(steady, rel=1e-12)
    with pytest.raises(EmptyTrajectory):
        power_unsteady(Trajectory([s], 5.0), ct, fine, cfg)


def test_power_du_fd(coarse_spaces, two_turbines):
    ct = FrictionField.build(two_turbines, coarse_spaces)
    cfg = ModelConfig()
    rng = np.random.default_rng(1)
    z = uniform(coarse_spaces).z + 0.3 * rng.normal(size=coarse_spaces.ndof)
    g = power_du(State(z), ct, coarse_spaces, cfg)
    for _ in range(5):
        dz = rng.normal(size=z.size)
        h = 1e-5
        fd = (power_steady(State(z + h * dz), ct, coarse_spaces, cfg).value
              - power_steady(State(z - h * dz), ct, coarse_spaces, cfg).value) / (2 * h)
        assert g @ dz == pytest.approx(fd, rel=1e-6)
    # only coefficients touching a turbine support are nonzero
    cells = np.flatnonzero(ct.values.max(axis=1) > 0)
    touched = np.unique(coarse_spaces.cell_dofs[cells, :12])
    outside = np.setdiff1d(np.arange(coarse_spaces.ndof), touched)
    assert not np.any(g[outside])


def test_power_dm_fd(coarse_spaces, two_turbines):
    farm = TurbineFarm(two_turbines.positions, [21.0, 15.0], mode=Mode.POSITIONS_AND_FRICTIONS)
    cfg = ModelConfig()
    rng = np.random.default_rng(2)
    s = State(uniform(coarse_spaces).z + 0.3 * rng.normal(size=coarse_spaces.ndof))
    g = power_dm(s, FrictionField.build(farm, coarse_spaces), coarse_spaces, cfg)
    m = farm.to_params()
    for j in range(m.size):
        h = 1e-4 * (1 if j < 2 else 10)
        e = np.zeros(m.size)
        e[j] = h
        Jp = power_steady(s, FrictionField.build(farm.with_params(m + e), coarse_spaces), coarse_spaces, cfg).value
        Jm = power_steady(s, FrictionField.build(farm.with_params(m - e), coarse_spaces), coarse_spaces, cfg).value
        assert g[j] == pytest.approx((Jp - Jm) / (2 * h), rel=1e-6, abs=1e-9 * abs(Jp))


def test_power_dm_uniform_flow(fine):
    farm = TurbineFarm([[50.0, 50.0]], 21.0, mode=Mode.POSITIONS_AND_FRICTIONS)
    g = power_dm(uniform(fine), FrictionField.build(farm, fine), fine, ModelConfig())
    assert g[0] > 0
    assert abs(g[1]) <= 1e-9 * g[0] * farm.radius and abs(g[2]) <= 1e-9 * g[0] * farm.radius
