import csv

import numpy as np
import pytest

from tidalopt.errors import TidalOptError
from tidalopt.mesh import generate_channel_mesh
from tidalopt.spaces import build_spaces
from tidalopt.swe import State
from tidalopt.verify import (MMSCase, check_sources, error_norm, fit_order, pairwise_orders, richardson_weights,
                             run_mms, run_mms_temporal, taylor_test, _study)


def test_case_parameters():
    c = MMSCase()
    assert c.T == pytest.approx(28.9, abs=0.05)
    assert c.k == pytest.approx(np.pi / 640)


@pytest.mark.parametrize("steady", [False, True])
def test_sources_match_oracle(steady):
    assert check_sources(MMSCase(), steady=steady) < 1e-8


def test_wrong_source_detected():
    class Broken(MMSCase):
        def momentum_source(self, x, y, t, steady=False):
            fx, fy = super().momentum_source(x, y, t, steady)
            return fx * 1.01, fy
    with pytest.raises(TidalOptError):
        check_sources(Broken())


def test_error_norm_structure():
    case = MMSCase()
    spaces = build_spaces(generate_channel_mesh(640, 320, 80))
    zero = MMSCase(eta0=0.0)
    assert error_norm(zero.exact_state(spaces, 1.0), zero, spaces) == 0.0
    # squared norm is additive over the velocity and surface errors
    exact = case.exact_state(spaces, 3.0).z
    du = exact.copy()
    du[:spaces.n2] += 0.1
    de = exact.copy()
    de[2 * spaces.n2:] += 0.1
    both = exact.copy()
    both[:spaces.n2] += 0.1
    both[2 * spaces.n2:] += 0.1
    e0 = error_norm(State(exact, 3.0), case, spaces)
    eu = error_norm(State(du, 3.0), case, spaces)
    ee = error_norm(State(de, 3.0), case, spaces)
    eb = error_norm(State(both, 3.0), case, spaces)
    assert eu > e0 and ee > e0
    # interpolation error is tiny against a 0.1 offset
    assert eb ** 2 == pytest.approx(eu ** 2 + ee ** 2 - e0 ** 2, rel=1e-3)


def test_order_helpers():
    h = np.array([4.0, 2.0, 1.0, 0.5])
    e = 3.0 * h ** 2
    assert fit_order(h, e) == pytest.approx(2.0)
    assert np.allclose(pairwise_orders(h, e), 2.0)
    s = _study(list(h), list(e))
    assert s.order == pytest.approx(2.0) and len(s.rows()) == 4


def test_study_csv(tmp_path):
    s = _study([2.0, 1.0, 0.5], [4.0, 1.0, 0.25])
    s.write_csv(tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert list(rows[0]) == ["level", "h_or_dt", "error", "pairwise_order"]
    assert float(rows[2]["pairwise_order"]) == pytest.approx(2.0)


def test_richardson_weights():
    assert np.allclose(richardson_weights(1), [1.0])
    assert np.allclose(richardson_weights(2), [-1.0, 2.0])
    w = richardson_weights(4)
    r = 0.5 ** np.arange(4)
    assert np.sum(w) == pytest.approx(1.0)
    for k in (1, 2, 3):
        assert np.dot(w, r ** k) == pytest.approx(0.0, abs=1e-12)


def test_steady_spatial_pair():
    case = MMSCase()
    from tidalopt.swe import ShallowWater
    errs = []
    for h in (40.0, 20.0):
        spaces = build_spaces(generate_channel_mesh(case.width, case.height, h))
        problem = ShallowWater(spaces, case.config(steady=True))
        s = problem.solve_steady(initial=case.exact_state(spaces, 0.0).z, keep_factor=False)
        errs.append(error_norm(s, case, spaces))
    assert pairwise_orders([40, 20], errs)[0] == pytest.approx(2.0, abs=0.25)


def test_temporal_pair_and_single_step():
    case = MMSCase()
    mesh = generate_channel_mesh(case.width, case.height, 2.5, h_y=160.0)
    e1 = run_mms(case, mesh, case.T / 32)
    e2 = run_mms(case, mesh, case.T / 64)
    assert e1 / e2 == pytest.approx(2.0, abs=0.15)
    assert np.isfinite(run_mms(case, mesh, case.T))


def test_temporal_needs_three_levels():
    with pytest.raises(ValueError):
        run_mms_temporal(MMSCase(), [1.0, 0.5])


def test_taylor_on_quadratic():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    J = lambda m: float(m @ A @ m)
    grad = lambda m: 2 * A @ m

    class RF:
        value = staticmethod(J)
        gradient = staticmethod(grad)

    m, dm = np.array([1.0, -2.0]), np.array([0.3, 0.7])
    o0, o1, r0, r1 = taylor_test(RF(), m, dm, 0.1)
    hs = 0.1 / 2.0 ** np.arange(5)
    assert np.allclose(r1, hs ** 2 * (dm @ A @ dm), rtol=1e-9)
    assert np.allclose(o1, 2.0, atol=1e-6)
    assert np.all(np.abs(np.array(o0) - 1.0) < 0.1)
    with pytest.raises(ValueError):
        taylor_test(RF(), m, np.zeros(2), 0.1)
