"""Manufactured-solution convergence studies and the Taylor remainder test."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .errors import EvaluationFailed, TidalOptError
from .mesh import Mesh, generate_channel_mesh
from .spaces import build_spaces
from .swe import BoundaryForcing, ModelConfig, ShallowWater, Source, State, Trajectory

log = logging.getLogger(__name__)

ERROR_DEGREE = 6


@dataclass(frozen=True)
class MMSCase:
    """Travelling wave ``eta = eta0 cos(kx - wt)``, ``u = (eta0 sqrt(g/H) cos(kx - wt), 0)``.

    With ``w = sqrt(gH) k`` the wave solves the linear inviscid frictionless
    equations exactly; advection, viscosity and bottom friction leave a
    momentum remainder that is added back as a source. For the steady problem
    the exact fields are frozen at ``t`` and the time-derivative cancellation
    is lost, so both equations get sources.
    """

    k: float = math.pi / 640.0
    eta0: float = 2.0
    H: float = 50.0
    g: float = 9.81
    nu: float = 3.0
    c_b: float = 0.0025
    width: float = 640.0
    height: float = 320.0

    @property
    def omega(self) -> float:
        return math.sqrt(self.g * self.H) * self.k

    @property
    def amplitude(self) -> float:
        return self.eta0 * math.sqrt(self.g / self.H)

    @property
    def T(self) -> float:
        """Half a wave period."""
        return math.pi / self.omega

    def phase(self, x, t):
        return self.k * np.asarray(x, dtype=float) - self.omega * t

    def velocity(self, x, y, t):
        th = self.phase(x, t)
        u = self.amplitude * np.cos(th)
        return u, np.zeros_like(u)

    def eta(self, x, y, t):
        return self.eta0 * np.cos(self.phase(x, t))

    def momentum_source(self, x, y, t, steady: bool = False):
        a, k = self.amplitude, self.k
        th = self.phase(x, t)
        c, s = np.cos(th), np.sin(th)
        fx = -a * a * k * s * c + self.nu * a * k * k * c + self.c_b / self.H * a * a * np.abs(c) * c
        if steady:
            fx = fx - self.g * self.eta0 * k * s
        return fx, np.zeros_like(fx)

    def continuity_source(self, x, y, t, steady: bool = False):
        if steady:
            return -self.H * self.amplitude * self.k * np.sin(self.phase(x, t))
        return np.zeros(np.shape(self.phase(x, t)))

    def config(self, dt: float | None = None, steady: bool = False, T: float | None = None) -> ModelConfig:
        forcing = BoundaryForcing(outflow_eta=self.eta, boundary_velocity=self.velocity)
        source = Source(lambda x, y, t: self.momentum_source(x, y, t, steady),
                        lambda x, y, t: self.continuity_source(x, y, t, steady))
        common = dict(H=self.H, g=self.g, nu=self.nu, c_b=self.c_b, forcing=forcing, source=source)
        if steady:
            return ModelConfig(kappa=0, **common)
        T = self.T if T is None else T
        return ModelConfig(kappa=1, T=T, dt=T if dt is None else dt, **common)

    def exact_state(self, spaces, t: float) -> State:
        return State(spaces.interpolate(lambda x, y: self.velocity(x, y, t), lambda x, y: self.eta(x, y, t)), t)


def source_oracle(case: MMSCase, x: float, y: float, t: float, steady: bool = False):
    """Residual of the exact fields by numerical differentiation in high precision.

    Independent of the closed forms in :class:`MMSCase`: derivatives come from
    ``mpmath.diff`` applied to the exact solution alone.
    """
    with mpmath.workdps(30):
        g, H, nu, cb, k, om = (mpmath.mpf(v) for v in (case.g, case.H, case.nu, case.c_b, case.k, case.omega))
        a = mpmath.mpf(case.eta0) * mpmath.sqrt(g / H)
        eta0 = mpmath.mpf(case.eta0)
        u = lambda X, Y, T: a * mpmath.cos(k * X - om * T)
        v = lambda X, Y, T: mpmath.mpf(0)
        e = lambda X, Y, T: eta0 * mpmath.cos(k * X - om * T)
        X, Y, T = mpmath.mpf(x), mpmath.mpf(y), mpmath.mpf(t)
        d = lambda f, n: mpmath.diff(f, (X, Y, T), n)
        uu, vv = u(X, Y, T), v(X, Y, T)
        speed = mpmath.sqrt(uu * uu + vv * vv)
        kap = 0 if steady else 1
        fx = (kap * d(u, (0, 0, 1)) + uu * d(u, (1, 0, 0)) + vv * d(u, (0, 1, 0))
              - nu * (d(u, (2, 0, 0)) + d(u, (0, 2, 0))) + g * d(e, (1, 0, 0)) + cb / H * speed * uu)
        fy = (kap * d(v, (0, 0, 1)) + uu * d(v, (1, 0, 0)) + vv * d(v, (0, 1, 0))
              - nu * (d(v, (2, 0, 0)) + d(v, (0, 2, 0))) + g * d(e, (0, 1, 0)) + cb / H * speed * vv)
        fe = kap * d(e, (0, 0, 1)) + H * (d(u, (1, 0, 0)) + d(v, (0, 1, 0)))
        return float(fx), float(fy), float(fe)


def check_sources(case: MMSCase, n_points: int = 20, seed: int = 0, rtol: float = 1e-8,
                  steady: bool = False) -> float:
    """Compare closed-form sources with :func:`source_oracle`; returns the worst relative error."""
    rng = np.random.default_rng(seed)
    scale = (case.amplitude ** 2 * case.k + case.g * case.eta0 * case.k, case.H * case.amplitude * case.k)
    worst = 0.0
    for _ in range(n_points):
        x, y = rng.uniform(0, case.width), rng.uniform(0, case.height)
        t = rng.uniform(0, case.T)
        fx, fy = case.momentum_source(x, y, t, steady)
        fe = case.continuity_source(x, y, t, steady)
        ox, oy, oe = source_oracle(case, x, y, t, steady)
        err = max(abs(float(fx) - ox) / scale[0], abs(float(fy) - oy) / scale[0], abs(float(fe) - oe) / scale[1])
        worst = max(worst, err)
    if worst > rtol:
        raise TidalOptError(f"manufactured sources disagree with the oracle (relative error {worst:.2e})")
    return worst


def _l2_squared(spaces, z, case: MMSCase, t: float) -> float:
    q = spaces.quadrature(ERROR_DEGREE)
    X, Y = q.points[..., 0], q.points[..., 1]
    u, _ = spaces.evaluate_velocity(z, ERROR_DEGREE, gradient=False)
    eta, _ = spaces.evaluate_surface(z, ERROR_DEGREE)
    ue, ve = case.velocity(X, Y, t)
    ee = case.eta(X, Y, t)
    err = (u[..., 0] - ue) ** 2 + (u[..., 1] - ve) ** 2 + (eta - ee) ** 2
    return float(np.sum(q.weights * err))


def error_norm(solution, case: MMSCase, spaces) -> float:
    """``(||u - u_exact||^2 + ||eta - eta_exact||^2)^(1/2)``.

    For a trajectory the norm is over space and time, with the time integral
    taken by the right-endpoint rule of the solver (initial state excluded).
    """
    if isinstance(solution, Trajectory):
        total = sum(solution.dt * _l2_squared(spaces, s.z, case, s.t) for s in solution.states[1:])
        return math.sqrt(total)
    return math.sqrt(_l2_squared(spaces, solution.z, case, solution.t))


def fit_order(sizes, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(size)``."""
    return float(np.polyfit(np.log(sizes), np.log(errors), 1)[0])


def pairwise_orders(sizes, errors) -> list:
    s, e = np.asarray(sizes, dtype=float), np.asarray(errors, dtype=float)
    return [float(np.log(e[i] / e[i + 1]) / np.log(s[i] / s[i + 1])) for i in range(len(s) - 1)]


@dataclass
class ConvergenceStudy:
    sizes: list            # h or dt per level
    errors: list
    order: float           # fitted over the finest three levels
    pairwise: list
    extra: dict

    def rows(self):
        orders = [float("nan")] + list(self.pairwise)
        return [{"level": i, "h_or_dt": h, "error": e, "pairwise_order": o}
                for i, (h, e, o) in enumerate(zip(self.sizes, self.errors, orders))]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["level", "h_or_dt", "error", "pairwise_order"])
            w.writeheader()
            w.writerows(self.rows())


def _study(sizes, errors, extra=None) -> ConvergenceStudy:
    if len(sizes) < 2:
        raise ValueError("a convergence study needs at least two levels")
    tail = slice(-3, None)
    order = fit_order(sizes[tail], errors[tail]) if min(errors) > 0 else float("nan")
    return ConvergenceStudy(list(sizes), list(errors), order, pairwise_orders(sizes, errors), extra or {})


def richardson_weights(levels: int) -> np.ndarray:
    """Weights combining runs at ``dt, dt/2, ..., dt/2^(levels-1)`` so error terms ``dt^1..dt^(levels-1)`` cancel."""
    r = 0.5 ** np.arange(levels)
    V = np.vander(r, levels, increasing=True).T      # row k: r_j^k
    rhs = np.zeros(levels)
    rhs[0] = 1.0
    return np.linalg.solve(V, rhs)


def _march(problem: ShallowWater, initial: State, stride: int) -> list:
    """Implicit Euler over the whole interval, keeping every ``stride``-th state."""
    cfg = problem.config
    current, kept, factor = initial, [initial], None
    for n in range(1, cfg.num_steps + 1):
        current = problem.newton(current.z, prev=current.z, t=n * cfg.dt, step=n, factor=factor, reuse=True)
        factor = current.info.pop("factor")
        if n % stride == 0:
            kept.append(current)
    return kept


def run_mms(case: MMSCase, mesh: Mesh, dt: float, T: float | None = None, extrapolation: int = 1,
            _runs: dict | None = None, _grid: int = 0) -> float:
    """One manufactured-solution study point; returns the space-time error.

    With ``extrapolation = p > 1`` the solver is also run at ``dt/2``,
    ``dt/4``, ... and the states on the ``dt`` grid are combined by Richardson
    extrapolation, leaving a time error of order ``dt^p``. ``_runs`` caches
    runs by step count so repeated calls on one mesh can share them; runs
    keep their states on a grid of ``max(_grid, T/dt)`` intervals.
    """
    if extrapolation < 1:
        raise ValueError("extrapolation needs at least one level")
    spaces = build_spaces(mesh)
    T = case.T if T is None else T
    n = int(round(T / dt))
    runs = {} if _runs is None else _runs
    combined = None
    for j, weight in enumerate(richardson_weights(extrapolation)):
        steps = n * 2 ** j
        if steps not in runs:
            problem = ShallowWater(spaces, case.config(dt=T / steps, T=T))
            runs[steps] = _march(problem, case.exact_state(spaces, 0.0), max(1, steps // max(n, _grid)))
        kept = runs[steps]
        z = np.array([st.z for st in kept[::(len(kept) - 1) // n]])
        combined = weight * z if combined is None else combined + weight * z
    traj = Trajectory([State(z, k * T / n) for k, z in enumerate(combined)], T / n)
    return error_norm(traj, case, spaces)


def run_mms_spatial(case: MMSCase, sizes, dt: float | None = None, extrapolation: int = 4,
                    check_dt: bool = True) -> ConvergenceStudy:
    """Spatial study on uniform channel meshes with cell sizes ``sizes``.

    Time error is suppressed by Richardson extrapolation over ``dt``,
    ``dt/2``, ... (see :func:`run_mms`); ``dt`` defaults to ``T/64``. With
    ``check_dt`` the finest level is repeated at ``dt/2`` and the relative
    change is reported as ``extra["dt_sensitivity"]``; it should be well
    below 1% for the fitted order to be meaningful.
    """
    check_sources(case)
    sizes = sorted(sizes, reverse=True)
    if len(sizes) < 3:
        raise ValueError("need at least three levels")
    dt = case.T / 64 if dt is None else dt
    errors = []
    runs: dict = {}
    for h in sizes:
        mesh = generate_channel_mesh(case.width, case.height, h)
        runs = {}
        grid = 2 * int(round(case.T / dt)) if check_dt else 0
        errors.append(run_mms(case, mesh, dt, extrapolation=extrapolation, _runs=runs, _grid=grid))
        log.info("spatial level h=%g: E=%.6e", h, errors[-1])
    extra = {"dt": dt, "extrapolation": extrapolation}
    if check_dt:
        mesh = generate_channel_mesh(case.width, case.height, sizes[-1])
        half = run_mms(case, mesh, dt / 2, extrapolation=extrapolation, _runs=runs, _grid=grid)
        extra["dt_sensitivity"] = abs(half - errors[-1]) / errors[-1]
    return _study(sizes, errors, extra)


def run_mms_temporal(case: MMSCase, dts=None, hx: float = 2.5, hy: float = 160.0) -> ConvergenceStudy:
    """Temporal study on an anisotropic ``hx x hy`` mesh (the solution is constant in y).

    ``dts`` defaults to ``T/32, T/64, ..., T/512``; the order is fitted over
    the finest three, where the splitting error is asymptotic.
    """
    check_sources(case)
    if dts is None:
        dts = [case.T / n for n in (32, 64, 128, 256, 512)]
    dts = sorted(dts, reverse=True)
    if len(dts) < 3:
        raise ValueError("need at least three time steps")
    mesh = generate_channel_mesh(case.width, case.height, hx, h_y=hy)
    errors = []
    for dt in dts:
        errors.append(run_mms(case, mesh, dt))
        log.info("temporal level dt=%g: E=%.6e", dt, errors[-1])
    return _study(dts, errors, {"hx": hx, "hy": hy})


def taylor_test(rf, m, dm, h0: float, n_halvings: int = 4):
    """Taylor remainders along ``dm``.

    Returns ``(orders_without_gradient, orders_with_gradient, r0, r1)`` where
    ``r0[k] = |J(m + h_k dm) - J(m)|`` and
    ``r1[k] = |J(m + h_k dm) - J(m) - h_k dJ/dm . dm|`` with ``h_k = h0 / 2^k``.
    """
    m = np.asarray(m, dtype=float)
    dm = np.asarray(dm, dtype=float)
    if not np.any(dm):
        raise ValueError("perturbation direction must be nonzero")
    value = rf.value if hasattr(rf, "value") else (lambda x: rf(x)[0])
    gradient = rf.gradient if hasattr(rf, "gradient") else (lambda x: rf(x)[1])
    J0 = value(m)
    slope = float(np.dot(gradient(m), dm))
    hs = h0 / 2.0 ** np.arange(n_halvings + 1)
    r0, r1 = [], []
    for h in hs:
        try:
            Jh = value(m + h * dm)
        except TidalOptError as exc:
            raise EvaluationFailed(f"Taylor test evaluation failed at h={h}: {exc}", m + h * dm) from exc
        r0.append(abs(Jh - J0))
        r1.append(abs(Jh - J0 - h * slope))
    order = lambda r: [float(np.log2(r[i] / r[i + 1])) for i in range(len(r) - 1)]
    return order(r0), order(r1), np.array(r0), np.array(r1)
