"""Shallow water equations on Taylor-Hood elements.

Momentum and continuity are assembled in weak form with quadratic velocity and
linear free surface. Steady problems (``kappa = 0``) are solved by damped
Newton iteration; time-dependent problems (``kappa = 1``) by implicit Euler
with a Newton solve per step.

Dirichlet conditions are imposed by symmetric elimination: the rows *and*
columns of constrained unknowns are replaced by the identity. Newton updates
never touch constrained values (they are set before the iteration starts), so
this leaves the iteration unchanged while making the Jacobian transpose the
exact discrete adjoint operator with homogeneous boundary data.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NewtonDiverged, ShapeMismatch, SolverError
from .linsparse import Factorisation, SparsityPattern
from .mesh import Tag
from .spaces import EDGE_GAUSS, FunctionSpacePair, p1_basis, p2_basis
from .turbine import FrictionField

log = logging.getLogger(__name__)

EPS_SPEED = 1e-8          # m/s, regularises |u| near zero
FRICTION_DEGREE = 6       # bump friction and power integrand
DEFAULT_DEGREE = 4


@dataclass(frozen=True)
class Sinusoid:
    """Inflow ``u(t) = (-amplitude * sin(2 pi t / period), 0)``."""

    amplitude: float = 2.0
    period: float = 600.0

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("sinusoid period must be positive")

    def __call__(self, t):
        return (-self.amplitude * math.sin(2.0 * math.pi * t / self.period), 0.0)


@dataclass(frozen=True)
class BoundaryForcing:
    """Boundary data.

    ``inflow`` is a constant velocity pair, a :class:`Sinusoid`, or a callable
    ``(x, y, t) -> (u, v)``. ``wall`` is ``"free_slip"`` (no normal flow, imposed
    weakly) or ``"no_slip"`` (zero velocity, imposed strongly). When
    ``boundary_velocity`` is given, the velocity is prescribed by it on *every*
    boundary edge; the manufactured-solution runs use this.
    """

    inflow: object = (2.0, 0.0)
    wall: str = "free_slip"
    outflow_eta: float | Callable = 0.0
    boundary_velocity: Callable | None = None

    def __post_init__(self):
        if self.wall not in ("free_slip", "no_slip"):
            raise ValueError(f"unknown wall condition {self.wall!r}")

    def inflow_at(self, x, y, t):
        if callable(self.inflow) and not isinstance(self.inflow, Sinusoid):
            return self.inflow(x, y, t)
        u, v = self.inflow(t) if isinstance(self.inflow, Sinusoid) else self.inflow
        return np.full(np.shape(x), float(u)), np.full(np.shape(x), float(v))

    def eta_at(self, x, y, t):
        if callable(self.outflow_eta):
            return self.outflow_eta(x, y, t)
        return np.full(np.shape(x), float(self.outflow_eta))


@dataclass(frozen=True)
class Source:
    """Prescribed volume sources ``momentum(x, y, t) -> (fx, fy)`` and ``continuity(x, y, t)``."""

    momentum: Callable | None = None
    continuity: Callable | None = None


@dataclass(frozen=True)
class ModelConfig:
    H: float = 50.0
    g: float = 9.81
    nu: float = 3.0
    c_b: float = 0.0025
    rho: float = 1000.0
    kappa: int = 0
    T: float | None = None
    dt: float | None = None
    forcing: BoundaryForcing = field(default_factory=BoundaryForcing)
    source: Source | None = None

    def __post_init__(self):
        if self.H <= 0 or self.g <= 0 or self.rho <= 0 or self.nu < 0 or self.c_b < 0:
            raise ValueError("need H, g, rho > 0 and nu, c_b >= 0")
        if self.kappa not in (0, 1):
            raise ValueError("kappa must be 0 or 1")
        if self.kappa == 1 and not (self.dt and self.T and 0 < self.dt <= self.T):
            raise ValueError("time-dependent runs need 0 < dt <= T")

    @property
    def num_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class State:
    z: np.ndarray
    t: float = 0.0
    info: dict = field(default_factory=dict, repr=False, compare=False)
    factor: Factorisation | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not np.all(np.isfinite(self.z)):
            raise SolverError(f"state at t={self.t} contains non-finite values")


@dataclass
class Trajectory:
    states: list
    dt: float

    def __len__(self):
        return len(self.states)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])


class ShallowWater:
    """Discrete shallow water operator on a fixed mesh and configuration.

    Linear terms (viscosity, gravity, continuity and the open-boundary flux)
    and the mass matrix are assembled once; advection and friction are
    re-assembled per call.
    """

    def __init__(self, spaces: FunctionSpacePair, config: ModelConfig):
        self.spaces = spaces
        self.config = config
        self.ndof = spaces.ndof
        dofs = spaces.cell_dofs
        rows = np.repeat(dofs, 15, axis=1)
        cols = np.tile(dofs, (1, 15))
        self.pattern = SparsityPattern((self.ndof, self.ndof), rows, cols)
        lin, mass = self._linear_element_matrices()
        self._lin_data = self.pattern.sum_values(lin)
        self._mass_data = self.pattern.sum_values(mass)
        self.linear_matrix = self.pattern.to_csr(self._lin_data)
        self.mass_matrix = self.pattern.to_csr(self._mass_data)
        self._setup_dirichlet()

    # ------------------------------------------------------------------ setup
    def _linear_element_matrices(self):
        sp_, cfg = self.spaces, self.config
        q = sp_.quadrature(DEFAULT_DEGREE)
        w = q.weights
        nt = len(w)
        E = np.zeros((nt, 15, 15))
        M = np.zeros((nt, 15, 15))
        mass2 = np.einsum("tq,qa,qb->tab", w, q.phi, q.phi)
        stiff = cfg.nu * np.einsum("tq,tqad,tqbd->tab", w, q.dphi, q.dphi)
        for c in range(2):
            s = slice(6 * c, 6 * c + 6)
            E[:, s, s] = stiff
            M[:, s, s] = mass2
            # g <d_c eta, phi_a>
            E[:, s, 12:] = cfg.g * np.einsum("tq,qa,tb->tab", w, q.phi, q.dchi[:, :, c])
            # -H <u_c, d_c chi_b>
            E[:, 12:, s] = -cfg.H * np.einsum("tq,tb,qa->tba", w, q.dchi[:, :, c], q.phi)
        M[:, 12:, 12:] = np.einsum("tq,qa,qb->tab", w, q.chi, q.chi)
        self._add_open_boundary_flux(E)
        return E, M

    def _add_open_boundary_flux(self, E):
        """Add ``<H u.n, chi>`` over inflow and outflow edges to the owning cells."""
        mesh, sp_ = self.spaces.mesh, self.spaces
        open_edges = mesh.edges_with_tag(Tag.INFLOW, Tag.OUTFLOW)
        if open_edges.size == 0:
            return
        is_open = np.zeros(mesh.num_edges, dtype=bool)
        is_open[open_edges] = True
        gp, gw = EDGE_GAUSS
        s = 0.5 * (gp + 1.0)
        gw = 0.5 * gw
        # local edge k runs from vertex (k+1)%3 to (k+2)%3
        for k in range(3):
            cells = np.flatnonzero(is_open[mesh.triangle_edges[:, k]])
            if cells.size == 0:
                continue
            a, b = (k + 1) % 3, (k + 2) % 3
            xi_a = np.eye(3)[a]
            xi_b = np.eye(3)[b]
            lam = np.outer(1.0 - s, xi_a) + np.outer(s, xi_b)    # barycentric (L0, L1, L2)
            xi = lam[:, 1:]
            phi, _ = p2_basis(xi)
            chi, _ = p1_basis(xi)
            tri = mesh.triangles[cells]
            va = mesh.vertices[tri[:, a]]
            vb = mesh.vertices[tri[:, b]]
            d = vb - va
            length = np.hypot(d[:, 0], d[:, 1])
            normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]   # outward for CCW cells
            base = np.einsum("q,qb,qa->ba", gw, chi, phi)                    # (3, 6)
            for c in range(2):
                E[cells, 12:, 6 * c:6 * c + 6] += (self.config.H * length * normal[:, c])[:, None, None] * base

    def _setup_dirichlet(self):
        sp_, forcing = self.spaces, self.config.forcing
        mesh = sp_.mesh
        if forcing.boundary_velocity is not None:
            vel_nodes = sp_.velocity_nodes_on(Tag.INFLOW, Tag.OUTFLOW, Tag.WALL)
            self._vel_groups = [("all", vel_nodes)]
        else:
            groups = [("inflow", sp_.velocity_nodes_on(Tag.INFLOW))]
            if forcing.wall == "no_slip":
                # wall values override inflow values at shared corners
                groups.append(("wall", sp_.velocity_nodes_on(Tag.WALL)))
            self._vel_groups = groups
        vel_nodes = np.unique(np.concatenate([g[1] for g in self._vel_groups] + [np.zeros(0, dtype=np.int64)]))
        self.eta_vertices = sp_.vertices_on(Tag.OUTFLOW)
        n2 = sp_.n2
        self.dirichlet = np.concatenate([vel_nodes, vel_nodes + n2, self.eta_vertices + sp_.eta_offset]).astype(np.int64)
        self.is_dirichlet = np.zeros(self.ndof, dtype=bool)
        self.is_dirichlet[self.dirichlet] = True
        self.free = np.flatnonzero(~self.is_dirichlet)
        pat = self.pattern
        self._bc_mask = self.is_dirichlet[pat.row_of] | self.is_dirichlet[pat.indices]
        self._bc_diag = pat.locate(self.dirichlet, self.dirichlet)

    def dirichlet_values(self, t: float) -> np.ndarray:
        """Prescribed values for the unknowns listed in :attr:`dirichlet`."""
        cached = getattr(self, "_bc_cache", None)
        if cached is not None and cached[0] == t:
            return cached[1].copy()
        vals = self._dirichlet_values(t)
        self._bc_cache = (t, vals)
        return vals.copy()

    def _dirichlet_values(self, t: float) -> np.ndarray:
        sp_, forcing = self.spaces, self.config.forcing
        n2 = sp_.n2
        vals = np.zeros(self.ndof)
        X = sp_.node_coords
        for name, nodes in self._vel_groups:
            x, y = X[nodes, 0], X[nodes, 1]
            if name == "all":
                u, v = forcing.boundary_velocity(x, y, t)
            elif name == "inflow":
                u, v = forcing.inflow_at(x, y, t)
            else:
                u, v = 0.0, 0.0
            vals[nodes] = u
            vals[nodes + n2] = v
        V = sp_.mesh.vertices[self.eta_vertices]
        vals[self.eta_vertices + sp_.eta_offset] = forcing.eta_at(V[:, 0], V[:, 1], t)
        return vals[self.dirichlet]

    def apply_dirichlet(self, z: np.ndarray, t: float) -> np.ndarray:
        z = z.copy()
        z[self.dirichlet] = self.dirichlet_values(t)
        return z

    # ------------------------------------------------------------- residuals
    def _friction_coefficient(self, ct: FrictionField | None):
        cfg = self.config
        w = self.spaces.quadrature(FRICTION_DEGREE).weights
        if ct is None:
            return np.full(w.shape, cfg.c_b / cfg.H)
        return (cfg.c_b + ct.values) / cfg.H

    def _sources(self, t):
        """Load vector ``<f_u, phi> + <f_eta, chi>`` for prescribed sources."""
        src = self.config.source
        if src is None:
            return np.zeros(self.ndof)
        cached = getattr(self, "_source_cache", None)
        if cached is not None and cached[0] == t:
            return cached[1]
        b = self._assemble_sources(src, t)
        self._source_cache = (t, b)
        return b

    def _assemble_sources(self, src, t):
        sp_ = self.spaces
        q = sp_.quadrature(DEFAULT_DEGREE)
        X, Y = q.points[..., 0], q.points[..., 1]
        loc = np.zeros((len(X), 15))
        if src.momentum is not None:
            fx, fy = src.momentum(X, Y, t)
            loc[:, :6] = np.einsum("tq,qa->ta", q.weights * fx, q.phi)
            loc[:, 6:12] = np.einsum("tq,qa->ta", q.weights * fy, q.phi)
        if src.continuity is not None:
            fe = src.continuity(X, Y, t)
            loc[:, 12:] = np.einsum("tq,qa->ta", q.weights * fe, q.chi)
        return np.bincount(sp_.cell_dofs.ravel(), weights=loc.ravel(), minlength=self.ndof)

    def _nonlinear_vector(self, z, alpha):
        sp_ = self.spaces
        loc = np.zeros((sp_.mesh.num_triangles, 15))
        # advection, degree 4
        q = sp_.quadrature(DEFAULT_DEGREE)
        u, gu = sp_.evaluate_velocity(z, DEFAULT_DEGREE)
        adv = np.einsum("tqd,tqcd->tqc", u, gu) * q.weights[..., None]
        # friction, degree 6
        qf = sp_.quadrature(FRICTION_DEGREE)
        uf, _ = sp_.evaluate_velocity(z, FRICTION_DEGREE, gradient=False)
        speed = np.sqrt(np.sum(uf * uf, axis=-1) + EPS_SPEED ** 2)
        fr = (alpha * speed * qf.weights)[..., None] * uf
        for c in range(2):
            loc[:, 6 * c:6 * c + 6] = adv[..., c] @ q.phi + fr[..., c] @ qf.phi
        return np.bincount(sp_.cell_dofs.ravel(), weights=loc.ravel(), minlength=self.ndof)

    def _nonlinear_matrices(self, z, alpha):
        """Element Jacobians ``(nt, 15, 15)`` of advection and friction."""
        sp_ = self.spaces
        nt = sp_.mesh.num_triangles
        E = np.zeros((nt, 15, 15))
        q = sp_.quadrature(DEFAULT_DEGREE)
        u, gu = sp_.evaluate_velocity(z, DEFAULT_DEGREE)
        w = q.weights
        # d/du_{b,d} of (u . grad u_c) phi_a = phi_b (d_d u_c) phi_a + delta_cd (u . grad phi_b) phi_a
        ugrad = np.einsum("tqd,tqbd->tqb", u, q.dphi)
        conv = np.einsum("tq,qa,tqb->tab", w, q.phi, ugrad)
        pp = np.einsum("qa,qb->qab", q.phi, q.phi)
        react = np.einsum("tq,tqcd,qab->tcdab", w, gu, pp)
        qf = sp_.quadrature(FRICTION_DEGREE)
        uf, _ = sp_.evaluate_velocity(z, FRICTION_DEGREE, gradient=False)
        speed = np.sqrt(np.sum(uf * uf, axis=-1) + EPS_SPEED ** 2)
        aw = alpha * qf.weights
        # d(|u| u_c)/du_d = |u| delta_cd + u_c u_d / |u|
        tens = (aw / speed)[..., None, None] * np.einsum("tqc,tqd->tqcd", uf, uf)
        ppf = np.einsum("qa,qb->qab", qf.phi, qf.phi)
        fr_iso = np.einsum("tq,qab->tab", aw * speed, ppf)
        fr_ani = np.einsum("tqcd,qab->tcdab", tens, ppf)
        for c in range(2):
            for d in range(2):
                blk = react[:, c, d] + fr_ani[:, c, d]
                if c == d:
                    blk = blk + conv + fr_iso
                E[:, 6 * c:6 * c + 6, 6 * d:6 * d + 6] = blk
        return E

    def residual(self, z, ct=None, prev=None, t=0.0) -> np.ndarray:
        """Discrete residual; Dirichlet rows hold ``z_D - g_D(t)``."""
        if z.shape != (self.ndof,):
            raise ShapeMismatch(f"state has shape {z.shape}, expected ({self.ndof},)")
        cfg = self.config
        alpha = self._friction_coefficient(ct)
        R = self.linear_matrix @ z + self._nonlinear_vector(z, alpha) - self._sources(t)
        if cfg.kappa:
            if prev is None or prev.shape != z.shape:
                raise ShapeMismatch("time-dependent residual needs the previous state")
            R += self.mass_matrix @ (z - prev) / cfg.dt
        R[self.dirichlet] = z[self.dirichlet] - self.dirichlet_values(t)
        return R

    def jacobian(self, z, ct=None, dirichlet: bool = True):
        if z.shape != (self.ndof,):
            raise ShapeMismatch(f"state has shape {z.shape}, expected ({self.ndof},)")
        cfg = self.config
        alpha = self._friction_coefficient(ct)
        data = self._lin_data + self.pattern.sum_values(self._nonlinear_matrices(z, alpha))
        if cfg.kappa:
            data = data + self._mass_data / cfg.dt
        if dirichlet:
            data[self._bc_mask] = 0.0
            data[self._bc_diag] = 1.0
        return self.pattern.to_csr(data)

    def time_coupling(self):
        """``dF_{n+1}/dz_n`` for implicit Euler: ``-M/dt`` with constrained rows removed."""
        data = -self._mass_data / self.config.dt
        data = data.copy()
        data[self.is_dirichlet[self.pattern.row_of]] = 0.0
        return self.pattern.to_csr(data)

    # ---------------------------------------------------------------- solvers
    def newton(self, z0, ct=None, prev=None, t=0.0, rtol=1e-9, max_iter=50,
               keep_factor=False, step=None, factor=None, reuse=False) -> State:
        """Damped Newton iteration from ``z0`` with Dirichlet values applied.

        With ``reuse`` the Jacobian factorisation (``factor`` if given) is kept
        across iterations (chord iteration) and refreshed only when the
        residual fails to drop by half in a step. The factorisation last used
        is returned in ``info["factor"]``.
        """
        z = self.apply_dirichlet(z0, t)
        R = self.residual(z, ct, prev, t)
        r0 = np.max(np.abs(R))
        tol = rtol * (1.0 + r0)
        history = [r0]
        growth = 0
        F = factor if reuse else None
        stale = F is not None
        for it in range(max_iter + 1):
            rnorm = history[-1]
            if rnorm <= tol:
                break
            if it == max_iter:
                raise NewtonDiverged(f"Newton did not converge in {max_iter} iterations "
                                     f"(residual {rnorm:.3e}, tolerance {tol:.3e})", step)
            if F is None:
                F, stale = Factorisation(self.jacobian(z, ct)), False
            dz = F.solve(-R)
            alpha = 1.0
            for _ in range(9):
                z_try = z + alpha * dz
                R_try = self.residual(z_try, ct, prev, t)
                r_try = np.max(np.abs(R_try))
                if np.isfinite(r_try) and r_try < rnorm:
                    break
                alpha *= 0.5
            if stale and not (np.isfinite(r_try) and r_try <= 0.5 * rnorm):
                F = None          # reused Jacobian too far off: refactorise and retry
                continue
            if not np.isfinite(r_try):
                raise NewtonDiverged("Newton produced a non-finite residual", step)
            growth = growth + 1 if r_try >= rnorm else 0
            if growth >= 5:
                raise NewtonDiverged("residual grew over 5 consecutive Newton steps", step)
            z, R = z_try, R_try
            history.append(r_try)
            if reuse:
                stale = True
            else:
                F = None
        state = State(z, t, info={"residuals": history, "iterations": len(history) - 1, "factor": F})
        if keep_factor:
            state.factor = Factorisation(self.jacobian(z, ct))
        return state

    def solve_steady(self, ct=None, initial=None, keep_factor=True) -> State:
        if self.config.kappa != 0:
            raise ValueError("solve_steady needs kappa = 0")
        z0 = np.zeros(self.ndof) if initial is None else np.asarray(initial, dtype=float)
        state = self.newton(z0, ct, keep_factor=keep_factor)
        state.info.pop("factor", None)
        return state

    def solve_unsteady(self, ct=None, initial: State | None = None, callback=None,
                       reuse_jacobian: bool = False) -> Trajectory:
        """Implicit Euler from ``initial`` (zero by default) to ``T``.

        ``reuse_jacobian`` carries the Jacobian factorisation across Newton
        iterations and time steps (chord iteration), refreshing it only when
        convergence slows. Converged states satisfy the same tolerance.
        """
        cfg = self.config
        if cfg.kappa != 1:
            raise ValueError("solve_unsteady needs kappa = 1")
        current = initial if initial is not None else State(np.zeros(self.ndof), 0.0)
        states = [current]
        factor = None
        for n in range(1, cfg.num_steps + 1):
            t = n * cfg.dt
            nxt = self.newton(current.z, ct, prev=current.z, t=t, step=n, factor=factor, reuse=reuse_jacobian)
            if reuse_jacobian:
                factor = nxt.info["factor"]
            nxt.info.pop("factor", None)
            states.append(nxt)
            if callback is not None:
                callback(nxt)
            current = nxt
        return Trajectory(states, cfg.dt)


def assemble_residual(state: State, prev: State | None, problem: ShallowWater, c_t=None) -> np.ndarray:
    return problem.residual(state.z, c_t, None if prev is None else prev.z, state.t)


def assemble_jacobian(state: State, problem: ShallowWater, c_t=None):
    return problem.jacobian(state.z, c_t)


def solve_steady(problem: ShallowWater, c_t=None) -> State:
    return problem.solve_steady(c_t)


def solve_unsteady(problem: ShallowWater, c_t=None, initial: State | None = None) -> Trajectory:
    return problem.solve_unsteady(c_t, initial)
