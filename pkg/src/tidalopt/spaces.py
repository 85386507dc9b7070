"""Taylor-Hood function spaces: quadratic velocity, linear free surface.

Global unknown layout is ``[u_x (n2), u_y (n2), eta (nv)]`` where ``n2`` counts
quadratic nodes (vertices first, then edge midpoints in edge order).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, Tag

# Symmetric Gauss rules on the reference triangle (0,0), (1,0), (0,1).
# Weights are normalised to sum to one; multiply by the element area.


def _orbit3(a, w):
    b = 1.0 - 2.0 * a
    return [(a, a), (b, a), (a, b)], [w] * 3


def _orbit6(a, b, w):
    c = 1.0 - a - b
    pts = [(a, b), (b, a), (b, c), (c, b), (a, c), (c, a)]
    return pts, [w] * 6


def _rule(*orbits):
    pts, wts = [], []
    for p, w in orbits:
        pts += p
        wts += w
    return np.array(pts), np.array(wts)


QUADRATURE = {
    4: _rule(_orbit3(0.445948490915965, 0.223381589678011),
             _orbit3(0.091576213509771, 0.109951743655322)),
    6: _rule(_orbit3(0.249286745170910, 0.116786275726379),
             _orbit3(0.063089014491502, 0.050844906370207),
             _orbit6(0.053145049844817, 0.310352451033784, 0.082851075618374)),
}

EDGE_GAUSS = np.polynomial.legendre.leggauss(3)


def p2_basis(xi: np.ndarray):
    """Quadratic Lagrange basis on the reference triangle.

    Returns values ``(nq, 6)`` and reference gradients ``(nq, 6, 2)``; local
    nodes are the three vertices followed by the midpoints of the edges
    opposite vertex 0, 1, 2.
    """
    x, y = xi[:, 0], xi[:, 1]
    L = np.stack([1.0 - x - y, x, y], axis=1)
    dL = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    vals = np.empty((len(xi), 6))
    grads = np.empty((len(xi), 6, 2))
    for i in range(3):
        vals[:, i] = L[:, i] * (2.0 * L[:, i] - 1.0)
        grads[:, i] = (4.0 * L[:, i] - 1.0)[:, None] * dL[i]
    for k, (i, j) in enumerate([(1, 2), (2, 0), (0, 1)]):
        vals[:, 3 + k] = 4.0 * L[:, i] * L[:, j]
        grads[:, 3 + k] = 4.0 * (L[:, j][:, None] * dL[i] + L[:, i][:, None] * dL[j])
    return vals, grads


def p1_basis(xi: np.ndarray):
    x, y = xi[:, 0], xi[:, 1]
    vals = np.stack([1.0 - x - y, x, y], axis=1)
    grads = np.broadcast_to(np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (len(xi), 3, 2))
    return vals, grads


@dataclass
class CellQuadrature:
    """Basis data for one quadrature rule, pushed forward to every cell."""

    weights: np.ndarray   # (nt, nq) physical weights, area included
    points: np.ndarray    # (nt, nq, 2)
    phi: np.ndarray       # (nq, 6)
    dphi: np.ndarray      # (nt, nq, 6, 2)
    chi: np.ndarray       # (nq, 3)
    dchi: np.ndarray      # (nt, 3, 2), constant per cell
    dphi_ref: np.ndarray  # (nq, 6, 2) reference-cell gradients


@dataclass(eq=False)
class FunctionSpacePair:
    mesh: Mesh
    cell_p2: np.ndarray        # (nt, 6) quadratic node numbers
    node_coords: np.ndarray    # (n2, 2)
    area: np.ndarray           # (nt,)
    inv_jac: np.ndarray        # (nt, 2, 2)
    _quad: dict = field(default_factory=dict, repr=False)

    @property
    def n2(self) -> int:
        return len(self.node_coords)

    @property
    def nv(self) -> int:
        return self.mesh.num_vertices

    @property
    def num_velocity_dofs(self) -> int:
        return 2 * self.n2

    @property
    def num_surface_dofs(self) -> int:
        return self.nv

    @property
    def ndof(self) -> int:
        return 2 * self.n2 + self.nv

    @property
    def eta_offset(self) -> int:
        return 2 * self.n2

    @property
    def cell_dofs(self) -> np.ndarray:
        """(nt, 15) global unknowns per cell: 6 u_x, 6 u_y, 3 eta."""
        c = self._quad.get("cell_dofs")
        if c is None:
            c = np.hstack([self.cell_p2, self.cell_p2 + self.n2, self.mesh.triangles + self.eta_offset])
            self._quad["cell_dofs"] = c
        return c

    def quadrature(self, degree: int) -> CellQuadrature:
        q = self._quad.get(degree)
        if q is None:
            q = self._build_quadrature(degree)
            self._quad[degree] = q
        return q

    def _build_quadrature(self, degree):
        xi, w = QUADRATURE[degree]
        phi, dphi_ref = p2_basis(xi)
        chi, dchi_ref = p1_basis(xi)
        # physical gradient = inv(J)^T grad_ref
        dphi = np.einsum("tji,qaj->tqai", self.inv_jac, dphi_ref)
        dchi = np.einsum("tji,aj->tai", self.inv_jac, dchi_ref[0])
        v = self.mesh.vertices[self.mesh.triangles]
        pts = v[:, None, 0] + np.einsum("qk,tkd->tqd", xi, np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=1))
        weights = self.area[:, None] * w[None, :]
        return CellQuadrature(weights, pts, phi, dphi, chi, dchi, dphi_ref)

    def velocity_nodes_on(self, *tags: Tag) -> np.ndarray:
        """Quadratic nodes (vertices and midpoints) lying on edges with ``tags``."""
        mesh = self.mesh
        e = mesh.edges_with_tag(*tags)
        return np.unique(np.concatenate([mesh.edges[e].ravel(), mesh.num_vertices + e]))

    def vertices_on(self, *tags: Tag) -> np.ndarray:
        mesh = self.mesh
        return np.unique(mesh.edges[mesh.edges_with_tag(*tags)].ravel())

    def dirichlet_velocity_dofs(self, *tags: Tag) -> np.ndarray:
        nodes = self.velocity_nodes_on(*tags)
        return np.concatenate([nodes, nodes + self.n2])

    def dirichlet_surface_dofs(self, *tags: Tag) -> np.ndarray:
        return self.vertices_on(*tags) + self.eta_offset

    def split(self, z: np.ndarray):
        """Views ``(u_x, u_y, eta)`` into a global coefficient vector."""
        n2 = self.n2
        return z[:n2], z[n2:2 * n2], z[2 * n2:]

    def interpolate(self, velocity, eta) -> np.ndarray:
        """Nodal interpolation of callables ``velocity(x, y) -> (ux, uy)`` and ``eta(x, y)``."""
        z = np.zeros(self.ndof)
        X = self.node_coords
        ux, uy = velocity(X[:, 0], X[:, 1])
        z[:self.n2] = ux
        z[self.n2:2 * self.n2] = uy
        V = self.mesh.vertices
        z[2 * self.n2:] = eta(V[:, 0], V[:, 1])
        return z

    def evaluate_velocity(self, z: np.ndarray, degree: int, gradient: bool = True):
        """Velocity at quadrature points: values ``(nt, nq, 2)`` and gradients ``(nt, nq, 2, 2)``.

        The gradient is ``None`` when ``gradient`` is false.
        """
        q = self.quadrature(degree)
        ux, uy, _ = self.split(z)
        coef = np.stack([ux[self.cell_p2], uy[self.cell_p2]], axis=-1)      # (nt, 6, 2)
        val = q.phi @ coef
        if not gradient:
            return val, None
        nq = len(q.phi)
        ref = (q.dphi_ref.transpose(0, 2, 1).reshape(2 * nq, 6) @ coef).reshape(-1, nq, 2, 2)   # (t, q, j, c)
        grad = ref.transpose(0, 1, 3, 2) @ self.inv_jac[:, None]                               # (t, q, c, i)
        return val, grad

    def evaluate_surface(self, z: np.ndarray, degree: int):
        q = self.quadrature(degree)
        eta = z[2 * self.n2:][self.mesh.triangles]                            # (nt, 3)
        return eta @ q.chi.T, np.einsum("tad,ta->td", q.dchi, eta)


def build_spaces(mesh: Mesh) -> FunctionSpacePair:
    nv = mesh.num_vertices
    cell_p2 = np.hstack([mesh.triangles, nv + mesh.triangle_edges])
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    node_coords = np.vstack([mesh.vertices, mids])
    v = mesh.vertices[mesh.triangles]
    jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)   # columns are edge vectors
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1] / det
    inv[:, 1, 1] = jac[:, 0, 0] / det
    inv[:, 0, 1] = -jac[:, 0, 1] / det
    inv[:, 1, 0] = -jac[:, 1, 0] / det
    return FunctionSpacePair(mesh, cell_p2, node_coords, 0.5 * det, inv)
