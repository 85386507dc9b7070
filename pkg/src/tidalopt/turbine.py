"""Smooth bump-function turbines and the friction field they induce."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRange, ShapeMismatch
from .mesh import Rect

# Inside this distance of the support edge the bump is returned as exactly zero.
_EDGE_CUTOFF = 1.0 - 1e-12


class Mode(str, enum.Enum):
    POSITIONS = "positions"
    POSITIONS_AND_FRICTIONS = "positions_and_frictions"


def bump_1d(p, r, x):
    """Compactly supported bump ``exp(1 - 1/(1 - s^2))`` with ``s = (x - p)/r``."""
    s2 = ((np.asarray(x, dtype=float) - p) / r) ** 2
    inside = s2 < _EDGE_CUTOFF
    out = np.zeros(np.shape(s2))
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s2[inside]))
    return out if out.ndim else float(out)


def bump_1d_dcentre(p, r, x):
    """Derivative of :func:`bump_1d` with respect to the centre ``p``."""
    s = (np.asarray(x, dtype=float) - p) / r
    s2 = s * s
    inside = s2 < _EDGE_CUTOFF
    out = np.zeros(np.shape(s))
    si, qi = s[inside], 1.0 - s2[inside]
    out[inside] = np.exp(1.0 - 1.0 / qi) * 2.0 * si / (qi * qi * r)
    return out if out.ndim else float(out)


@dataclass
class TurbineFarm:
    """Turbine centres, friction coefficients and the parameter encoding.

    The parameter vector is ``[x1, y1, ..., xN, yN]`` for
    :attr:`Mode.POSITIONS` and ``[K1, ..., KN, x1, y1, ..., xN, yN]`` when the
    friction coefficients are design variables too.
    """

    positions: np.ndarray
    frictions: np.ndarray
    radius: float = 10.0
    mode: Mode = Mode.POSITIONS
    site: Rect | None = None

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float).reshape(-1, 2)
        self.frictions = np.broadcast_to(np.asarray(self.frictions, dtype=float),
                                         (len(self.positions),)).copy()
        self.mode = Mode(self.mode)
        self.site = Rect.coerce(self.site)
        if self.radius <= 0:
            raise ValueError("turbine radius must be positive")
        if np.any(self.frictions < 0):
            raise ValueError("friction coefficients must be non-negative")

    @property
    def num_turbines(self) -> int:
        return len(self.positions)

    @property
    def num_params(self) -> int:
        n = 2 * self.num_turbines
        return n + self.num_turbines if self.mode is Mode.POSITIONS_AND_FRICTIONS else n

    @property
    def position_slice(self) -> slice:
        start = self.num_turbines if self.mode is Mode.POSITIONS_AND_FRICTIONS else 0
        return slice(start, start + 2 * self.num_turbines)

    def to_params(self) -> np.ndarray:
        pos = self.positions.ravel()
        if self.mode is Mode.POSITIONS_AND_FRICTIONS:
            return np.concatenate([self.frictions, pos])
        return pos.copy()

    def with_params(self, m) -> "TurbineFarm":
        m = np.asarray(m, dtype=float)
        if m.shape != (self.num_params,):
            raise ShapeMismatch(f"expected {self.num_params} parameters, got {m.shape}")
        frictions = self.frictions
        if self.mode is Mode.POSITIONS_AND_FRICTIONS:
            frictions = np.maximum(m[:self.num_turbines], 0.0)
        return TurbineFarm(m[self.position_slice].reshape(-1, 2), frictions, self.radius, self.mode, self.site)

    def param_role(self, j: int):
        """Return ``(kind, turbine)`` with kind in ``{"K", "x", "y"}``."""
        if not 0 <= j < self.num_params:
            raise IndexOutOfRange(f"parameter index {j} outside 0..{self.num_params - 1}")
        if self.mode is Mode.POSITIONS_AND_FRICTIONS:
            if j < self.num_turbines:
                return "K", j
            j -= self.num_turbines
        return ("x", "y")[j % 2], j // 2


def friction_at(farm: TurbineFarm, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    total = np.zeros(np.broadcast(x, y).shape)
    for (px, py), K in zip(farm.positions, farm.frictions):
        total = total + K * bump_1d(px, farm.radius, x) * bump_1d(py, farm.radius, y)
    return total if total.ndim else float(total)


def friction_derivative_at(farm: TurbineFarm, param_index: int, x, y):
    kind, i = farm.param_role(param_index)
    px, py = farm.positions[i]
    r, K = farm.radius, farm.frictions[i]
    if kind == "K":
        out = bump_1d(px, r, x) * bump_1d(py, r, y)
    elif kind == "x":
        out = K * bump_1d_dcentre(px, r, x) * bump_1d(py, r, y)
    else:
        out = K * bump_1d(px, r, x) * bump_1d_dcentre(py, r, y)
    return out if np.ndim(out) else float(out)


@dataclass
class TurbinePatch:
    """One turbine's footprint on the quadrature points of nearby cells."""

    cells: np.ndarray       # indices of cells whose bounding box meets the support
    psi_x: np.ndarray       # (k, nq)
    psi_y: np.ndarray
    dpsi_x: np.ndarray      # derivative w.r.t. the centre coordinate
    dpsi_y: np.ndarray


@dataclass
class FrictionField:
    """Turbine friction ``c_t`` sampled at the quadrature points of every cell."""

    farm: TurbineFarm
    degree: int
    values: np.ndarray      # (nt, nq)
    patches: list = field(default_factory=list)

    @classmethod
    def build(cls, farm: TurbineFarm, spaces, degree: int = 6) -> "FrictionField":
        q = spaces.quadrature(degree)
        mesh = spaces.mesh
        cache = spaces._quad.setdefault("cell_bbox", {})
        if "lo" not in cache:
            v = mesh.vertices[mesh.triangles]
            cache["lo"], cache["hi"] = v.min(axis=1), v.max(axis=1)
        lo, hi = cache["lo"], cache["hi"]
        values = np.zeros(q.weights.shape)
        patches = []
        r = farm.radius
        for (px, py), K in zip(farm.positions, farm.frictions):
            cells = np.flatnonzero((hi[:, 0] > px - r) & (lo[:, 0] < px + r)
                                   & (hi[:, 1] > py - r) & (lo[:, 1] < py + r))
            X = q.points[cells, :, 0]
            Y = q.points[cells, :, 1]
            patch = TurbinePatch(cells, bump_1d(px, r, X), bump_1d(py, r, Y),
                                 bump_1d_dcentre(px, r, X), bump_1d_dcentre(py, r, Y))
            np.add.at(values, cells, K * patch.psi_x * patch.psi_y)
            patches.append(patch)
        return cls(farm, degree, values, patches)

    @classmethod
    def zero(cls, spaces, degree: int = 6) -> "FrictionField":
        farm = TurbineFarm(np.zeros((0, 2)), np.zeros(0))
        return cls(farm, degree, np.zeros(spaces.quadrature(degree).weights.shape))

    def contract(self, weights: np.ndarray) -> np.ndarray:
        """Return ``sum_q dc_t/dm_j (q) * weights(q)`` for every design parameter ``j``.

        ``weights`` is an ``(nt, nq)`` array. Cost is proportional to the number
        of cells under each turbine, not to the mesh size.
        """
        farm = self.farm
        n = farm.num_turbines
        dK = np.empty(n)
        dpos = np.empty((n, 2))
        for i, (p, K) in enumerate(zip(self.patches, farm.frictions)):
            w = weights[p.cells]
            dK[i] = np.sum(p.psi_x * p.psi_y * w)
            dpos[i, 0] = K * np.sum(p.dpsi_x * p.psi_y * w)
            dpos[i, 1] = K * np.sum(p.psi_x * p.dpsi_y * w)
        if farm.mode is Mode.POSITIONS_AND_FRICTIONS:
            return np.concatenate([dK, dpos.ravel()])
        return dpos.ravel()

    def per_turbine(self, weights: np.ndarray) -> np.ndarray:
        """Integral of each turbine's own friction against ``weights``."""
        return np.array([K * np.sum(p.psi_x * p.psi_y * weights[p.cells])
                         for p, K in zip(self.patches, self.farm.frictions)])


def regular_grid_layout(site: Rect, nx: int, ny: int) -> np.ndarray:
    """Centres of an ``nx x ny`` grid spread evenly over the site."""
    site = Rect.coerce(site)
    xs = site.xmin + (np.arange(nx) + 0.5) * site.width / nx
    ys = site.ymin + (np.arange(ny) + 0.5) * site.height / ny
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])
