"""Structured triangulations of rectangular channels.

Meshes are tensor-product grids split along the lower-left to upper-right
diagonal. A rectangular turbine site can be resolved with a finer spacing;
the spacing grows linearly back to the outer size over a transition band.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateSize, MeshError, SiteOutsideDomain


class Tag(enum.IntEnum):
    INFLOW = 1
    OUTFLOW = 2
    WALL = 3


DEFAULT_SIDE_TAGS = {"left": Tag.INFLOW, "right": Tag.OUTFLOW,
                     "bottom": Tag.WALL, "top": Tag.WALL}


@dataclass(frozen=True)
class Rect:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    @classmethod
    def coerce(cls, value) -> "Rect | None":
        if value is None or isinstance(value, Rect):
            return value
        return cls(*map(float, value))

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def contains(self, other: "Rect", tol: float = 1e-9) -> bool:
        return (other.xmin >= self.xmin - tol and other.xmax <= self.xmax + tol
                and other.ymin >= self.ymin - tol and other.ymax <= self.ymax + tol)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with tagged boundary edges.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counter-clockwise
    edges : (ne, 2) int array, each row sorted ascending
    triangle_edges : (nt, 3) int array; local edge ``k`` is opposite local vertex ``k``
    edge_tags : (ne,) int array, 0 on interior edges and a :class:`Tag` value on
        boundary edges
    site : optional :class:`Rect` marking the finely resolved turbine site
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    triangle_edges: np.ndarray
    edge_tags: np.ndarray
    site: Rect | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tags)

    def edges_with_tag(self, *tags: Tag) -> np.ndarray:
        return np.flatnonzero(np.isin(self.edge_tags, [int(t) for t in tags]))

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def bounding_box(self) -> Rect:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return Rect(lo[0], hi[0], lo[1], hi[1])

    def tag_of(self, i: int, j: int) -> Tag | None:
        """Tag of the edge joining vertices ``i`` and ``j`` (None if interior)."""
        lookup = self._cache.get("edge_lookup")
        if lookup is None:
            lookup = {tuple(e): k for k, e in enumerate(self.edges.tolist())}
            self._cache["edge_lookup"] = lookup
        k = lookup[(min(i, j), max(i, j))]
        return Tag(self.edge_tags[k]) if self.edge_tags[k] else None


def _build_edges(triangles: np.ndarray):
    local = np.array([[1, 2], [2, 0], [0, 1]])
    pairs = np.sort(triangles[:, local].reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    triangle_edges = inverse.reshape(-1, 3)
    return edges, triangle_edges, counts


def build_mesh(vertices, triangles, tagger, site=None) -> Mesh:
    """Assemble a :class:`Mesh` from raw arrays.

    ``tagger`` either maps boundary edge endpoint pairs to tags (dict keyed by
    sorted vertex pairs) or is a callable ``tagger(midpoints) -> tags``.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2 or triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError("vertices must be (n, 2) and triangles (m, 3)")
    if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        raise MeshError("triangle references a vertex that does not exist")
    edges, triangle_edges, counts = _build_edges(triangles)
    if np.any(counts > 2):
        raise MeshError("non-manifold edge shared by more than two triangles")
    boundary = np.flatnonzero(counts == 1)
    edge_tags = np.zeros(len(edges), dtype=np.int64)
    if callable(tagger):
        mid = 0.5 * (vertices[edges[boundary, 0]] + vertices[edges[boundary, 1]])
        edge_tags[boundary] = np.asarray(tagger(mid), dtype=np.int64)
    else:
        for k in boundary:
            key = (int(edges[k, 0]), int(edges[k, 1]))
            if key not in tagger:
                raise MeshError(f"boundary edge {key} carries no tag")
            edge_tags[k] = int(tagger[key])
    if np.any(edge_tags[boundary] == 0):
        raise MeshError("every boundary edge needs a tag")
    mesh = Mesh(vertices, triangles, edges, triangle_edges, edge_tags, Rect.coerce(site))
    if np.any(mesh.signed_areas() <= 0):
        raise MeshError("triangles must have positive signed area")
    return mesh


def _graded_sizes(length: float, h_near: float, h_far: float) -> list[float]:
    """Cell sizes for a segment next to the site, starting from the site side."""
    if length <= 0:
        return []
    sizes: list[float] = []
    n_band = max(int(round(h_far / h_near)) - 1, 0)
    for k in range(1, n_band + 1):
        if sum(sizes) >= length:
            break
        sizes.append(h_near + (h_far - h_near) * k / (n_band + 1))
    rest = length - sum(sizes)
    if rest > 0:
        sizes.extend([h_far] * math.ceil(rest / h_far - 1e-12))
    # ceil above guarantees sum >= length, so this only ever shrinks cells
    scale = length / sum(sizes)
    return [s * scale for s in sizes]


def _axis_nodes(length: float, h_out: float, lo: float | None, hi: float | None, h_in: float) -> np.ndarray:
    if lo is None:
        n = math.ceil(length / h_out - 1e-12)
        return np.linspace(0.0, length, n + 1)
    n_in = math.ceil((hi - lo) / h_in - 1e-12)
    inner = np.linspace(lo, hi, n_in + 1)
    left = np.cumsum(_graded_sizes(lo, h_in, h_out))
    right = np.cumsum(_graded_sizes(length - hi, h_in, h_out))
    nodes = np.concatenate([lo - left[::-1], inner, hi + right])
    nodes[0], nodes[-1] = 0.0, length
    return nodes


def _side_tagger(width: float, height: float, side_tags: dict):
    tol = 1e-9 * max(width, height)

    def tagger(mid):
        tags = np.full(len(mid), int(side_tags["bottom"]))
        tags[np.abs(mid[:, 1] - height) < tol] = int(side_tags["top"])
        tags[np.abs(mid[:, 0]) < tol] = int(side_tags["left"])
        tags[np.abs(mid[:, 0] - width) < tol] = int(side_tags["right"])
        return tags

    return tagger


def generate_channel_mesh(width: float, height: float, h_out: float, site=None,
                          h_in: float | None = None, side_tags: dict | None = None,
                          h_y: float | None = None, symmetric: bool = False) -> Mesh:
    """Triangulate ``[0, width] x [0, height]`` with an optional refined site.

    Parameters
    ----------
    width, height : float
        Domain extent in metres.
    h_out : float
        Cell size outside the site.
    site : Rect or (xmin, xmax, ymin, ymax), optional
        Region meshed with cell size ``h_in``.
    h_in : float, optional
        Cell size inside the site; defaults to ``h_out``.
    side_tags : dict, optional
        Tags for the ``left``, ``right``, ``bottom`` and ``top`` sides. Defaults to
        inflow on the left, outflow on the right and walls elsewhere.
    h_y : float, optional
        Cell size in y outside the site, for anisotropic meshes; defaults to ``h_out``.
    symmetric : bool
        Make the mesh exactly mirror-symmetric about ``y = height / 2`` by
        flipping the cell diagonals in the upper half. Needs an even number
        of cell rows (and a site centred in y).
    """
    h_in = h_out if h_in is None else h_in
    h_y = h_out if h_y is None else h_y
    if min(width, height, h_out, h_in, h_y) <= 0:
        raise DegenerateSize("lengths must be positive")
    if h_in > h_out:
        raise DegenerateSize("h_in must not exceed h_out")
    site = Rect.coerce(site)
    domain = Rect(0.0, width, 0.0, height)
    if site is not None:
        if site.width <= 0 or site.height <= 0:
            raise DegenerateSize("site rectangle has no area")
        if not domain.contains(site):
            raise SiteOutsideDomain(f"site {site} is not inside {domain}")
        xs = _axis_nodes(width, h_out, site.xmin, site.xmax, h_in)
        ys = _axis_nodes(height, h_y, site.ymin, site.ymax, h_in)
    else:
        xs = _axis_nodes(width, h_out, None, None, h_in)
        ys = _axis_nodes(height, h_y, None, None, h_in)

    nx, ny = len(xs) - 1, len(ys) - 1
    if symmetric:
        if ny % 2 or not np.allclose(ys, height - ys[::-1], atol=1e-9 * height):
            raise DegenerateSize("a symmetric mesh needs an even number of rows mirrored about the centreline")
        ys = 0.5 * (ys + (height - ys[::-1]))
        ys[ny // 2] = 0.5 * height
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    v00 = (j * (nx + 1) + i).ravel()
    v10, v01 = v00 + 1, v00 + nx + 1
    v11 = v01 + 1
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])
    if symmetric:
        # upper half uses the other diagonal so reflection maps cells to cells
        upper = np.repeat((j.ravel() >= ny // 2), 2)
        flipped = np.empty_like(triangles)
        flipped[0::2] = np.column_stack([v00, v10, v01])
        flipped[1::2] = np.column_stack([v10, v11, v01])
        triangles[upper] = flipped[upper]
    tags = dict(DEFAULT_SIDE_TAGS, **(side_tags or {}))
    tags = {k: Tag[v.upper()] if isinstance(v, str) else Tag(v) for k, v in tags.items()}
    return build_mesh(vertices, triangles, _side_tagger(width, height, tags), site)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four similar children via edge midpoints."""
    nv = mesh.num_vertices
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    a, b, c = mesh.triangles.T
    m0, m1, m2 = (nv + mesh.triangle_edges).T  # opposite a, b, c
    children = np.stack([
        np.column_stack([a, m2, m1]),
        np.column_stack([m2, b, m0]),
        np.column_stack([m1, m0, c]),
        np.column_stack([m0, m1, m2]),
    ], axis=1).reshape(-1, 3)
    tagger = {}
    for k in mesh.boundary_edges:
        i, j = mesh.edges[k]
        m = nv + k
        tagger[(min(i, m), max(i, m))] = mesh.edge_tags[k]
        tagger[(min(j, m), max(j, m))] = mesh.edge_tags[k]
    return build_mesh(vertices, children, tagger, mesh.site)


def mesh_stats(mesh: Mesh) -> dict:
    p = mesh.vertices[mesh.triangles]
    angles = []
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return {
        "num_vertices": mesh.num_vertices,
        "num_edges": mesh.num_edges,
        "num_triangles": mesh.num_triangles,
        "min_angle": float(np.min(angles)),
        "h_max": float(mesh.edge_lengths().max()),
    }


def max_edge_length_in(mesh: Mesh, region: Rect, inside: bool = True) -> float:
    """Longest edge whose midpoint lies inside (or outside) ``region``."""
    mid = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    mask = ((mid[:, 0] > region.xmin) & (mid[:, 0] < region.xmax)
            & (mid[:, 1] > region.ymin) & (mid[:, 1] < region.ymax))
    if not inside:
        mask = ~mask
    lengths = mesh.edge_lengths()[mask]
    return float(lengths.max()) if lengths.size else 0.0


def write_tfmesh(mesh: Mesh, path) -> None:
    lines = ["tfmesh 1", f"vertices {mesh.num_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.num_triangles}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    bnd = mesh.boundary_edges
    lines.append(f"boundary {len(bnd)}")
    lines += [f"{mesh.edges[k, 0]} {mesh.edges[k, 1]} {Tag(mesh.edge_tags[k]).name}" for k in bnd]
    Path(path).write_text("\n".join(lines) + "\n")


def read_tfmesh(path, site=None) -> Mesh:
    tokens = Path(path).read_text().split()
    pos = 0

    def take(n):
        nonlocal pos
        out = tokens[pos:pos + n]
        if len(out) < n:
            raise MeshError(f"{path}: unexpected end of file")
        pos += n
        return out

    def section(name):
        key, count = take(2)
        if key != name:
            raise MeshError(f"{path}: expected section '{name}', found '{key}'")
        return int(count)

    if take(2) != ["tfmesh", "1"]:
        raise MeshError(f"{path}: missing 'tfmesh 1' header")
    nv = section("vertices")
    vertices = np.array(take(2 * nv), dtype=float).reshape(nv, 2)
    nt = section("triangles")
    triangles = np.array(take(3 * nt), dtype=np.int64).reshape(nt, 3)
    nb = section("boundary")
    raw = take(3 * nb)
    tagger = {}
    for i, j, tag in zip(raw[0::3], raw[1::3], raw[2::3]):
        try:
            tagger[(min(int(i), int(j)), max(int(i), int(j)))] = Tag[tag.upper()]
        except KeyError:
            raise MeshError(f"{path}: unknown boundary tag {tag!r}") from None
    return build_mesh(vertices, triangles, tagger, site)
