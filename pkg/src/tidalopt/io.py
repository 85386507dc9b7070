"""File outputs: legacy VTK fields, layout and power CSVs."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .turbine import TurbineFarm, friction_at


def write_vtk(path, spaces, z: np.ndarray, farm: TurbineFarm | None = None, title: str = "tidalopt") -> None:
    """Legacy ASCII unstructured grid of the mesh vertices.

    Point data: ``velocity`` (3 components, z = 0), ``eta`` and
    ``turbine_friction``. Quadratic velocity is sampled at the vertices.
    """
    mesh = spaces.mesh
    ux, uy, eta = spaces.split(z)
    nv, nt = mesh.num_vertices, mesh.num_triangles
    V = mesh.vertices
    friction = np.zeros(nv) if farm is None or farm.num_turbines == 0 else friction_at(farm, V[:, 0], V[:, 1])
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {nv} double"]
    lines += [f"{x:.10g} {y:.10g} 0" for x, y in V]
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    lines.append(f"POINT_DATA {nv}")
    lines.append("VECTORS velocity double")
    lines += [f"{u:.10g} {v:.10g} 0" for u, v in zip(ux[:nv], uy[:nv])]
    for name, values in (("eta", eta), ("turbine_friction", friction)):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{s:.10g}" for s in values]
    Path(path).write_text("\n".join(lines) + "\n")


def write_layout(path, farm: TurbineFarm) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "x", "y", "K"])
        for i, ((x, y), K) in enumerate(zip(farm.positions, farm.frictions)):
            w.writerow([i, repr(float(x)), repr(float(y)), repr(float(K))])


def read_layout(path) -> tuple:
    """Return ``(positions, frictions)`` from a layout CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    pos = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
    return pos, np.array([float(r["K"]) for r in rows])


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path, data: dict) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
