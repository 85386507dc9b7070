import numpy as np

from tidalopt.io import read_layout, write_layout, write_rows, write_vtk
from tidalopt.turbine import TurbineFarm


def test_layout_round_trip(tmp_path):
    farm = TurbineFarm([[1.25, 2.5], [3.0, 4.125]], [21.0, 7.5])
    write_layout(tmp_path / "l.csv", farm)
    pos, K = read_layout(tmp_path / "l.csv")
    assert np.array_equal(pos, farm.positions) and np.array_equal(K, farm.frictions)


def test_rows_keep_full_precision(tmp_path):
    write_rows(tmp_path / "r.csv", ["a", "b"], [(0.1 + 0.2, "x")])
    assert float((tmp_path / "r.csv").read_text().splitlines()[1].split(",")[0]) == 0.1 + 0.2


def test_vtk_counts(tmp_path, coarse_spaces):
    z = np.zeros(coarse_spaces.ndof)
    farm = TurbineFarm([[320.0, 160.0]], 21.0)
    write_vtk(tmp_path / "f.vtk", coarse_spaces, z, farm)
    lines = (tmp_path / "f.vtk").read_text().splitlines()
    mesh = coarse_spaces.mesh
    assert f"POINTS {mesh.num_vertices} double" in lines
    assert f"CELLS {mesh.num_triangles} {4 * mesh.num_triangles}" in lines
    start = lines.index("SCALARS turbine_friction double 1") + 2
    friction = np.array(lines[start:start + mesh.num_vertices], dtype=float)
    assert friction.max() == 21.0 and friction.min() == 0.0
