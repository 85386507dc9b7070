import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tidalopt.errors import DegenerateSize, MeshError, SiteOutsideDomain
from tidalopt.mesh import (Rect, Tag, generate_channel_mesh, max_edge_length_in, mesh_stats,
                           read_tfmesh, refine_uniform, write_tfmesh)

from conftest import SITE, unit_square


def test_uniform_channel_counts():
    m = generate_channel_mesh(640, 320, 40)
    assert (m.num_triangles, m.num_vertices, m.num_edges) == (256, 153, 408)
    s = mesh_stats(m)
    assert s["num_vertices"] - s["num_edges"] + s["num_triangles"] + 1 == 2


def test_area_and_orientation():
    m = generate_channel_mesh(640, 320, 20, site=SITE, h_in=4)
    assert np.all(m.signed_areas() > 0)
    assert m.signed_areas().sum() == pytest.approx(204800.0, rel=1e-9)


def test_site_edge_bound():
    m = generate_channel_mesh(640, 320, 20, site=SITE, h_in=2)
    assert max_edge_length_in(m, Rect(*SITE)) <= 2 * np.sqrt(2) + 1e-9
    # outside the site no edge exceeds the outer cell diagonal
    assert max_edge_length_in(m, Rect(*SITE), inside=False) <= 20 * np.sqrt(2) + 1e-9


def test_boundary_tags_partition():
    m = generate_channel_mesh(640, 320, 40, site=SITE, h_in=10)
    boundary = m.boundary_edges
    assert np.all(m.edge_tags[boundary] > 0)
    mid = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
    assert np.allclose(mid[m.edges_with_tag(Tag.INFLOW), 0], 0.0)
    assert np.allclose(mid[m.edges_with_tag(Tag.OUTFLOW), 0], 640.0)
    walls = mid[m.edges_with_tag(Tag.WALL), 1]
    assert np.all(np.isclose(walls, 0.0) | np.isclose(walls, 320.0))
    # boundary length adds up to the perimeter
    assert m.edge_lengths()[boundary].sum() == pytest.approx(2 * (640 + 320))


def test_side_tag_override():
    m = generate_channel_mesh(640, 320, 80, side_tags={"right": "wall"})
    assert m.edges_with_tag(Tag.OUTFLOW).size == 0


def test_errors():
    with pytest.raises(SiteOutsideDomain):
        generate_channel_mesh(640, 320, 40, site=(600, 700, 10, 20), h_in=10)
    with pytest.raises(DegenerateSize):
        generate_channel_mesh(0, 320, 40)
    with pytest.raises(DegenerateSize):
        generate_channel_mesh(640, 320, -1)
    with pytest.raises(DegenerateSize):
        generate_channel_mesh(640, 320, 10, site=SITE, h_in=20)


def test_deterministic():
    a = generate_channel_mesh(640, 320, 40, site=SITE, h_in=8)
    b = generate_channel_mesh(640, 320, 40, site=SITE, h_in=8)
    assert a.vertices.tobytes() == b.vertices.tobytes()
    assert a.triangles.tobytes() == b.triangles.tobytes()


def test_unit_square_stats():
    s = mesh_stats(unit_square())
    assert (s["num_vertices"], s["num_edges"], s["num_triangles"]) == (4, 5, 2)
    assert s["min_angle"] == pytest.approx(45.0)


def test_refine_uniform():
    m = unit_square()
    r = refine_uniform(m)
    assert r.num_triangles == 8
    assert r.num_vertices == m.num_vertices + m.num_edges
    rr = refine_uniform(r)
    assert rr.num_triangles == 32
    assert rr.signed_areas().sum() == pytest.approx(1.0, rel=1e-12)
    assert np.all(rr.signed_areas() > 0)
    # children of the inflow edge stay inflow
    assert len(rr.edges_with_tag(Tag.INFLOW)) == 4


def test_symmetric_mesh_is_mirror_image():
    m = generate_channel_mesh(640, 320, 40, site=SITE, h_in=8, symmetric=True)
    V = m.vertices
    key = lambda P: {tuple(sorted(map(tuple, np.round(P[t], 9)))) for t in m.triangles}
    R = V.copy()
    R[:, 1] = 320.0 - R[:, 1]
    assert key(V) == key(R)
    assert np.all(m.signed_areas() > 0)
    with pytest.raises(DegenerateSize):
        generate_channel_mesh(640, 320, 40, site=(160, 480, 80, 200), h_in=8, symmetric=True)


def test_tfmesh_round_trip(tmp_path):
    m = generate_channel_mesh(640, 320, 80, site=SITE, h_in=20)
    path = tmp_path / "m.tfmesh"
    write_tfmesh(m, path)
    assert path.read_text().startswith("tfmesh 1\nvertices ")
    back = read_tfmesh(path)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.edge_tags, m.edge_tags)


def test_tfmesh_bad_header(tmp_path):
    p = tmp_path / "bad.tfmesh"
    p.write_text("mesh 2\n")
    with pytest.raises(MeshError):
        read_tfmesh(p)


@settings(max_examples=25, deadline=None)
@given(w=st.floats(50, 1000), h=st.floats(50, 1000), frac=st.floats(0.05, 0.5))
def test_area_property(w, h, frac):
    m = generate_channel_mesh(w, h, min(w, h) * frac)
    assert np.all(m.signed_areas() > 0)
    assert m.signed_areas().sum() == pytest.approx(w * h, rel=1e-9)
    s = mesh_stats(m)
    assert s["num_vertices"] - s["num_edges"] + s["num_triangles"] == 1
