import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hjbfem.mesh import (
    Mesh,
    MeshError,
    TopologyError,
    bisect_marked,
    build_edge_topology,
    is_conforming,
    polygon_mesh,
    read_mesh,
    refinement_closure,
    square_mesh,
    uniform_refine,
    write_mesh,
)


def check_invariants(mesh):
    assert np.all(mesh.areas > 0)
    topo = build_edge_topology(mesh)
    assert is_conforming(mesh)
    # every triangle edge is listed once, as interior or boundary
    assert len(topo.interior) + len(topo.boundary) == topo.n_edges
    slots = 3 * mesh.n_triangles
    assert 2 * len(topo.interior) + len(topo.boundary) == slots
    assert np.all(topo.left != topo.right)
    d = mesh.vertices[topo.edges[topo.interior, 1]] - mesh.vertices[topo.edges[topo.interior, 0]]
    assert np.allclose(topo.lengths, np.linalg.norm(d, axis=1))
    assert np.all(topo.lengths > 0)
    assert np.allclose(np.linalg.norm(topo.normals, axis=1), 1.0)
    # normal points from the left triangle towards the right one
    cl = mesh.coordinates()[topo.left].mean(axis=1)
    cr = mesh.coordinates()[topo.right].mean(axis=1)
    assert np.all(np.einsum("ek,ek->e", cr - cl, topo.normals) > 0)
    # Euler's formula for a simply connected polygon
    assert mesh.n_vertices - topo.n_edges + mesh.n_triangles == 1


def test_two_triangle_square_topology():
    m = square_mesh(1)
    topo = m.topology
    assert m.n_triangles == 2
    assert len(topo.interior) == 1
    assert len(topo.boundary) == 4
    assert topo.lengths[0] == pytest.approx(np.sqrt(2))


def test_single_triangle_topology():
    m = Mesh.from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    assert len(m.topology.interior) == 0
    assert len(m.topology.boundary) == 3


@pytest.mark.parametrize("diagonal", ["right", "alternating"])
def test_two_by_two_grid_has_eight_interior_edges(diagonal):
    m = square_mesh(2, diagonal)
    assert m.n_triangles == 8
    assert len(m.topology.interior) == 8
    check_invariants(m)


def test_edge_shared_by_three_triangles_is_rejected():
    verts = [[0, 0], [1, 0], [0.5, 1], [0.5, -1], [0.5, 0.5]]
    m = Mesh(verts, [[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    with pytest.raises(TopologyError):
        build_edge_topology(m)
    assert not is_conforming(m)


def test_negative_area_is_rejected():
    with pytest.raises(MeshError):
        Mesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])


def test_from_arrays_fixes_orientation_and_peak():
    m = Mesh.from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])
    # longest edge (1,0)-(0,1) is opposite the right-angle vertex, which becomes local 0
    assert m.triangles[0, 0] == 0
    assert m.areas[0] > 0


def test_uniform_refine_counts():
    m = square_mesh(1)
    r = uniform_refine(m)
    assert r.n_triangles == 8
    assert r.n_vertices == 9
    assert uniform_refine(r).n_triangles == 32
    check_invariants(r)


def test_uniform_refine_halves_diameter_and_keeps_area():
    m = square_mesh(3, "alternating")
    r = uniform_refine(m)
    assert r.diameters().max() == pytest.approx(0.5 * m.diameters().max())
    assert r.areas.sum() == pytest.approx(m.areas.sum())
    # children are similar to the parent
    assert np.allclose(np.sort(r.min_angles())[::4], np.sort(m.min_angles()))


def test_bisect_one_triangle_forces_neighbour():
    m = square_mesh(1)
    r = bisect_marked(m, marked_triangles={0})
    assert r.n_triangles == 4
    check_invariants(r)


def test_bisect_empty_marks_leaves_mesh_unchanged():
    m = square_mesh(2)
    r = bisect_marked(m)
    assert np.array_equal(r.triangles, m.triangles)
    assert np.array_equal(r.vertices, m.vertices)


def test_bisected_children_are_nested_in_parents():
    m = square_mesh(2)
    r = bisect_marked(m, marked_triangles={0, 5})
    assert r.parent is not None
    c = r.coordinates().mean(axis=1)
    P = m.coordinates()[r.parent]
    assert np.all(_inside(c, P))
    assert np.allclose(np.bincount(r.parent, weights=r.areas, minlength=m.n_triangles), m.areas)


def _inside(points, tris, tol=1e-12):
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]

    def cross(u, v):
        return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

    s1 = cross(b - a, points - a)
    s2 = cross(c - b, points - b)
    s3 = cross(a - c, points - c)
    return (s1 >= -tol) & (s2 >= -tol) & (s3 >= -tol)


def test_closure_marks_refinement_edges():
    m = square_mesh(2)
    marked = refinement_closure(m, marked_edges=[m.topology.interior[0]])
    te = m.topology.tri_edges
    touched = marked[te].any(axis=1)
    assert np.all(marked[te[touched, 0]])


def test_edge_marking_refines_both_neighbours():
    m = square_mesh(2)
    e = m.topology.interior[3]
    r = bisect_marked(m, marked_edges=[e])
    topo = m.topology
    k = np.flatnonzero(topo.interior == e)[0]
    for t in (topo.left[k], topo.right[k]):
        assert np.count_nonzero(r.parent == t) >= 2
    check_invariants(r)


def test_generation_tracks_bisections():
    m = square_mesh(1)
    r = bisect_marked(m, marked_triangles={0, 1})
    assert np.all(r.generation == 1)
    r2 = bisect_marked(r, marked_triangles=range(r.n_triangles))
    assert np.all(r2.generation == 2)


def test_repeated_bisection_keeps_angles_bounded():
    m = square_mesh(2)
    angle0 = m.min_angles().min()
    for _ in range(8):
        # refine around the origin
        c = m.coordinates().mean(axis=1)
        near = np.argsort(np.linalg.norm(c, axis=1))[:3]
        m = bisect_marked(m, marked_triangles=near)
    check_invariants(m)
    assert m.min_angles().min() >= angle0 - 1e-12


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(1, 4),
    diagonal=st.sampled_from(["right", "alternating"]),
    rounds=st.integers(1, 4),
    seed=st.integers(0, 2 ** 32 - 1),
)
def test_random_bisection_stays_conforming_and_nested(n, diagonal, rounds, seed):
    rng = np.random.default_rng(seed)
    m = square_mesh(n, diagonal)
    for _ in range(rounds):
        tris = rng.choice(m.n_triangles, size=rng.integers(0, m.n_triangles + 1), replace=False)
        edges = rng.choice(m.topology.n_edges, size=rng.integers(0, 3), replace=False)
        r = bisect_marked(m, set(tris.tolist()), set(edges.tolist()))
        check_invariants(r)
        assert r.n_triangles >= m.n_triangles + (1 if len(tris) or len(edges) else 0)
        assert r.areas.sum() == pytest.approx(m.areas.sum())
        c = r.coordinates().mean(axis=1)
        assert np.all(_inside(c, m.coordinates()[r.parent]))
        m = r


def test_polygon_mesh_fan():
    hexagon = [[np.cos(t), np.sin(t)] for t in np.linspace(0, 2 * np.pi, 7)[:-1]]
    m = polygon_mesh(hexagon)
    assert m.n_triangles == 6
    check_invariants(m)
    with pytest.raises(MeshError):
        polygon_mesh([[0, 0], [1, 0]])


def test_mesh_file_roundtrip(tmp_path):
    m = bisect_marked(square_mesh(2), marked_triangles={1, 2})
    write_mesh(m, tmp_path / "mesh.txt")
    r = read_mesh(tmp_path / "mesh.txt")
    assert np.array_equal(r.triangles, m.triangles)
    assert np.array_equal(r.vertices, m.vertices)


def test_read_mesh_rejects_garbage(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("3 1\n0 0\n1 0\n")
    with pytest.raises(MeshError):
        read_mesh(p)


def test_mesh_arrays_are_read_only():
    m = square_mesh(1)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 3.0
