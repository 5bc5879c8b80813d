"""Conforming triangulations with newest-vertex-bisection bookkeeping.

Triangles are stored counter-clockwise with the *newest vertex* in local
position 0.  The refinement edge of a triangle is therefore always its local
edge 0, i.e. the edge joining local vertices 1 and 2.  Local edge ``i`` is the
edge opposite local vertex ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Invalid mesh geometry or topology."""


class TopologyError(MeshError):
    """An edge is shared by more than two triangles."""


# local edge i joins local vertices _EDGE_VERTS[i]
_EDGE_VERTS = np.array([[1, 2], [2, 0], [0, 1]])


def _signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    d1 = p1 - p0
    d2 = p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


class Mesh:
    """Immutable conforming triangulation of a polygon.

    Parameters
    ----------
    vertices : (nv, 2) array_like
    triangles : (nt, 3) array_like of int
        Counter-clockwise vertex triples, newest vertex first.
    generation : (nt,) array_like of int, optional
        Number of bisections separating each triangle from the initial mesh.
    parent : (nt,) array_like of int, optional
        Index of the triangle in the previous mesh that contains each triangle.
        ``None`` for an initial mesh.
    """

    def __init__(self, vertices, triangles, generation=None, parent=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (nv, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (nt, 3)")
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise MeshError("triangle references a missing vertex")
        areas = _signed_areas(self.vertices, self.triangles)
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise MeshError(f"triangle {bad} has non-positive signed area {areas[bad]:.3e}")
        self.areas = areas
        nt = len(self.triangles)
        self.generation = (
            np.zeros(nt, dtype=np.int64) if generation is None
            else np.asarray(generation, dtype=np.int64)
        )
        self.parent = None if parent is None else np.asarray(parent, dtype=np.int64)
        for arr in (self.vertices, self.triangles, self.areas, self.generation):
            arr.flags.writeable = False
        self._topology = None

    @classmethod
    def from_arrays(cls, vertices, triangles, refinement_edges=None):
        """Build a mesh from arbitrary triangles.

        Orientation is fixed to counter-clockwise.  Without explicit
        ``refinement_edges`` (local edge index per triangle) the longest edge of
        each triangle becomes its refinement edge.
        """
        vertices = np.asarray(vertices, dtype=float)
        tris = np.array(triangles, dtype=np.int64, copy=True)
        if refinement_edges is None:
            p = vertices[tris]
            lengths = np.stack(
                [np.linalg.norm(p[:, b] - p[:, a], axis=1) for a, b in _EDGE_VERTS], axis=1
            )
            # ties resolved towards the lowest local index
            refinement_edges = np.argmax(lengths - 1e-12 * np.arange(3), axis=1)
        r = np.asarray(refinement_edges, dtype=np.int64)
        if np.any((r < 0) | (r > 2)):
            raise MeshError("refinement edge index must be 0, 1 or 2")
        idx = (np.arange(3)[None, :] + r[:, None]) % 3
        tris = np.take_along_axis(tris, idx, axis=1)
        neg = _signed_areas(vertices, tris) < 0
        tris[neg] = tris[neg][:, [0, 2, 1]]
        return cls(vertices, tris)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def topology(self) -> "EdgeTopology":
        if self._topology is None:
            self._topology = build_edge_topology(self)
        return self._topology

    def coordinates(self):
        """Vertex coordinates per triangle, shape (nt, 3, 2)."""
        return self.vertices[self.triangles]

    def diameters(self):
        p = self.coordinates()
        return np.max(
            [np.linalg.norm(p[:, b] - p[:, a], axis=1) for a, b in _EDGE_VERTS], axis=0
        )

    def min_angles(self):
        p = self.coordinates()
        out = np.full(self.n_triangles, np.pi)
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            out = np.minimum(out, np.arccos(np.clip(cos, -1.0, 1.0)))
        return out

    def __repr__(self):
        return f"Mesh(n_vertices={self.n_vertices}, n_triangles={self.n_triangles})"


@dataclass(frozen=True)
class EdgeTopology:
    """Edge structure of a mesh.

    ``edges`` holds every edge once as a sorted vertex pair; ``tri_edges[t, i]``
    is the edge index of local edge ``i`` of triangle ``t``.  Interior edge
    arrays are aligned with ``interior``; the normal points from the left
    triangle to the right triangle.
    """

    edges: np.ndarray
    tri_edges: np.ndarray
    interior: np.ndarray
    left: np.ndarray
    right: np.ndarray
    left_local: np.ndarray
    right_local: np.ndarray
    normals: np.ndarray
    lengths: np.ndarray
    boundary: np.ndarray
    boundary_owner: np.ndarray
    boundary_local: np.ndarray

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def interior_vertex_pairs(self):
        return self.edges[self.interior]

    @property
    def boundary_vertex_pairs(self):
        return self.edges[self.boundary]


def build_edge_topology(mesh: Mesh) -> EdgeTopology:
    """Classify the edges of ``mesh`` into interior and boundary edges.

    Raises
    ------
    TopologyError
        If some edge is shared by more than two triangles.
    """
    tris = mesh.triangles
    nt = len(tris)
    local = tris[:, _EDGE_VERTS]  # (nt, 3, 2)
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if np.any(counts > 2):
        bad = edges[np.argmax(counts)]
        raise TopologyError(f"edge {tuple(bad)} is shared by {counts.max()} triangles")
    tri_edges = inverse.reshape(nt, 3)

    order = np.argsort(inverse, kind="stable")
    sorted_edges = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_edges[1:] != sorted_edges[:-1]
    first_slot = order[first]  # slot index (3*t + i) of first occurrence per edge
    second_slot = np.full(len(edges), -1)
    dup = ~first
    second_slot[sorted_edges[dup]] = order[dup]

    interior = np.flatnonzero(counts == 2)
    boundary = np.flatnonzero(counts == 1)
    lslot = first_slot[interior]
    rslot = second_slot[interior]
    left, left_local = lslot // 3, lslot % 3
    right, right_local = rslot // 3, rslot % 3

    va = mesh.vertices[tris[left, _EDGE_VERTS[left_local, 0]]]
    vb = mesh.vertices[tris[left, _EDGE_VERTS[left_local, 1]]]
    d = vb - va
    lengths = np.linalg.norm(d, axis=1)
    normals = np.stack([d[:, 1], -d[:, 0]], axis=1) / lengths[:, None]
    bslot = first_slot[boundary]
    return EdgeTopology(
        edges=edges,
        tri_edges=tri_edges,
        interior=interior,
        left=left,
        right=right,
        left_local=left_local,
        right_local=right_local,
        normals=normals,
        lengths=lengths,
        boundary=boundary,
        boundary_owner=bslot // 3,
        boundary_local=bslot % 3,
    )


def is_conforming(mesh: Mesh, tol=1e-12) -> bool:
    """True if no vertex lies in the relative interior of a boundary edge.

    A hanging node always produces such a configuration, because the long
    edge and the two short edges it is split into each belong to one triangle
    only.
    """
    try:
        topo = build_edge_topology(mesh)
    except TopologyError:
        return False
    pairs = topo.boundary_vertex_pairs
    a = mesh.vertices[pairs[:, 0]]
    b = mesh.vertices[pairs[:, 1]]
    d = b - a
    L2 = np.sum(d * d, axis=1)
    for start in range(0, len(pairs), 256):
        sl = slice(start, start + 256)
        rel = mesh.vertices[None, :, :] - a[sl, None, :]
        t = np.einsum("evk,ek->ev", rel, d[sl]) / L2[sl, None]
        cross = rel[..., 0] * d[sl, None, 1] - rel[..., 1] * d[sl, None, 0]
        on = (np.abs(cross) <= tol * L2[sl, None]) & (t > tol) & (t < 1 - tol)
        if np.any(on):
            return False
    return True


def uniform_refine(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle is split into four similar children.

    Each child's refinement edge is the edge parallel to the parent's
    refinement edge, which keeps later bisections shape regular.
    """
    topo = mesh.topology
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[topo.edges[:, 0]] + mesh.vertices[topo.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    t = mesh.triangles
    m = nv + topo.tri_edges  # m[:, i] is the midpoint of the edge opposite vertex i
    v0, v1, v2 = t[:, 0], t[:, 1], t[:, 2]
    m0, m1, m2 = m[:, 0], m[:, 1], m[:, 2]
    children = np.stack(
        [
            np.stack([v0, m2, m1], axis=1),
            np.stack([m2, v1, m0], axis=1),
            np.stack([m1, m0, v2], axis=1),
            np.stack([m0, m1, m2], axis=1),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.n_triangles), 4)
    return Mesh(vertices, children, generation=np.repeat(mesh.generation + 2, 4), parent=parent)


def refinement_closure(mesh: Mesh, marked_triangles=(), marked_edges=()) -> np.ndarray:
    """Boolean mask over ``mesh.topology.edges`` of edges that must be bisected."""
    topo = mesh.topology
    marked = np.zeros(topo.n_edges, dtype=bool)
    mt = np.asarray(sorted(marked_triangles), dtype=np.int64)
    me = np.asarray(sorted(marked_edges), dtype=np.int64)
    if mt.size:
        marked[topo.tri_edges[mt, 0]] = True
    if me.size:
        marked[me] = True
    while True:
        touched = marked[topo.tri_edges].any(axis=1)
        missing = touched & ~marked[topo.tri_edges[:, 0]]
        if not missing.any():
            return marked
        marked[topo.tri_edges[missing, 0]] = True


def bisect_marked(mesh: Mesh, marked_triangles=(), marked_edges=()) -> Mesh:
    """Newest vertex bisection of marked triangles and edges, with closure.

    ``marked_edges`` are indices into ``mesh.topology.edges``.  Every marked
    triangle and every triangle containing a marked edge is bisected through
    its refinement edge; the closure keeps the result conforming.
    """
    marked = refinement_closure(mesh, marked_triangles, marked_edges)
    if not marked.any():
        return Mesh(
            mesh.vertices, mesh.triangles, generation=mesh.generation,
            parent=np.arange(mesh.n_triangles),
        )
    topo = mesh.topology
    nv = mesh.n_vertices
    edge_ids = np.flatnonzero(marked)
    mid_index = np.full(topo.n_edges, -1, dtype=np.int64)
    mid_index[edge_ids] = nv + np.arange(len(edge_ids))
    mids = 0.5 * (mesh.vertices[topo.edges[edge_ids, 0]] + mesh.vertices[topo.edges[edge_ids, 1]])
    vertices = np.vstack([mesh.vertices, mids])

    t = mesh.triangles
    te = topo.tri_edges
    gen = mesh.generation
    mk = marked[te]  # (nt, 3)
    parents, ranks, kids, gens = [], [], [], []

    def emit(sel, rank, tri, g):
        parents.append(np.flatnonzero(sel))
        ranks.append(np.full(sel.sum(), rank))
        kids.append(tri)
        gens.append(g)

    keep = ~mk[:, 0]
    emit(keep, 0, t[keep], gen[keep])
    cut = mk[:, 0]
    P, B1, B2 = t[:, 0], t[:, 1], t[:, 2]
    M = mid_index[te[:, 0]]
    # child (M, P, B1) has refinement edge P-B1 = parent edge 2
    left_once = cut & ~mk[:, 2]
    emit(left_once, 1, np.stack([M, P, B1], axis=1)[left_once], gen[left_once] + 1)
    left_twice = cut & mk[:, 2]
    M2 = mid_index[te[:, 2]]
    emit(left_twice, 1, np.stack([M2, M, P], axis=1)[left_twice], gen[left_twice] + 2)
    emit(left_twice, 2, np.stack([M2, B1, M], axis=1)[left_twice], gen[left_twice] + 2)
    # child (M, B2, P) has refinement edge B2-P = parent edge 1
    right_once = cut & ~mk[:, 1]
    emit(right_once, 3, np.stack([M, B2, P], axis=1)[right_once], gen[right_once] + 1)
    right_twice = cut & mk[:, 1]
    M1 = mid_index[te[:, 1]]
    emit(right_twice, 3, np.stack([M1, M, B2], axis=1)[right_twice], gen[right_twice] + 2)
    emit(right_twice, 4, np.stack([M1, P, M], axis=1)[right_twice], gen[right_twice] + 2)

    parent = np.concatenate(parents)
    rank = np.concatenate(ranks)
    order = np.lexsort((rank, parent))
    return Mesh(
        vertices,
        np.concatenate(kids)[order],
        generation=np.concatenate(gens)[order],
        parent=parent[order],
    )


def square_mesh(n, diagonal="right", lower=(0.0, 0.0), upper=(1.0, 1.0)) -> Mesh:
    """``n`` x ``n`` squares, each split into two right-angled triangles.

    ``diagonal="right"`` uses the same diagonal in every square;
    ``diagonal="alternating"`` flips it in a checkerboard pattern so that for
    even ``n`` all diagonals of a 2x2 block meet at the block centre.
    """
    if n < 1:
        raise MeshError("n must be positive")
    xs = np.linspace(lower[0], upper[0], n + 1)
    ys = np.linspace(lower[1], upper[1], n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
    tris = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 1, a + n + 2
            flip = diagonal == "alternating" and (i + j) % 2 == 1
            if diagonal not in ("right", "alternating"):
                raise MeshError(f"unknown diagonal pattern {diagonal!r}")
            if flip:
                tris += [(a, b, c), (b, d, c)]
            else:
                tris += [(a, b, d), (a, d, c)]
    return Mesh.from_arrays(vertices, tris)


def polygon_mesh(polygon) -> Mesh:
    """Fan triangulation of a convex polygon around its vertex centroid."""
    poly = np.asarray(polygon, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
        raise MeshError("polygon needs at least three 2D vertices")
    c = poly.mean(axis=0)
    vertices = np.vstack([poly, c])
    k = len(poly)
    tris = [(k, i, (i + 1) % k) for i in range(k)]
    return Mesh.from_arrays(vertices, tris)


def write_mesh(mesh: Mesh, path) -> None:
    """Write ``V T`` header, vertex lines and ``i j k r`` triangle lines."""
    lines = [f"{mesh.n_vertices} {mesh.n_triangles}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{i} {j} {k} 0" for i, j, k in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    tokens = Path(path).read_text().split()
    try:
        nv, nt = int(tokens[0]), int(tokens[1])
        body = tokens[2:]
        vertices = np.array(body[: 2 * nv], dtype=float).reshape(nv, 2)
        rows = np.array(body[2 * nv: 2 * nv + 4 * nt], dtype=np.int64).reshape(nt, 4)
    except (IndexError, ValueError) as exc:
        raise MeshError(f"malformed mesh file {path}") from exc
    if len(body) != 2 * nv + 4 * nt:
        raise MeshError(f"malformed mesh file {path}: unexpected token count")
    return Mesh.from_arrays(vertices, rows[:, :3], refinement_edges=rows[:, 3])
