"""Continuous Lagrange finite element spaces of degree 2, 3 and 4."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, _EDGE_VERTS
from .quadrature import triangle_rule

SUPPORTED_DEGREES = (2, 3, 4)

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class ConfigurationError(ValueError):
    pass


class GeometryError(ValueError):
    pass


def _monomial_exponents(p):
    return [(a, d - a) for d in range(p + 1) for a in range(d, -1, -1)]


def _powers(x, n):
    out = [np.ones_like(x)]
    for _ in range(n):
        out.append(out[-1] * x)
    return out


def _monomials(points, p):
    """Monomials x^a y^b (a + b <= p) with first and second derivatives."""
    x = points[..., 0]
    y = points[..., 1]
    px = _powers(x, p)
    py = _powers(y, p)
    zero = np.zeros_like(x)
    vals, gx, gy, hxx, hxy, hyy = [], [], [], [], [], []
    for a, b in _monomial_exponents(p):
        vals.append(px[a] * py[b])
        gx.append(a * px[a - 1] * py[b] if a >= 1 else zero)
        gy.append(b * px[a] * py[b - 1] if b >= 1 else zero)
        hxx.append(a * (a - 1) * px[a - 2] * py[b] if a >= 2 else zero)
        hyy.append(b * (b - 1) * px[a] * py[b - 2] if b >= 2 else zero)
        hxy.append(a * b * px[a - 1] * py[b - 1] if a >= 1 and b >= 1 else zero)
    vals = np.stack(vals, axis=-1)
    grads = np.stack([np.stack(gx, -1), np.stack(gy, -1)], axis=-1)
    hxx, hxy, hyy = (np.stack(h, -1) for h in (hxx, hxy, hyy))
    hess = np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], axis=-2)
    return vals, grads, hess


@lru_cache(maxsize=None)
def reference_nodes(p):
    """Lagrange nodes: vertices, then nodes of local edges 0, 1, 2 (running
    from local vertex (i+1)%3 to (i+2)%3), then interior nodes."""
    nodes = [REF_VERTICES[i] for i in range(3)]
    for a, b in _EDGE_VERTS:
        for k in range(1, p):
            nodes.append(REF_VERTICES[a] + (k / p) * (REF_VERTICES[b] - REF_VERTICES[a]))
    for j in range(1, p):
        for k in range(1, p - j):
            nodes.append(np.array([j / p, k / p]))
    out = np.array(nodes)
    out.flags.writeable = False
    return out


class LagrangeBasis:
    """Nodal basis of degree ``p`` on the reference triangle."""

    def __init__(self, p):
        if p not in SUPPORTED_DEGREES:
            raise ConfigurationError(f"unsupported degree {p}; choose from {SUPPORTED_DEGREES}")
        self.degree = p
        self.nodes = reference_nodes(p)
        self.n_local = len(self.nodes)
        vander, _, _ = _monomials(self.nodes, p)
        self.coeffs = np.linalg.inv(vander)

    def evaluate(self, points):
        """Values (..., nloc), gradients (..., nloc, 2), Hessians (..., nloc, 2, 2)."""
        points = np.asarray(points, dtype=float)
        v, g, h = _monomials(points, self.degree)
        C = self.coeffs
        vals = v @ C
        grads = np.einsum("...mk,mi->...ik", g, C)
        hess = np.einsum("...mkl,mi->...ikl", h, C)
        return vals, grads, hess


@lru_cache(maxsize=None)
def lagrange_basis(p) -> LagrangeBasis:
    return LagrangeBasis(p)


def eval_basis(degree, barycentric):
    """Tabulate the reference basis at barycentric point(s).

    Returns values, gradients and Hessians with respect to the reference
    coordinates (x, y) = (lambda_1, lambda_2).
    """
    bary = np.asarray(barycentric, dtype=float)
    if np.any(bary < -1e-14) or np.any(np.abs(bary.sum(axis=-1) - 1.0) > 1e-12):
        raise ValueError("barycentric coordinates must be nonnegative and sum to 1")
    return lagrange_basis(degree).evaluate(bary[..., 1:3])


def affine_maps(mesh: Mesh):
    """Origins (nt, 2), Jacobians (nt, 2, 2), inverses and determinants."""
    p = mesh.coordinates()
    x0 = p[:, 0]
    J = np.stack([p[:, 1] - x0, p[:, 2] - x0], axis=2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(det <= 0.0):
        raise GeometryError("degenerate or inverted triangle")
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1] / det
    Jinv[:, 1, 1] = J[:, 0, 0] / det
    Jinv[:, 0, 1] = -J[:, 0, 1] / det
    Jinv[:, 1, 0] = -J[:, 1, 0] / det
    return x0, J, Jinv, det


def physical_derivatives(Jinv, ref_grads, ref_hess=None):
    """Chain rule through an affine map with inverse Jacobian ``Jinv``.

    ``Jinv`` has shape (..., 2, 2) and broadcasts against the leading axes of
    the reference arrays; gradients transform with ``Jinv^T`` and Hessians by
    congruence ``Jinv^T H Jinv``.
    """
    Jinv = np.asarray(Jinv, dtype=float)
    if np.any(~np.isfinite(Jinv)):
        raise GeometryError("degenerate triangle")
    grads = np.einsum("...k,...kj->...j", ref_grads, Jinv)
    if ref_hess is None:
        return grads
    hess = np.einsum("...ki,...kl,...lj->...ij", Jinv, ref_hess, Jinv)
    return grads, hess


class FeSpace:
    """Continuous degree-``p`` Lagrange space on a mesh.

    Global numbering: mesh vertices, then ``p - 1`` nodes per edge ordered
    from the lower to the higher vertex index, then interior nodes per
    triangle.
    """

    def __init__(self, mesh: Mesh, degree: int):
        self.mesh = mesh
        self.degree = degree
        self.basis = lagrange_basis(degree)
        self.topology = mesh.topology
        self.x0, self.J, self.Jinv, self.detJ = affine_maps(mesh)
        self._build_dofs()

    def _build_dofs(self):
        p = self.degree
        mesh, topo = self.mesh, self.topology
        nv, ne, nt = mesh.n_vertices, topo.n_edges, mesh.n_triangles
        ni = (p - 1) * (p - 2) // 2
        cols = [mesh.triangles]
        for i, (a, b) in enumerate(_EDGE_VERTS):
            e = topo.tri_edges[:, i]
            forward = mesh.triangles[:, a] < mesh.triangles[:, b]
            k = np.arange(p - 1)
            kk = np.where(forward[:, None], k[None, :], (p - 2 - k)[None, :])
            cols.append(nv + e[:, None] * (p - 1) + kk)
        cols.append(nv + ne * (p - 1) + np.arange(nt)[:, None] * ni + np.arange(ni)[None, :])
        self.dof_map = np.ascontiguousarray(np.hstack(cols))
        self.n_dofs = nv + ne * (p - 1) + nt * ni

        bpairs = topo.boundary_vertex_pairs
        bdofs = [bpairs.ravel()]
        if p > 1:
            bdofs.append(
                (nv + topo.boundary[:, None] * (p - 1) + np.arange(p - 1)[None, :]).ravel()
            )
        self.boundary_dofs = np.unique(np.concatenate(bdofs))
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.boundary_dofs] = False
        self.interior_dofs = np.flatnonzero(mask)

        coords = np.empty((self.n_dofs, 2))
        phys = self.map_points(self.basis.nodes)
        coords[self.dof_map.ravel()] = phys.reshape(-1, 2)
        self.node_coords = coords
        for arr in (self.dof_map, self.boundary_dofs, self.interior_dofs, self.node_coords):
            arr.flags.writeable = False

    @property
    def n_local(self):
        return self.basis.n_local

    def map_points(self, ref_points, elements=None):
        """Physical coordinates of reference points, shape (nt, nq, 2)."""
        sl = slice(None) if elements is None else elements
        return self.x0[sl, None, :] + np.einsum("tij,qj->tqi", self.J[sl], ref_points)

    def tabulate(self, ref_points):
        return self.basis.evaluate(ref_points)

    def zero(self):
        return DiscreteFunction(self, np.zeros(self.n_dofs))

    def __repr__(self):
        return f"FeSpace(degree={self.degree}, n_dofs={self.n_dofs}, mesh={self.mesh!r})"


class DiscreteFunction:
    """Coefficient vector over a :class:`FeSpace`."""

    def __init__(self, space: FeSpace, coeffs=None):
        self.space = space
        if coeffs is None:
            coeffs = np.zeros(space.n_dofs)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.n_dofs,):
            raise ValueError(f"expected {space.n_dofs} coefficients, got {coeffs.shape}")
        self.coeffs = coeffs

    def local_coeffs(self, elements=None):
        dm = self.space.dof_map if elements is None else self.space.dof_map[elements]
        return self.coeffs[dm]

    def evaluate_reference(self, ref_points, elements=None, derivatives=2):
        """Values, gradients and Hessians at reference points of each element.

        Returns arrays of shape (nt, nq), (nt, nq, 2), (nt, nq, 2, 2).
        """
        sp_ = self.space
        phi, dphi, ddphi = sp_.tabulate(ref_points)
        c = self.local_coeffs(elements)
        sl = slice(None) if elements is None else elements
        Jinv = sp_.Jinv[sl][:, None]
        vals = c @ phi.T
        g_ref = np.einsum("ti,qik->tqk", c, dphi)
        grads = physical_derivatives(Jinv, g_ref)
        if derivatives < 2:
            return vals, grads, None
        h_ref = np.einsum("ti,qikl->tqkl", c, ddphi)
        hess = np.einsum("tqki,tqkl,tqlj->tqij", np.broadcast_to(Jinv, h_ref.shape),
                         h_ref, np.broadcast_to(Jinv, h_ref.shape))
        return vals, grads, hess

    def __add__(self, other):
        return DiscreteFunction(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return DiscreteFunction(self.space, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return DiscreteFunction(self.space, scalar * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self):
        return DiscreteFunction(self.space, -self.coeffs)


def interpolate(space: FeSpace, g) -> DiscreteFunction:
    """Nodal interpolant of a vectorised callable ``g(points) -> values``."""
    vals = np.asarray(g(space.node_coords), dtype=float)
    return DiscreteFunction(space, np.broadcast_to(vals, (space.n_dofs,)).copy())


def mass_matrix(space: FeSpace, degree=None):
    rule = triangle_rule(degree or 2 * space.degree)
    phi, _, _ = space.tabulate(rule.points)
    local = np.einsum("q,qi,qj->ij", rule.weights, phi, phi)
    data = space.detJ[:, None, None] * local[None]
    n = space.n_local
    rows = np.repeat(space.dof_map, n, axis=1).ravel()
    cols = np.tile(space.dof_map, (1, n)).ravel()
    return sp.csr_matrix((data.ravel(), (rows, cols)), shape=(space.n_dofs,) * 2)


def l2_project(space: FeSpace, g, degree=None) -> DiscreteFunction:
    """Global L2 projection of ``g`` onto the space."""
    rule = triangle_rule(degree or 2 * space.degree + 2)
    phi, _, _ = space.tabulate(rule.points)
    x = space.map_points(rule.points)
    gq = np.asarray(g(x.reshape(-1, 2)), dtype=float).reshape(x.shape[:2])
    local = np.einsum("q,tq,qi->ti", rule.weights, gq, phi) * space.detJ[:, None]
    rhs = np.bincount(space.dof_map.ravel(), weights=local.ravel(), minlength=space.n_dofs)
    M = mass_matrix(space).tocsc()
    return DiscreteFunction(space, spla.spsolve(M, rhs))


def boundary_datum(space: FeSpace, g, method="interpolate") -> DiscreteFunction:
    """A function g_h in V_h whose trace is the discrete Dirichlet datum.

    ``method="interpolate"`` interpolates ``g`` at every node (the trace is the
    nodal interpolant on the boundary); ``method="l2"`` uses the global L2
    projection of ``g``.
    """
    if method == "interpolate":
        return interpolate(space, g)
    if method == "l2":
        return l2_project(space, g)
    raise ConfigurationError(f"unknown boundary datum method {method!r}")


def prolong(coarse: DiscreteFunction, fine_space: FeSpace) -> DiscreteFunction:
    """Interpolate a function on the parent mesh at the nodes of a child mesh.

    ``fine_space.mesh.parent`` must index triangles of ``coarse.space.mesh``;
    on nested meshes this reproduces the coarse function exactly.
    """
    cs = coarse.space
    parent = fine_space.mesh.parent
    if parent is None:
        raise ValueError("fine mesh carries no parent map")
    x = fine_space.map_points(fine_space.basis.nodes)  # (nt, nloc, 2)
    rel = x - cs.x0[parent][:, None, :]
    ref = np.einsum("tij,tqj->tqi", cs.Jinv[parent], rel)
    phi, _, _ = cs.basis.evaluate(ref)  # (nt, nloc_f, nloc_c)
    vals = np.einsum("tqi,ti->tq", phi, coarse.coeffs[cs.dof_map[parent]])
    out = np.empty(fine_space.n_dofs)
    out[fine_space.dof_map.ravel()] = vals.ravel()
    return DiscreteFunction(fine_space, out)


def write_function(u: DiscreteFunction, path) -> None:
    lines = [f"{u.space.n_dofs} {u.space.degree}"] + [f"{c:.17g}" for c in u.coeffs]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_coefficients(path):
    """Return (degree, coefficient vector) from a solution file."""
    tokens = open(path).read().split()
    n, p = int(tokens[0]), int(tokens[1])
    coeffs = np.array(tokens[2:], dtype=float)
    if len(coeffs) != n:
        raise ValueError(f"{path}: expected {n} coefficients, found {len(coeffs)}")
    return p, coeffs
