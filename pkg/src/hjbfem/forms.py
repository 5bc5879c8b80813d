"""Discrete forms of the C0 interior penalty scheme.

The nonlinear form is

    a_h(u; v) = sum_K int_K F_gamma[u] Lap v
                + sum_e sigma/h_e int_e [du/dn] [dv/dn],

and for a fixed policy (one control per volume quadrature point) the linear
forms a_alpha, l_alpha replace F_gamma[u] by gamma A : D^2 u - gamma f.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .mesh import _EDGE_VERTS
from .problem import ControlProblem
from .quadrature import edge_rule, triangle_rule
from .space import (REF_VERTICES, SUPPORTED_DEGREES, ConfigurationError, DiscreteFunction,
                    FeSpace, physical_derivatives)

DEFAULT_SIGMA = {2: 10.0, 3: 50.0, 4: 100.0}


@dataclass(frozen=True)
class SchemeParams:
    """Penalty, degree, quadrature orders and iteration controls."""

    degree: int = 2
    sigma: float | None = None
    quad_degree: int | None = None
    edge_quad_degree: int | None = None
    linear_tol: float = 1e-12
    tol: float = 1e-10
    itermax: int = 50
    boundary_method: str = "interpolate"
    workers: int = 1
    strict_cordes: bool = False

    def __post_init__(self):
        if self.degree not in SUPPORTED_DEGREES:
            raise ConfigurationError(
                f"unsupported degree {self.degree}; choose from {SUPPORTED_DEGREES}")
        if self.sigma is None:
            object.__setattr__(self, "sigma", DEFAULT_SIGMA.get(self.degree, 100.0))
        if self.quad_degree is None:
            object.__setattr__(self, "quad_degree", 2 * self.degree)
        if self.edge_quad_degree is None:
            object.__setattr__(self, "edge_quad_degree", 2 * self.degree)
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.itermax < 1:
            raise ValueError("itermax must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class Policy:
    """Control chosen at each volume quadrature point, with gamma A and gamma f."""

    index: np.ndarray  # (nt, nq)
    gamma_A: np.ndarray  # (nt, nq, 2, 2)
    gamma_f: np.ndarray  # (nt, nq)

    def same_as(self, other):
        return other is not None and np.array_equal(self.index, other.index) and (
            np.array_equal(self.gamma_A, other.gamma_A)
        )


def _compact(H):
    """(..., 2, 2) symmetric -> (..., 3) as (xx, xy, yy)."""
    return np.stack([H[..., 0, 0], H[..., 0, 1], H[..., 1, 1]], axis=-1)


def _expand(h):
    return np.stack(
        [np.stack([h[..., 0], h[..., 1]], -1), np.stack([h[..., 1], h[..., 2]], -1)], -2
    )


class _Accumulator:
    """Fixed sparsity pattern with deterministic summation of element blocks."""

    def __init__(self, rows, cols, n):
        keys = rows.astype(np.int64) * n + cols
        uniq, self.inverse = np.unique(keys, return_inverse=True)
        self.inverse = self.inverse.reshape(-1)
        self.nnz = len(uniq)
        r = uniq // n
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.searchsorted(r, np.arange(n + 1)).astype(np.int32)
        self.n = n

    def matrix(self, values):
        data = np.bincount(self.inverse, weights=values.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def jump_operator(space: FeSpace, degree: int):
    """Normal-derivative jumps at interior-edge quadrature points.

    Returns ``(Jop, weights, edge_of_row)`` where ``Jop @ coeffs`` gives
    [du/dn] at each (edge, point) and ``weights`` are the reference edge
    weights, so that ``sum(weights * jump**2)`` over an edge equals
    ``h_e^{-1} int_e [du/dn]^2``.
    """
    cache = space.__dict__.setdefault("_jump_cache", {})
    if degree in cache:
        return cache[degree]
    topo = space.topology
    tris = space.mesh.triangles
    rule = edge_rule(degree)
    s = rule.points
    nq = len(s)
    # tab[i, rev]: reference gradients along local edge i, optionally reversed
    tab = np.empty((3, 2, nq, space.n_local, 2))
    for i, (a, b) in enumerate(_EDGE_VERTS):
        for rev, ss in enumerate((s, 1.0 - s)):
            pts = REF_VERTICES[a][None] + ss[:, None] * (REF_VERTICES[b] - REF_VERTICES[a])[None]
            tab[i, rev] = space.tabulate(pts)[1]
    L, R = topo.left, topo.right
    iL, iR = topo.left_local, topo.right_local
    startL = tris[L, _EDGE_VERTS[iL, 0]]
    startR = tris[R, _EDGE_VERTS[iR, 0]]
    rev = (startR != startL).astype(int)
    n = topo.normals
    gL = physical_derivatives(space.Jinv[L][:, None, None], tab[iL, 0])
    gR = physical_derivatives(space.Jinv[R][:, None, None], tab[iR, rev])
    dnL = np.einsum("eqik,ek->eqi", gL, n)
    dnR = np.einsum("eqik,ek->eqi", gR, n)
    ni = len(L)
    rows = np.repeat(np.arange(ni * nq), 2 * space.n_local)
    cols = np.concatenate(
        [np.broadcast_to(space.dof_map[L][:, None, :], dnL.shape),
         np.broadcast_to(space.dof_map[R][:, None, :], dnR.shape)], axis=2
    ).ravel()
    data = np.concatenate([dnL, -dnR], axis=2).ravel()
    Jop = sp.csr_matrix((data, (rows, cols)), shape=(ni * nq, space.n_dofs))
    weights = np.tile(rule.weights, ni)
    edge_of_row = np.repeat(np.arange(ni), nq)
    cache[degree] = (Jop, weights, edge_of_row)
    return cache[degree]


class Discretization:
    """Quadrature data and assembly routines for one space and parameter set."""

    def __init__(self, space: FeSpace, params: SchemeParams, chunk=4096):
        if space.degree != params.degree:
            params = params.with_(degree=space.degree)
        self.space = space
        self.params = params
        self.rule = triangle_rule(params.quad_degree)
        self.chunk = chunk
        nt = space.mesh.n_triangles
        self.nq = len(self.rule.weights)
        self.wq = space.detJ[:, None] * self.rule.weights[None, :]
        self.points = space.map_points(self.rule.points)  # (nt, nq, 2)
        _, _, ddphi = space.tabulate(self.rule.points)
        self._ddphi_ref = ddphi
        n = space.n_local
        rows = np.repeat(space.dof_map, n, axis=1)
        cols = np.tile(space.dof_map, (1, n))
        self._acc = _Accumulator(rows.ravel(), cols.ravel(), space.n_dofs)
        Jop, w, _ = jump_operator(space, params.edge_quad_degree)
        self.jump_op = Jop
        self.jump_weights = w
        self.jump_matrix = (Jop.T @ sp.diags(w) @ Jop).tocsr()
        self.penalty = params.sigma * self.jump_matrix
        self._prepared = None
        self._nt = nt

    # -- element-wise helpers -------------------------------------------------
    def _chunks(self):
        return [slice(s, min(s + self.chunk, self._nt)) for s in range(0, self._nt, self.chunk)]

    def _map(self, fn):
        chunks = self._chunks()
        if self.params.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.params.workers) as pool:
                return list(pool.map(fn, chunks))
        return [fn(c) for c in chunks]

    def basis_hessians(self, sl):
        """Physical basis Hessians, compact (n, nq, nloc, 3), and Laplacians."""
        Jinv = self.space.Jinv[sl]
        H = np.einsum("tki,qnkl,tlj->tqnij", Jinv, self._ddphi_ref, Jinv)
        h = _compact(H)
        return h, h[..., 0] + h[..., 2]

    def hessians(self, u: DiscreteFunction):
        """Piecewise Hessian of u at the volume quadrature points, (nt, nq, 2, 2)."""
        c = u.local_coeffs()
        H_ref = np.einsum("ti,qikl->tqkl", c, self._ddphi_ref)
        Jinv = self.space.Jinv
        return np.einsum("tki,tqkl,tlj->tqij", Jinv, H_ref, Jinv)

    def prepared(self, problem: ControlProblem):
        if self._prepared is None or self._prepared[0] is not problem:
            self._prepared = (problem, problem.prepare(self.points.reshape(-1, 2)))
        return self._prepared[1]

    def f_gamma(self, problem: ControlProblem, u: DiscreteFunction):
        """F_gamma[u] at quadrature points and the maximising policy."""
        H = self.hessians(u).reshape(-1, 2, 2)
        val, idx, gA, gf = self.prepared(problem).maximize(H)
        shape = self.wq.shape
        return val.reshape(shape), Policy(idx.reshape(shape), gA.reshape(shape + (2, 2)),
                                          gf.reshape(shape))

    # -- assembly ---------------------------------------------------------------
    def volume_matrix(self, gamma_A):
        """sum_K int_K (gamma A : D^2 phi_j) Lap phi_i, without penalty."""
        gA = _compact(gamma_A)
        gA = gA * np.array([1.0, 2.0, 1.0])

        def block(sl):
            h, lap = self.basis_hessians(sl)
            B = np.einsum("tqk,tqnk->tqn", gA[sl], h)
            return np.einsum("tq,tqi,tqj->tij", self.wq[sl], lap, B)

        return self._acc.matrix(np.concatenate(self._map(block)))

    def load_vector(self, values):
        """sum_K int_K values Lap phi_i for values given at quadrature points."""

        def block(sl):
            _, lap = self.basis_hessians(sl)
            return np.einsum("tq,tq,tqi->ti", self.wq[sl], values[sl], lap)

        local = np.concatenate(self._map(block))
        return np.bincount(self.space.dof_map.ravel(), weights=local.ravel(),
                           minlength=self.space.n_dofs)

    def policy_system(self, policy: Policy):
        """Matrix of a_alpha and vector of l_alpha over all DOFs."""
        A = self.volume_matrix(policy.gamma_A) + self.penalty
        b = self.load_vector(policy.gamma_f)
        return A.tocsr(), b

    def residual(self, problem: ControlProblem, u: DiscreteFunction):
        """Vector a_h(u; phi_i) over all DOFs (boundary rows included)."""
        F, _ = self.f_gamma(problem, u)
        return self.load_vector(F) + self.penalty @ u.coeffs

    def form(self, problem, u, w):
        """a_h(u; w)."""
        return float(self.residual(problem, u) @ w.coeffs)

    # -- norms ------------------------------------------------------------------
    def jumps(self, u: DiscreteFunction):
        return self.jump_op @ u.coeffs

    def jump_seminorm_sq(self, u: DiscreteFunction):
        """sum_e h_e^{-1} ||[du/dn]||^2_{L2(e)}."""
        j = self.jumps(u)
        return float(np.sum(self.jump_weights * j * j))

    def mesh_norm(self, u: DiscreteFunction, sigma=None):
        sigma = self.params.sigma if sigma is None else sigma
        H = self.hessians(u)
        vol = float(np.sum(self.wq * frob_sq(H)))
        return np.sqrt(vol + sigma * self.jump_seminorm_sq(u))


def frob_sq(H):
    return np.einsum("...ij,...ij->...", H, H)


def apply_dirichlet(matrix, rhs, boundary_dofs, boundary_values, n_dofs=None):
    """Reduce to interior unknowns.

    Returns ``(A_II, b_I, interior_dofs)`` with the boundary contribution
    moved to the right-hand side; only rows of interior DOFs are kept, i.e.
    equations are tested against V_{h,0}.
    """
    n = matrix.shape[0] if n_dofs is None else n_dofs
    mask = np.ones(n, dtype=bool)
    mask[boundary_dofs] = False
    interior = np.flatnonzero(mask)
    g = np.zeros(n)
    g[boundary_dofs] = boundary_values
    A = matrix.tocsr()
    A_I = A[interior]
    b = rhs[interior] - A_I @ g
    return A_I[:, interior].tocsc(), b, interior


def mesh_norm(space: FeSpace, v: DiscreteFunction, sigma, quad_degree=None):
    """sqrt( int |D_h^2 v|^2 + sum_e sigma/h_e ||[dv/dn]||^2 )."""
    params = SchemeParams(degree=space.degree, sigma=sigma, quad_degree=quad_degree)
    return _norm_context(space, params).mesh_norm(v)


def _norm_context(space, params):
    cache = space.__dict__.setdefault("_norm_ctx", {})
    key = (params.sigma, params.quad_degree, params.edge_quad_degree)
    if key not in cache:
        cache[key] = Discretization(space, params)
    return cache[key]


def norm_quad_degree(p):
    return 2 * p + 2


def error_norms(space: FeSpace, u_h: DiscreteFunction, u, grad_u, hess_u, sigma,
                quad_degree=None):
    """L2, H1-seminorm, mesh-norm and nodal max errors of ``u_h`` against ``u``.

    The exact solution is assumed to have no normal-derivative jumps, so the
    jump part of the mesh norm only involves ``u_h``.
    """
    rule = triangle_rule(quad_degree or norm_quad_degree(space.degree))
    x = space.map_points(rule.points)
    flat = x.reshape(-1, 2)
    vals, grads, hess = u_h.evaluate_reference(rule.points)
    w = space.detJ[:, None] * rule.weights[None, :]
    ev = np.asarray(u(flat)).reshape(vals.shape) - vals
    eg = np.asarray(grad_u(flat)).reshape(grads.shape) - grads
    eh = np.asarray(hess_u(flat)).reshape(hess.shape) - hess
    ctx = _norm_context(space, SchemeParams(degree=space.degree, sigma=sigma))
    jump = ctx.jump_seminorm_sq(u_h)
    nodal = np.abs(np.asarray(u(space.node_coords)) - u_h.coeffs)
    return {
        "L2": float(np.sqrt(np.sum(w * ev * ev))),
        "H1": float(np.sqrt(np.sum(w * np.sum(eg * eg, axis=-1)))),
        "h": float(np.sqrt(np.sum(w * frob_sq(eh)) + sigma * jump)),
        "hessian_L2": float(np.sqrt(np.sum(w * frob_sq(eh)))),
        "Linf_nodal": float(nodal.max()),
    }


def function_norms(space: FeSpace, v: DiscreteFunction, sigma, quad_degree=None):
    """The same norms as :func:`error_norms` for a discrete function itself."""
    zero = lambda x: np.zeros(len(x))
    return error_norms(space, -v, zero, lambda x: np.zeros((len(x), 2)),
                       lambda x: np.zeros((len(x), 2, 2)), sigma, quad_degree)


def consistency_residual(disc: Discretization, problem: ControlProblem, u: DiscreteFunction):
    """max over interior basis functions of |a_h(u; phi_i)|."""
    r = disc.residual(problem, u)
    return float(np.max(np.abs(r[disc.space.interior_dofs]), initial=0.0))
