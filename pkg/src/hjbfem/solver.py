"""Howard's algorithm (policy iteration / semismooth Newton) for the C0-IP scheme."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import Discretization, Policy, SchemeParams, apply_dirichlet
from .problem import ControlProblem, CordesWarning, cordes_epsilon
from .space import DiscreteFunction, FeSpace, boundary_datum

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


def linear_solve(matrix, rhs, tol=1e-12, refine_steps=3):
    """Sparse LU solve with a relative-residual check.

    A few steps of iterative refinement are taken if the first solve misses
    ``tol``; :class:`SolverError` is raised if the residual is still too large
    or the matrix is singular.
    """
    A = sp.csc_matrix(matrix)
    b = np.asarray(rhs, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != len(b):
        raise SolverError(f"incompatible system: matrix {A.shape}, rhs {b.shape}")
    if A.shape[0] == 0:
        return np.zeros(0)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            lu = spla.splu(A)
    except (RuntimeError, spla.MatrixRankWarning) as exc:
        raise SolverError(f"factorisation failed: {exc}") from exc
    x = lu.solve(b)
    for _ in range(refine_steps + 1):
        res = b - A @ x
        rel = np.linalg.norm(res) / bnorm
        if not np.isfinite(rel):
            raise SolverError("factorisation produced non-finite values")
        if rel <= tol:
            return x
        x = x + lu.solve(res)
    raise SolverError(f"linear solve reached relative residual {rel:.3e} > {tol:.1e}")


@dataclass
class HowardState:
    """Current iterate, iteration counter, last increment and policy."""

    u: DiscreteFunction
    k: int = 0
    r: float = 1.0
    policy: Policy | None = None


@dataclass
class HowardResult:
    u: DiscreteFunction
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)  # (k, r, nonlinear_residual)
    policy: Policy | None = None
    g_h: DiscreteFunction | None = None

    @property
    def final_r(self):
        return self.trace[-1][1] if self.trace else np.nan

    def write_trace(self, path, append=False):
        write_trace(self.trace, path, append=append)


def write_trace(trace, path, append=False):
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if not append:
            w.writerow(["k", "r", "nonlinear_residual"])
        for k, r, res in trace:
            w.writerow([k, f"{r:.15g}", f"{res:.15g}"])


def howard_solve(space: FeSpace, problem: ControlProblem, params: SchemeParams,
                 initial_guess: DiscreteFunction | None = None, g_h: DiscreteFunction | None = None,
                 disc: Discretization | None = None) -> HowardResult:
    """Policy iteration for a_h(u_h; v) = 0 for all v in V_{h,0}, u_h = g_h on the boundary.

    Each step picks the pointwise maximising control of F_gamma[u^k] and
    solves the linear problem a_alpha(u, v) = l_alpha(v).  The increment
    ``r`` is the maximum nodal difference of successive iterates.  If the
    policy repeats, the next iterate equals the current one and ``r = 0``
    without a new solve.
    """
    disc = disc or Discretization(space, params)
    params = disc.params
    cordes_epsilon(problem, disc.points.reshape(-1, 2)[:: max(1, disc.nq // 4)],
                   strict=params.strict_cordes)
    if g_h is None:
        g_h = boundary_datum(space, problem.g, params.boundary_method)
    bdofs = space.boundary_dofs
    gB = g_h.coeffs[bdofs]

    u0 = np.zeros(space.n_dofs) if initial_guess is None else initial_guess.coeffs.copy()
    u0[bdofs] = gB
    state = HowardState(DiscreteFunction(space, u0))
    trace = []
    _, state.policy = disc.f_gamma(problem, state.u)
    prev_policy = None
    while state.k < params.itermax and state.r > params.tol:
        policy = state.policy
        if policy.same_as(prev_policy):
            new = state.u.coeffs.copy()
        else:
            A, b = disc.policy_system(policy)
            A_II, b_I, interior = apply_dirichlet(A, b, bdofs, gB, space.n_dofs)
            new = np.empty(space.n_dofs)
            new[bdofs] = gB
            try:
                new[interior] = linear_solve(A_II, b_I, params.linear_tol)
            except SolverError as exc:
                counts = np.bincount(policy.index.ravel(), minlength=len(problem.controls))
                raise SolverError(
                    f"policy system at iteration {state.k} is not solvable ({exc}); "
                    f"controls in use: {np.count_nonzero(counts)} of {len(counts)}"
                ) from exc
        r = float(np.max(np.abs(new - state.u.coeffs), initial=0.0))
        prev_policy = policy
        state.u = DiscreteFunction(space, new)
        F, state.policy = disc.f_gamma(problem, state.u)
        res = disc.load_vector(F) + disc.penalty @ new
        nonlinear = float(np.max(np.abs(res[space.interior_dofs]), initial=0.0))
        state.k += 1
        state.r = r
        trace.append((state.k, r, nonlinear))
        log.debug("howard k=%d r=%.3e residual=%.3e", state.k, r, nonlinear)
    converged = state.r <= params.tol
    if not converged:
        log.warning("Howard's method stopped at itermax=%d with r=%.3e", params.itermax, state.r)
    return HowardResult(state.u, converged, state.k, trace, prev_policy, g_h)
