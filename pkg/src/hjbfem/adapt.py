"""Solve, estimate, mark, refine.

Adaptive refinement uses the maximum marking strategy over all four
indicator families jointly; uniform refinement is provided as the baseline.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .estimator import ErrorIndicators, broken_hessian_error, compute_indicators, effectivity_index
from .forms import Discretization, SchemeParams, error_norms, function_norms
from .mesh import Mesh, bisect_marked, uniform_refine
from .problem import ControlProblem, ExactSolution
from .solver import HowardResult, howard_solve
from .space import FeSpace, prolong

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["ndofs", "err_h", "EOC_h", "err_H1", "EOC_H1", "err_L2", "EOC_L2",
                   "eta", "EOC_eta"]
EXTRA_COLUMNS = ["round", "n_triangles", "effectivity", "residual", "hessian_err",
                 "howard_iterations", "converged", "refinement"]


@dataclass(frozen=True)
class AdaptConfig:
    """Marking fraction, stopping tolerance on the largest indicator, round
    limit and DOF budget."""

    theta: float = 0.2
    tol: float = 0.0
    itermax: int = 10
    max_dofs: int = 100_000

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")
        if self.itermax < 1:
            raise ValueError("itermax must be at least 1")
        if self.max_dofs < 1:
            raise ValueError("max_dofs must be positive")


def mark_maximum(indicators: ErrorIndicators, theta):
    """Maximum marking.

    With eta_k the largest indicator of all four families, a triangle is
    marked iff max(eta_K, eta_K_g) > theta * eta_k and an interior edge iff
    max(eta_e, eta_e_g) > theta * eta_k.  Returns ``(triangles, edges)``
    where ``edges`` are global edge ids.
    """
    eta_k = indicators.max_indicator
    cut = theta * eta_k
    elem = np.maximum(indicators.eta_K, indicators.eta_K_g)
    edge = np.maximum(indicators.eta_e, indicators.eta_e_g)
    tris = np.flatnonzero(elem > cut)
    edges = np.asarray(indicators.edge_ids)[edge > cut]
    return tris, edges


def count_dofs(mesh: Mesh, degree: int) -> int:
    ne = mesh.topology.n_edges
    return mesh.n_vertices + ne * (degree - 1) + mesh.n_triangles * (degree - 1) * (degree - 2) // 2


def eoc(errors, ndofs):
    """EOC_k = -log(e_k / e_{k-1}) / log(n_k / n_{k-1}); the first entry is NaN."""
    e = np.asarray(errors, dtype=float)
    n = np.asarray(ndofs, dtype=float)
    out = np.full(len(e), np.nan)
    if len(e) > 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            out[1:] = -np.log(e[1:] / e[:-1]) / np.log(n[1:] / n[:-1])
    return out


def fitted_eoc(errors, ndofs):
    """Least-squares rate r in e ~ C ndofs^{-r} over all given levels."""
    e = np.asarray(errors, dtype=float)
    n = np.asarray(ndofs, dtype=float)
    ok = np.isfinite(e) & (e > 0)
    if ok.sum() < 2:
        return float("nan")
    slope = np.polyfit(np.log(n[ok]), np.log(e[ok]), 1)[0]
    return float(-slope)


@dataclass
class Round:
    index: int
    mesh: Mesh
    space: FeSpace
    result: HowardResult
    indicators: ErrorIndicators
    row: dict
    marked: tuple = (np.zeros(0, dtype=int), np.zeros(0, dtype=int))
    fallback: bool = False


@dataclass
class RefinementHistory:
    rounds: list = field(default_factory=list)
    stop_reason: str = ""

    @property
    def rows(self):
        return [r.row for r in self.rounds]

    @property
    def trace(self):
        return [t for r in self.rounds for t in r.result.trace]

    @property
    def converged(self):
        return all(r.result.converged for r in self.rounds)

    def column(self, name):
        return np.array([row[name] for row in self.rows], dtype=float)

    def final(self) -> Round:
        return self.rounds[-1]


def _errors(space, u_h, exact, previous, sigma):
    if exact is not None:
        return error_norms(space, u_h, exact.u, exact.grad, exact.hess, sigma)
    if previous is not None:
        # incremental difference u_k - u_{k-1} on the finer space
        return function_norms(space, u_h - prolong(previous, space), sigma)
    return {"L2": np.nan, "H1": np.nan, "h": np.nan}


def refinement_loop(mesh: Mesh, problem: ControlProblem, params: SchemeParams,
                    config: AdaptConfig, exact: ExactSolution | None = None,
                    mode: str = "adaptive", warm_start: bool = False,
                    callback=None) -> RefinementHistory:
    """Run solve / estimate / mark / refine rounds.

    ``mode="uniform"`` replaces marking by red refinement of every triangle.
    The loop stops when the largest indicator is at most ``config.tol``,
    after ``config.itermax`` rounds, or when the next mesh would exceed
    ``config.max_dofs``.  Without an exact solution the error columns hold
    norms of the increment between consecutive solutions.
    """
    if mode not in ("adaptive", "uniform"):
        raise ValueError(f"unknown refinement mode {mode!r}")
    p = params.degree
    history = RefinementHistory()
    previous = None
    prev_row = None
    for k in range(config.itermax):
        space = FeSpace(mesh, p)
        disc = Discretization(space, params)
        guess = prolong(previous, space) if (warm_start and previous is not None) else None
        result = howard_solve(space, problem, params, initial_guess=guess, disc=disc)
        ind = compute_indicators(space, problem, result.u, result.g_h)
        errs = _errors(space, result.u, exact, previous, params.sigma)
        row = {
            "ndofs": space.n_dofs,
            "err_h": errs["h"],
            "err_H1": errs["H1"],
            "err_L2": errs["L2"],
            "eta": ind.eta_h,
            "round": k,
            "n_triangles": mesh.n_triangles,
            "effectivity": effectivity_index(ind.eta_h, errs["h"]) if exact else np.nan,
            "residual": ind.residual_total,
            "hessian_err": (broken_hessian_error(space, result.u, exact.hess)
                            if exact else np.nan),
            "howard_iterations": result.iterations,
            "converged": int(result.converged),
            "refinement": mode,
        }
        for key, name in (("err_h", "EOC_h"), ("err_H1", "EOC_H1"), ("err_L2", "EOC_L2"),
                          ("eta", "EOC_eta")):
            if prev_row is None:
                row[name] = np.nan
            else:
                row[name] = float(eoc([prev_row[key], row[key]],
                                      [prev_row["ndofs"], row["ndofs"]])[1])
        rnd = Round(k, mesh, space, result, ind, row)
        history.rounds.append(rnd)
        log.info("round %d: ndofs=%d err_h=%.4e eta=%.4e", k, space.n_dofs, row["err_h"],
                 row["eta"])
        if callback is not None:
            callback(rnd)
        previous, prev_row = result.u, row

        if ind.max_indicator <= config.tol:
            history.stop_reason = "tolerance"
            break
        if k == config.itermax - 1:
            history.stop_reason = "itermax"
            break
        if mode == "uniform":
            new = uniform_refine(mesh)
        else:
            tris, edges = mark_maximum(ind, config.theta)
            rnd.marked = (tris, edges)
            if tris.size == 0 and edges.size == 0:
                log.info("nothing marked; refining every triangle")
                rnd.fallback = True
                tris = np.arange(mesh.n_triangles)
            new = bisect_marked(mesh, tris, edges)
        if count_dofs(new, p) > config.max_dofs:
            history.stop_reason = "max_dofs"
            break
        mesh = new
    return history


def adaptive_loop(mesh, problem, params, config, exact=None, **kw) -> RefinementHistory:
    return refinement_loop(mesh, problem, params, config, exact, mode="adaptive", **kw)


def uniform_loop(mesh, problem, params, config, exact=None, **kw) -> RefinementHistory:
    return refinement_loop(mesh, problem, params, config, exact, mode="uniform", **kw)


def _fmt(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    return "nan" if math.isnan(v) else f"{v:.15g}"


def write_summary(rows, path, extra=True):
    """Summary CSV with 15 significant digits; NaN for undefined entries."""
    cols = SUMMARY_COLUMNS + (EXTRA_COLUMNS if extra else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(row.get(c, np.nan)) for c in cols])
