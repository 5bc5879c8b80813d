"""A posteriori error indicators for the C0-IP scheme.

The estimator is

    eta_h = ||F_gamma[u_h]|| + ||D_h^2 (g - g_h)||
            + (sum_e h_e^{-1} ||[d g_h/dn]||^2)^{1/2}
            + (sum_e h_e^{-1} ||[d u_h/dn]||^2)^{1/2},

localised to triangles (volume terms) and interior edges (jump terms).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .forms import Discretization, SchemeParams, frob_sq, jump_operator, norm_quad_degree
from .problem import ControlProblem
from .space import DiscreteFunction, FeSpace

log = logging.getLogger(__name__)


@dataclass
class ErrorIndicators:
    """Local indicators; edge arrays are aligned with ``topology.interior``."""

    eta_K: np.ndarray
    eta_K_g: np.ndarray
    eta_e: np.ndarray
    eta_e_g: np.ndarray
    edge_ids: np.ndarray
    g_volume_available: bool = True
    notes: list = field(default_factory=list)

    @staticmethod
    def _l2(x):
        return float(np.sqrt(np.sum(np.square(x))))

    @property
    def residual_total(self):
        """||F_gamma[u_h]||_{L2(Omega)}."""
        return self._l2(self.eta_K)

    @property
    def g_volume_total(self):
        return self._l2(self.eta_K_g)

    @property
    def jump_total(self):
        return self._l2(self.eta_e)

    @property
    def g_jump_total(self):
        return self._l2(self.eta_e_g)

    @property
    def totals(self):
        return {
            "residual": self.residual_total,
            "g_volume": self.g_volume_total,
            "g_jump": self.g_jump_total,
            "jump": self.jump_total,
        }

    @property
    def eta_h(self):
        return float(sum(self.totals.values()))

    @property
    def max_indicator(self):
        """Largest local indicator over all four families."""
        arrays = [self.eta_K, self.eta_K_g, self.eta_e, self.eta_e_g]
        return float(max((a.max() for a in arrays if a.size), default=0.0))

    def write_csv(self, element_path, edge_path):
        with open(element_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "eta_K", "eta_K_g"])
            for i, (a, b) in enumerate(zip(self.eta_K, self.eta_K_g)):
                w.writerow([i, f"{a:.15g}", f"{b:.15g}"])
        with open(edge_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "eta_e", "eta_e_g"])
            for i, a, b in zip(self.edge_ids, self.eta_e, self.eta_e_g):
                w.writerow([int(i), f"{a:.15g}", f"{b:.15g}"])


def _estimator_context(space: FeSpace):
    # the penalty value is irrelevant here; only quadrature data is used
    if "_estimator_ctx" not in space.__dict__:
        p = space.degree
        params = SchemeParams(degree=p, quad_degree=norm_quad_degree(p),
                              edge_quad_degree=norm_quad_degree(p))
        space.__dict__["_estimator_ctx"] = Discretization(space, params)
    return space.__dict__["_estimator_ctx"]


def _edge_sums(disc: Discretization, v: DiscreteFunction):
    """Per interior edge: h_e^{-1} ||[dv/dn]||^2_{L2(e)}."""
    _, _, edge_of_row = jump_operator(disc.space, disc.params.edge_quad_degree)
    j = disc.jumps(v)
    ni = len(disc.space.topology.interior)
    return np.bincount(edge_of_row, weights=disc.jump_weights * j * j, minlength=ni)


def compute_indicators(space: FeSpace, problem: ControlProblem, u_h: DiscreteFunction,
                       g_h: DiscreteFunction | None = None,
                       g_hessian=None) -> ErrorIndicators:
    """Element and interior-edge indicators of ``u_h``.

    ``g_hessian`` is a vectorised callable returning D^2 g at points; if it is
    ``None`` (and the problem provides none) the g-volume term is zero and a
    note is recorded, unless ``problem.g_is_zero``.  Volume terms use a
    quadrature rule exact to degree 2p + 2.
    """
    disc = _estimator_context(space)
    F, _ = disc.f_gamma(problem, u_h)
    eta_K = np.sqrt(np.sum(disc.wq * F * F, axis=1))
    nt = space.mesh.n_triangles
    notes = []
    g_hessian = g_hessian if g_hessian is not None else problem.g_hessian
    available = True
    if g_h is None:
        g_h = DiscreteFunction(space, np.zeros(space.n_dofs))
    if g_hessian is not None:
        Hg = np.asarray(g_hessian(disc.points.reshape(-1, 2)), dtype=float)
        Hg = Hg.reshape(disc.points.shape[:2] + (2, 2))
        diff = Hg - disc.hessians(g_h)
        eta_K_g = np.sqrt(np.sum(disc.wq * frob_sq(diff), axis=1))
    else:
        eta_K_g = np.zeros(nt)
        if not problem.g_is_zero:
            available = False
            notes.append("Hessian of g unavailable; g-volume indicator set to 0")
            log.warning(notes[-1])
    eta_e = np.sqrt(_edge_sums(disc, u_h))
    eta_e_g = np.sqrt(_edge_sums(disc, g_h))
    return ErrorIndicators(eta_K, eta_K_g, eta_e, eta_e_g,
                           space.topology.interior.copy(), available, notes)


def residual_norm(space: FeSpace, problem: ControlProblem, u_h: DiscreteFunction):
    """||F_gamma[u_h]||_{L2(Omega)} with the estimator's quadrature."""
    disc = _estimator_context(space)
    F, _ = disc.f_gamma(problem, u_h)
    return float(np.sqrt(np.sum(disc.wq * F * F)))


def broken_hessian_error(space: FeSpace, u_h: DiscreteFunction, hess_u):
    """||D_h^2 (u_h - u)||_{L2(Omega)} with the estimator's quadrature."""
    disc = _estimator_context(space)
    H = np.asarray(hess_u(disc.points.reshape(-1, 2)), dtype=float)
    diff = disc.hessians(u_h) - H.reshape(disc.points.shape[:2] + (2, 2))
    return float(np.sqrt(np.sum(disc.wq * frob_sq(diff))))


def effectivity_index(eta_total, error_h_norm, zero_tol=1e-14):
    """eta_h / ||u - u_h||_h, or NaN when the error vanishes."""
    if not np.isfinite(error_h_norm) or error_h_norm <= zero_tol:
        return float("nan")
    return float(eta_total) / float(error_h_norm)
