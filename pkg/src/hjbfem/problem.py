"""Control problems sup_a { A^a : D^2 u - f^a } = 0 with Dirichlet data."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

D = 2


class CordesViolation(ValueError):
    pass


class CordesWarning(UserWarning):
    pass


def frobenius(A, B):
    return np.einsum("...ij,...ij->...", A, B)


def gamma_of(A):
    """Renormalisation factor Tr(A) / (A : A).

    Works on a single 2x2 matrix or on stacks of shape (..., 2, 2).
    """
    A = np.asarray(A, dtype=float)
    AA = frobenius(A, A)
    if np.any(AA == 0.0):
        raise ValueError("gamma is undefined for the zero matrix")
    return np.trace(A, axis1=-2, axis2=-1) / AA


def _as_field(value, shape):
    """Wrap a constant as a vectorised callable of points."""
    if callable(value):
        return value
    const = np.asarray(value, dtype=float)
    if const.shape != shape:
        raise ValueError(f"constant coefficient must have shape {shape}, got {const.shape}")

    def field_(points):
        return np.broadcast_to(const, (len(points),) + shape)

    return field_


@dataclass
class Control:
    """One control value: coefficient A(x) (2x2, symmetric) and forcing f(x).

    ``A`` and ``f`` are either constants or vectorised callables taking an
    (n, 2) array of points.
    """

    label: object
    A: Callable | np.ndarray
    f: Callable | float = 0.0

    def __post_init__(self):
        self.A = _as_field(self.A, (2, 2))
        self.f = _as_field(self.f, ())


@dataclass
class ControlProblem:
    """Finite control set, coefficients and Dirichlet datum.

    ``g`` must be defined on the whole domain (it is interpolated at all nodes
    to build g_h); ``g_hessian`` is optional and only used by the estimator.
    """

    controls: Sequence[Control]
    g: Callable = lambda x: np.zeros(len(x))
    g_hessian: Optional[Callable] = None
    name: str = "custom"
    g_is_zero: bool = False

    def __post_init__(self):
        self.controls = list(self.controls)
        if not self.controls:
            raise ValueError("control set is empty")

    @property
    def labels(self):
        return [c.label for c in self.controls]

    def prepare(self, points):
        """Pre-evaluate controls at fixed points; returns an object with a
        ``maximize(hessians)`` method."""
        return _PreparedControls(self, np.asarray(points, dtype=float))

    def maximize(self, points, hessians):
        """Pointwise sup over controls of gamma (A : H - f).

        Returns ``(value, index, gammaA, gammaf)`` where ``index`` is the first
        maximising control in list order.
        """
        return self.prepare(points).maximize(hessians)


class _PreparedControls:
    # controls are cached only while the cache stays small
    _CACHE_LIMIT = 2_000_000

    def __init__(self, problem, points):
        self.problem = problem
        self.points = points
        n = len(points)
        self.cached = None
        if n * len(problem.controls) * 5 <= self._CACHE_LIMIT:
            self.cached = [self._evaluate(c) for c in problem.controls]

    def _evaluate(self, control):
        A = np.asarray(control.A(self.points), dtype=float)
        f = np.asarray(control.f(self.points), dtype=float)
        g = gamma_of(A)
        return g[:, None, None] * A, g * f

    def items(self):
        if self.cached is not None:
            return iter(self.cached)
        return (self._evaluate(c) for c in self.problem.controls)

    def maximize(self, hessians):
        H = np.asarray(hessians, dtype=float)
        n = len(self.points)
        best = np.full(n, -np.inf)
        index = np.zeros(n, dtype=np.int64)
        gA = np.zeros((n, 2, 2))
        gf = np.zeros(n)
        for k, (cA, cf) in enumerate(self.items()):
            val = frobenius(cA, H) - cf
            better = val > best
            best = np.where(better, val, best)
            index[better] = k
            gA[better] = np.broadcast_to(cA, (n, 2, 2))[better]
            gf[better] = np.broadcast_to(cf, (n,))[better]
        return best, index, gA, gf


def f_gamma_eval(problem: ControlProblem, hessian, point):
    """F_gamma at a single point for a given Hessian: (value, argmax label)."""
    point = np.asarray(point, dtype=float).reshape(1, 2)
    H = np.asarray(hessian, dtype=float).reshape(1, 2, 2)
    val, idx, _, _ = problem.maximize(point, H)
    return float(val[0]), problem.controls[int(idx[0])].label


@dataclass
class CordesReport:
    epsilon: float
    gamma_min: float
    gamma_max: float
    min_eigenvalue: float
    worst_point: np.ndarray
    worst_control: object
    notes: list = field(default_factory=list)

    @property
    def ok(self):
        return self.epsilon > 0.0 and self.min_eigenvalue > 0.0


def cordes_epsilon(problem: ControlProblem, points, strict=False) -> CordesReport:
    """Largest epsilon with |A| / Tr(A) <= 1 / sqrt(d - 1 + epsilon) on the samples.

    ``strict=True`` raises :class:`CordesViolation` when epsilon <= 0 or the
    coefficients are not elliptic; otherwise a :class:`CordesWarning` is issued.
    """
    points = np.asarray(points, dtype=float)
    eps = np.inf
    gmin, gmax, lam_min = np.inf, -np.inf, np.inf
    worst_point, worst_control = None, None
    for c in problem.controls:
        A = np.broadcast_to(np.asarray(c.A(points), dtype=float), (len(points), 2, 2))
        if not np.allclose(A, np.swapaxes(A, -1, -2), rtol=1e-12, atol=1e-14):
            raise ValueError(f"coefficient of control {c.label!r} is not symmetric")
        tr = np.trace(A, axis1=-2, axis2=-1)
        AA = frobenius(A, A)
        e = tr ** 2 / AA - (D - 1)
        k = int(np.argmin(e))
        if e[k] < eps:
            eps, worst_point, worst_control = float(e[k]), points[k], c.label
        g = tr / AA
        gmin, gmax = min(gmin, g.min()), max(gmax, g.max())
        lam_min = min(lam_min, float(np.linalg.eigvalsh(A).min()))
    notes = []
    if eps > 1.0:
        notes.append(f"epsilon {eps:.6g} clamped to 1")
        eps = 1.0
    report = CordesReport(eps, float(gmin), float(gmax), lam_min, worst_point, worst_control, notes)
    if not report.ok:
        msg = (
            f"Cordes condition fails: epsilon={eps:.3e}, min eigenvalue={lam_min:.3e} "
            f"(worst control {worst_control!r} at {worst_point})"
        )
        if strict:
            raise CordesViolation(msg)
        warnings.warn(msg, CordesWarning, stacklevel=2)
    return report


@dataclass
class ExactSolution:
    """Exact solution with its gradient and Hessian, all vectorised callables."""

    u: Callable
    grad: Callable
    hess: Callable

    def __neg__(self):
        return ExactSolution(lambda x: -self.u(x), lambda x: -self.grad(x),
                             lambda x: -self.hess(x))
