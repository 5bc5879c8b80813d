"""Built-in benchmark problems.

exp1: singleton HJB problem with a checkerboard coefficient jump and exact
      solution |x|^{1+s};
exp2: the same operator with f = 1, g = 0 (unknown solution);
exp3: Monge-Ampere with exact solution |x1 - a| sin(x1 - a) + 50 |x|^2, or
      f = 1, g = 0.
All problems live on the unit square.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mesh import Mesh, square_mesh
from .monge_ampere import DEFAULT_GRID, DEFAULT_XI, MaProblem, ma_to_hjb, xi_from_solution_bound
from .problem import Control, ControlProblem, ExactSolution

CHI_LARGE = 1000.0


@dataclass
class Benchmark:
    """Problem ready for the solver, its initial mesh and, when known, the
    exact solution of the unknown the solver computes."""

    problem: ControlProblem
    mesh: Mesh
    exact: Optional[ExactSolution] = None
    ma: Optional[MaProblem] = None
    description: str = ""


def _sign(t):
    # the coefficient is discontinuous on x_i = 1/2; pick +1 there
    return np.where(t >= 0.0, 1.0, -1.0)


def checkerboard(x, N, large=CHI_LARGE):
    """1 where floor(N x1) and floor(N x2) are both even, ``large`` elsewhere."""
    i = np.floor(N * x[:, 0]).astype(np.int64)
    j = np.floor(N * x[:, 1]).astype(np.int64)
    return np.where((i % 2 == 0) & (j % 2 == 0), 1.0, large)


def exp1_coefficient(N, large=CHI_LARGE):
    def A(x):
        x = np.asarray(x, dtype=float)
        s = _sign(x[:, 0] - 0.5) * _sign(x[:, 1] - 0.5)
        chi = checkerboard(x, N, large)
        out = np.empty((len(x), 2, 2))
        out[:, 0, 0] = out[:, 1, 1] = 2.0 * chi
        out[:, 0, 1] = out[:, 1, 0] = s * chi
        return out

    return A


def radial_power(s):
    """u = |x|^{1+s} with gradient and Hessian."""
    q = 1.0 + s

    def u(x):
        return np.hypot(x[:, 0], x[:, 1]) ** q

    def grad(x):
        r = np.hypot(x[:, 0], x[:, 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(r > 0, q * r ** (q - 2.0), 0.0)
        return c[:, None] * x

    def hess(x):
        r = np.hypot(x[:, 0], x[:, 1])
        safe = np.where(r > 0, r, 1.0)
        a = q * safe ** (q - 2.0)
        b = q * (q - 2.0) * safe ** (q - 4.0)
        H = a[:, None, None] * np.eye(2) + b[:, None, None] * np.einsum("ni,nj->nij", x, x)
        # the Hessian is unbounded at the origin; report zero there
        return np.where((r > 0)[:, None, None], H, 0.0)

    return ExactSolution(u, grad, hess)


def _validate_exp12(s, N):
    if s is not None and not 0.0 < s < 1.0:
        raise ValueError("s must lie in (0, 1)")
    if N < 2 or N % 2:
        raise ValueError("N must be a positive even integer")


def builtin_exp1(s=0.5, N=20, large=CHI_LARGE) -> Benchmark:
    _validate_exp12(s, N)
    A = exp1_coefficient(N, large)
    ex = radial_power(s)

    def f(x):
        return np.einsum("nij,nij->n", A(x), ex.hess(x))

    problem = ControlProblem([Control("exp1", A, f)], g=ex.u, g_hessian=ex.hess,
                             name=f"exp1(s={s}, N={N})")
    return Benchmark(problem, square_mesh(N), ex, description=problem.name)


def builtin_exp2(N=10, large=CHI_LARGE) -> Benchmark:
    _validate_exp12(None, N)
    A = exp1_coefficient(N, large)
    problem = ControlProblem([Control("exp2", A, 1.0)], g=lambda x: np.zeros(len(x)),
                             g_hessian=None, name=f"exp2(N={N})", g_is_zero=True)
    return Benchmark(problem, square_mesh(N), None, description=problem.name)


def _phi(t):
    return np.abs(t) * np.sin(t)


def _dphi(t):
    return np.sign(t) * (np.sin(t) + t * np.cos(t))


def _ddphi(t):
    return np.sign(t) * (2.0 * np.cos(t) - t * np.sin(t))


def exp3_solution(a):
    """u_a = |x1 - a| sin(x1 - a) + 50 |x|^2."""

    def u(x):
        return _phi(x[:, 0] - a) + 50.0 * (x[:, 0] ** 2 + x[:, 1] ** 2)

    def grad(x):
        return np.stack([_dphi(x[:, 0] - a) + 100.0 * x[:, 0], 100.0 * x[:, 1]], axis=1)

    def hess(x):
        H = np.zeros((len(x), 2, 2))
        H[:, 0, 0] = 100.0 + _ddphi(x[:, 0] - a)
        H[:, 1, 1] = 100.0
        return H

    return ExactSolution(u, grad, hess)


def exp3_xi(a, samples=401):
    """xi from the solution bound, using f_min and the Frobenius sup of D^2 u_a
    on a fine sample of [0, 1]; the one-sided limits at x1 = a are included."""
    t = np.concatenate([np.linspace(-a, 1.0 - a, samples), [-1e-300, 1e-300]])
    d2 = 100.0 + _ddphi(t)
    f_min = float(np.min(100.0 * d2))
    hess_sup = float(np.max(np.hypot(d2, 100.0)))
    return xi_from_solution_bound(f_min, hess_sup)


def exp3_initial_mesh(n=2):
    return square_mesh(n, "alternating")


def builtin_exp3(a: float | None = 0.5, xi=None, grid=DEFAULT_GRID, n_initial=2,
                 control_mode="grid") -> Benchmark:
    """Monge-Ampere benchmark; ``a=None`` selects f = 1, g = 0.

    The returned exact solution is that of the solver unknown v = -u.
    """
    if a is None:
        ma = MaProblem(f=lambda x: np.ones(len(x)), g=lambda x: np.zeros(len(x)),
                       xi=DEFAULT_XI if xi is None else xi, grid=tuple(grid), g_is_zero=True,
                       name="exp3(f=1, g=0)")
        exact = None
    else:
        if not 0.0 < a < 1.0:
            raise ValueError("a must lie in (0, 1)")
        ex = exp3_solution(a)

        def f(x):
            H = ex.hess(x)
            return H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] ** 2

        ma = MaProblem(f=f, g=ex.u, xi=exp3_xi(a) if xi is None else xi, grid=tuple(grid),
                       g_hessian=ex.hess, exact=ex, name=f"exp3(a={a})")
        exact = -ex
    problem = ma_to_hjb(ma, mode=control_mode)
    return Benchmark(problem, exp3_initial_mesh(n_initial), exact, ma, description=ma.name)


BUILTINS = {"exp1": builtin_exp1, "exp2": builtin_exp2, "exp3": builtin_exp3}
