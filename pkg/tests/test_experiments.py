import numpy as np
import pytest

from hjbfem.experiments import (
    builtin_exp1,
    builtin_exp2,
    builtin_exp3,
    checkerboard,
    exp1_coefficient,
    exp3_initial_mesh,
    exp3_solution,
    exp3_xi,
    radial_power,
)
from hjbfem.forms import SchemeParams
from hjbfem.mesh import square_mesh
from hjbfem.problem import Control, ControlProblem, cordes_epsilon
from hjbfem.solver import howard_solve
from hjbfem.space import FeSpace

GRID = np.stack(np.meshgrid((np.arange(100) + 0.5) / 100, (np.arange(100) + 0.5) / 100),
                axis=-1).reshape(-1, 2)


def fd_hessian(u, x, h=1e-4):
    e = np.eye(2) * h
    H = np.empty((len(x), 2, 2))
    for i in range(2):
        for j in range(2):
            H[:, i, j] = (u(x + e[i] + e[j]) - u(x + e[i] - e[j]) - u(x - e[i] + e[j])
                          + u(x - e[i] - e[j])) / (4 * h * h)
    return H


def fd_gradient(u, x, h=1e-6):
    e = np.eye(2) * h
    return np.stack([(u(x + e[i]) - u(x - e[i])) / (2 * h) for i in range(2)], axis=1)


def test_radial_power_values():
    ex = radial_power(0.5)
    assert ex.u(np.array([[1.0, 1.0]]))[0] == pytest.approx(2 ** 0.75)
    assert ex.u(np.zeros((1, 2)))[0] == 0.0
    x = np.random.default_rng(0).uniform(0.1, 0.9, (30, 2))
    assert np.allclose(ex.grad(x), fd_gradient(ex.u, x), rtol=1e-6)
    assert np.allclose(ex.hess(x), fd_hessian(ex.u, x), rtol=1e-4, atol=1e-5)
    assert np.all(np.isfinite(ex.hess(np.zeros((1, 2)))))


@pytest.mark.parametrize("a", [0.4, 0.5])
def test_exp3_solution_derivatives(a):
    ex = exp3_solution(a)
    y = np.linspace(0, 1, 7)
    pts = np.stack([np.full_like(y, a), y], axis=1)
    assert np.allclose(ex.u(pts), 50 * (a ** 2 + y ** 2))
    x = np.random.default_rng(1).uniform(0, 1, (40, 2))
    x = x[np.abs(x[:, 0] - a) > 1e-2]
    assert np.allclose(ex.grad(x), fd_gradient(ex.u, x), rtol=1e-6)
    assert np.allclose(ex.hess(x), fd_hessian(ex.u, x), rtol=1e-4, atol=1e-3)


@pytest.mark.parametrize("a", [0.4, 0.5])
def test_exp3_data_are_convex_and_positive(a):
    ex = exp3_solution(a)
    H = ex.hess(GRID)
    assert np.all(np.linalg.eigvalsh(H) > 0)
    f = np.linalg.det(H)
    assert np.all(f > 0)
    xi = exp3_xi(a)
    assert 0 < xi <= 0.25
    # xi = f_min / (2 sup |D^2 u|^2), so 2 xi |H|^2 <= f everywhere
    assert np.all(2 * xi * np.sum(H * H, axis=(1, 2)) <= f * (1 + 1e-12))


def test_exp3_xi_value():
    assert exp3_xi(0.5) == pytest.approx(0.2401, abs=1e-3)


def test_checkerboard_pattern():
    x = np.array([[0.01, 0.01], [0.06, 0.01], [0.11, 0.11], [0.06, 0.06]])
    assert checkerboard(x, 20).tolist() == [1.0, 1000.0, 1.0, 1000.0]


def test_exp1_cordes_constant():
    A = exp1_coefficient(20)
    rep = cordes_epsilon(ControlProblem([Control(0, A)]), GRID)
    assert rep.epsilon == pytest.approx(0.6)
    signs = A(np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]]))[:, 0, 1]
    assert np.all(np.abs(signs) >= 1)
    assert np.sign(signs).tolist() == [1, -1, -1, 1]


def test_exp1_forcing_matches_solution():
    b = builtin_exp1(0.5, 20)
    x = GRID[:50]
    f = b.problem.controls[0].f(x)
    A = b.problem.controls[0].A(x)
    assert np.allclose(f, np.einsum("nij,nij->n", A, b.exact.hess(x)))


def test_checkerboard_scale_does_not_change_the_solution():
    # gamma renormalisation cancels chi, so the discrete solution does not see it
    V = FeSpace(square_mesh(4), 2)
    u = [howard_solve(V, builtin_exp1(0.5, 4, large=c).problem, SchemeParams()).u.coeffs
         for c in (1.0, 1000.0)]
    assert np.allclose(u[0], u[1], atol=1e-10)


def test_parameter_validation():
    with pytest.raises(ValueError):
        builtin_exp1(1.5)
    with pytest.raises(ValueError):
        builtin_exp1(0.5, N=3)
    with pytest.raises(ValueError):
        builtin_exp2(N=5)
    with pytest.raises(ValueError):
        builtin_exp3(1.2)


def test_exp3_benchmark_shapes():
    b = builtin_exp3(0.5)
    assert b.mesh.n_triangles == exp3_initial_mesh().n_triangles == 8
    x = GRID[:10]
    # the solver unknown is -u
    assert np.allclose(b.exact.u(x), -exp3_solution(0.5).u(x))
    u = builtin_exp3(None)
    assert u.exact is None and u.ma.g_is_zero


def test_radial_hessian_at_boundary_point():
    ex = radial_power(0.5)
    x = np.array([[1.0, 0.0]])
    assert np.allclose(ex.hess(x), fd_hessian(ex.u, x, h=1e-3), atol=1e-6)
