import numpy as np
import pytest
import scipy.sparse as sp

from conftest import manufactured_problem, quadratic_solution
from hjbfem.experiments import exp1_coefficient
from hjbfem.forms import (
    Discretization,
    SchemeParams,
    apply_dirichlet,
    consistency_residual,
    error_norms,
    function_norms,
    mesh_norm,
)
from hjbfem.mesh import bisect_marked, square_mesh
from hjbfem.problem import Control, ControlProblem
from hjbfem.solver import howard_solve, linear_solve
from hjbfem.space import DiscreteFunction, FeSpace, interpolate


def x1_squared(x):
    return x[:, 0] ** 2


def test_scheme_params_defaults_and_validation():
    assert SchemeParams(degree=2).sigma == 10.0
    assert SchemeParams(degree=3).sigma == 50.0
    assert SchemeParams(degree=4).sigma == 100.0
    assert SchemeParams(degree=3).quad_degree == 6
    for bad in ({"sigma": 0.0}, {"tol": 0.0}, {"itermax": 0}, {"workers": 0}):
        with pytest.raises(ValueError):
            SchemeParams(**bad)


@pytest.mark.parametrize("p", [2, 3, 4])
def test_penalty_kills_global_polynomials(p, rng):
    m = bisect_marked(square_mesh(2), marked_triangles={0, 3})
    V = FeSpace(m, p)
    c = rng.normal(size=p + 1)
    u = interpolate(V, lambda x: sum(ck * x[:, 0] ** (p - k) * x[:, 1] ** k for k, ck in enumerate(c)))
    disc = Discretization(V, SchemeParams(degree=p))
    assert np.max(np.abs(disc.penalty @ u.coeffs)) < 1e-9
    # but a generic discrete function does jump
    w = DiscreteFunction(V, rng.normal(size=V.n_dofs))
    assert disc.jump_seminorm_sq(w) > 1e-3


def test_policy_matrix_is_not_symmetric_for_anisotropic_coefficient():
    V = FeSpace(square_mesh(1), 2)
    prob = ControlProblem([Control(0, np.diag([2.0, 1.0]))])
    disc = Discretization(V, SchemeParams())
    _, policy = disc.f_gamma(prob, V.zero())
    A, _ = disc.policy_system(policy)
    assert abs(A - A.T).max() > 1e-8


def test_identity_coefficient_gives_symmetric_matrix():
    V = FeSpace(square_mesh(2), 3)
    prob = ControlProblem([Control(0, np.eye(2))])
    disc = Discretization(V, SchemeParams(degree=3))
    _, policy = disc.f_gamma(prob, V.zero())
    A, _ = disc.policy_system(policy)
    assert abs(A - A.T).max() < 1e-9 * abs(A).max()


@pytest.mark.parametrize("p", [2, 3])
def test_mesh_norm_examples(p, rng):
    V = FeSpace(square_mesh(3, "alternating"), p)
    for sigma in (1.0, 10.0, 1000.0):
        assert mesh_norm(V, interpolate(V, x1_squared), sigma) ** 2 == pytest.approx(4.0)
    affine = interpolate(V, lambda x: 3.0 * x[:, 0] - x[:, 1] + 0.5)
    assert mesh_norm(V, affine, 10.0) < 1e-10
    v = V.zero()
    v.coeffs[V.interior_dofs] = rng.normal(size=len(V.interior_dofs))
    assert mesh_norm(V, v, 10.0) > 0


def test_error_norms_examples():
    V = FeSpace(square_mesh(2), 2)
    ex = quadratic_solution([1, 0, 0, 0, 0, 0])
    e = error_norms(V, V.zero(), ex.u, ex.grad, ex.hess, 10.0)
    assert e["L2"] == pytest.approx(np.sqrt(1 / 5))
    assert e["H1"] == pytest.approx(np.sqrt(4 / 3))
    assert e["h"] == pytest.approx(2.0)
    assert e["Linf_nodal"] == pytest.approx(1.0)
    uh = interpolate(V, ex.u)
    e = error_norms(V, uh, ex.u, ex.grad, ex.hess, 10.0)
    assert max(e.values()) < 1e-10


def test_error_norms_are_homogeneous(rng):
    from conftest import sine_solution

    V = FeSpace(square_mesh(3), 2)
    ex = sine_solution()
    uh = DiscreteFunction(V, rng.normal(size=V.n_dofs))
    e1 = error_norms(V, uh, ex.u, ex.grad, ex.hess, 10.0)
    c = -2.5
    e2 = error_norms(V, c * uh, lambda x: c * ex.u(x), lambda x: c * ex.grad(x),
                     lambda x: c * ex.hess(x), 10.0)
    for k in e1:
        assert e2[k] == pytest.approx(abs(c) * e1[k], rel=1e-12)


def test_function_norms_match_mesh_norm(rng):
    V = FeSpace(square_mesh(2), 3)
    v = DiscreteFunction(V, rng.normal(size=V.n_dofs))
    assert function_norms(V, v, 50.0)["h"] == pytest.approx(mesh_norm(V, v, 50.0, 8))


def test_consistency_residual():
    V = FeSpace(square_mesh(3), 2)
    prob = ControlProblem([Control(0, np.eye(2), 2.0)], g=x1_squared)
    disc = Discretization(V, SchemeParams())
    u = interpolate(V, x1_squared)
    assert consistency_residual(disc, prob, u) <= 1e-10
    w = V.zero()
    w.coeffs[V.interior_dofs] = np.random.default_rng(0).normal(size=len(V.interior_dofs))
    w = w * (1.0 / mesh_norm(V, w, 10.0))
    assert consistency_residual(disc, prob, u + w) > 1e-6


def test_solver_output_is_consistent():
    prob, _ = manufactured_problem()
    V = FeSpace(square_mesh(4), 2)
    params = SchemeParams(tol=1e-12)
    res = howard_solve(V, prob, params)
    assert consistency_residual(Discretization(V, params), prob, res.u) < 1e-8


def test_apply_dirichlet():
    A = sp.csr_matrix(np.array([[4.0, 1, 0], [1, 4, 1], [0, 1, 4]]))
    b = np.array([1.0, 2.0, 3.0])
    A_II, b_I, interior = apply_dirichlet(A, b, [0, 2], [0.0, 0.0])
    assert np.array_equal(interior, [1])
    assert A_II.toarray().tolist() == [[4.0]]
    assert b_I.tolist() == [2.0]
    A_II, b_I, _ = apply_dirichlet(A, b, [0, 2], [1.0, 2.0])
    assert b_I.tolist() == [2.0 - 1.0 - 2.0]


def test_single_triangle_has_no_interior_dofs():
    from hjbfem.mesh import Mesh

    m = Mesh.from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    V = FeSpace(m, 2)
    assert len(V.interior_dofs) == 0
    ex = quadratic_solution([1, 2, 3, 4, 5, 6])
    prob = ControlProblem([Control(0, np.eye(2), 0.0)], g=ex.u)
    res = howard_solve(V, prob, SchemeParams())
    assert np.allclose(res.u.coeffs, ex.u(V.node_coords))


@pytest.mark.parametrize("p", [2, 3])
def test_polynomial_solution_is_reproduced(p):
    ex = quadratic_solution([1.0, 0.5, 2.0, -1.0, 0.3, 0.2])
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    f = float(np.sum(A * ex.hess(np.zeros((1, 2)))[0]))
    prob = ControlProblem([Control(0, A, f)], g=ex.u)
    V = FeSpace(square_mesh(3, "alternating"), p)
    res = howard_solve(V, prob, SchemeParams(degree=p))
    assert np.max(np.abs(res.u.coeffs - ex.u(V.node_coords))) < 1e-10


def _three_control_problem():
    A1 = exp1_coefficient(2)
    return ControlProblem([
        Control("checker", A1, lambda x: np.sin(3 * x[:, 0])),
        Control("aniso", np.diag([1.0, 5.0]), 1.0),
        Control("mixed", np.array([[3.0, -1.0], [-1.0, 1.0]]), lambda x: x[:, 1]),
    ])


def _random_pair(V, rng):
    g = rng.normal(size=V.n_dofs)
    u = rng.normal(size=V.n_dofs)
    v = rng.normal(size=V.n_dofs)
    u[V.boundary_dofs] = v[V.boundary_dofs] = g[V.boundary_dofs]
    return DiscreteFunction(V, u), DiscreteFunction(V, v)


@pytest.mark.parametrize("p", [2, 3])
def test_strict_monotonicity(p, rng):
    V = FeSpace(square_mesh(4), p)
    prob = _three_control_problem()
    disc = Discretization(V, SchemeParams(degree=p))
    for _ in range(100):
        u, v = _random_pair(V, rng)
        d = u - v
        d = d * (1.0 / disc.mesh_norm(d))
        v = u - d
        gap = disc.form(prob, u, d) - disc.form(prob, v, d)
        assert gap >= 1e-12


# Largest |a_h(u;w) - a_h(v;w)| / (|u - v|_h |w|_h) seen on the 4x4 mesh with the
# three-control problem above; the bound is a regression value, not a derived one.
LIPSCHITZ_BOUND = {2: 0.6, 3: 0.6}  # observed about 0.45 and 0.43


@pytest.mark.parametrize("p", [2, 3])
def test_lipschitz_bound(p, rng):
    V = FeSpace(square_mesh(4), p)
    prob = _three_control_problem()
    disc = Discretization(V, SchemeParams(degree=p))
    worst = 0.0
    for _ in range(100):
        u, v = _random_pair(V, rng)
        w = V.zero()
        w.coeffs[V.interior_dofs] = rng.normal(size=len(V.interior_dofs))
        diff = abs(disc.form(prob, u, w) - disc.form(prob, v, w))
        worst = max(worst, diff / (disc.mesh_norm(u - v) * disc.mesh_norm(w)))
    assert worst <= LIPSCHITZ_BOUND[p]


def test_linear_solve_examples():
    b = np.array([1.0, -2.0, 3.0])
    assert np.allclose(linear_solve(sp.identity(3), b), b)
    x = linear_solve(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0]))
    assert np.allclose(x, [1.0, 1.0], atol=1e-14)
