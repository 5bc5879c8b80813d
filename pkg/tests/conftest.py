import numpy as np
import pytest

from hjbfem.problem import Control, ControlProblem, ExactSolution

PI = np.pi


def sine_solution():
    """u = sin(pi x) sin(pi y) with derivatives."""

    def u(x):
        return np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1])

    def grad(x):
        return PI * np.stack([np.cos(PI * x[:, 0]) * np.sin(PI * x[:, 1]),
                              np.sin(PI * x[:, 0]) * np.cos(PI * x[:, 1])], axis=1)

    def hess(x):
        s0, s1 = np.sin(PI * x[:, 0]), np.sin(PI * x[:, 1])
        c0, c1 = np.cos(PI * x[:, 0]), np.cos(PI * x[:, 1])
        H = np.empty((len(x), 2, 2))
        H[:, 0, 0] = H[:, 1, 1] = -PI ** 2 * s0 * s1
        H[:, 0, 1] = H[:, 1, 0] = PI ** 2 * c0 * c1
        return H

    return ExactSolution(u, grad, hess)


def perturbed_identity(x):
    """I plus a small smooth symmetric perturbation."""
    A = np.zeros((len(x), 2, 2))
    A[:, 0, 0] = 1.0 + 0.2 * x[:, 0] * x[:, 1]
    A[:, 1, 1] = 1.0 + 0.1 * np.sin(PI * x[:, 0])
    A[:, 0, 1] = A[:, 1, 0] = 0.1 * x[:, 0] * (1.0 - x[:, 1])
    return A


def manufactured_problem(A=perturbed_identity, exact=None):
    exact = exact or sine_solution()

    def f(x):
        return np.einsum("nij,nij->n", A(x), exact.hess(x))

    return ControlProblem([Control("a", A, f)], g=exact.u, g_hessian=exact.hess,
                          name="manufactured"), exact


def quadratic_solution(c):
    """u = c0 x^2 + c1 xy + c2 y^2 + c3 x + c4 y + c5."""
    c = np.asarray(c, dtype=float)

    def u(x):
        return (c[0] * x[:, 0] ** 2 + c[1] * x[:, 0] * x[:, 1] + c[2] * x[:, 1] ** 2
                + c[3] * x[:, 0] + c[4] * x[:, 1] + c[5])

    def grad(x):
        return np.stack([2 * c[0] * x[:, 0] + c[1] * x[:, 1] + c[3],
                         c[1] * x[:, 0] + 2 * c[2] * x[:, 1] + c[4]], axis=1)

    H = np.array([[2 * c[0], c[1]], [c[1], 2 * c[2]]])

    def hess(x):
        return np.broadcast_to(H, (len(x), 2, 2)).copy()

    return ExactSolution(u, grad, hess)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
