"""Monge-Ampere det D^2 u = f, u convex, as an HJB problem.

For convex u,

    max_{W in X} { -W : D^2 u + 2 sqrt(det W) sqrt(f) } = 0,

with X the symmetric positive semidefinite 2x2 matrices of unit trace.  The
solver works with v = -u, for which the problem reads

    sup_{W in X_xi} { W : D^2 v - f^W } = 0,   f^W = -2 sqrt(det W) sqrt(f),

so the generic sup-form machinery applies with constant coefficients A^W = W
and boundary datum -g.  X_xi restricts to det W >= xi and is replaced by a
finite grid of matrices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .problem import Control, ControlProblem, ExactSolution, frobenius

DEFAULT_XI = 0.02
DEFAULT_GRID = (16, 16)


class DomainError(ValueError):
    pass


@dataclass
class ControlGrid:
    """Trace-one symmetric matrices with their determinants and gamma values."""

    matrices: np.ndarray  # (M, 2, 2)
    lambdas: np.ndarray  # (M,)
    thetas: np.ndarray  # (M,)
    xi: float

    @property
    def det(self):
        return np.linalg.det(self.matrices)

    @property
    def gamma(self):
        # Tr W / |W|^2 with Tr W = 1 and |W|^2 = 1 - 2 det W
        return 1.0 / (1.0 - 2.0 * self.det)

    def __len__(self):
        return len(self.matrices)


def rotated_diag(lam, theta):
    """R(theta) diag(lam, 1 - lam) R(theta)^T, vectorised over lam and theta."""
    lam = np.asarray(lam, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    W = np.empty(np.broadcast(lam, c).shape + (2, 2))
    W[..., 0, 0] = lam * c * c + (1 - lam) * s * s
    W[..., 1, 1] = lam * s * s + (1 - lam) * c * c
    W[..., 0, 1] = W[..., 1, 0] = (2 * lam - 1) * c * s
    return W


def lambda_range(xi):
    """Interval of lambda with lambda (1 - lambda) >= xi."""
    r = np.sqrt(max(0.0, 0.25 - xi))
    return 0.5 - r, 0.5 + r


def build_control_grid(xi=DEFAULT_XI, n_lambda=DEFAULT_GRID[0], n_theta=DEFAULT_GRID[1]):
    """Grid over X_xi: lambda uniform on its admissible interval, theta uniform
    on [0, pi), plus (1/2) I.

    Duplicates (all rotations of (1/2) I when the lambda interval collapses)
    are removed, keeping the first occurrence.
    """
    if not 0.0 < xi <= 0.25:
        raise DomainError(f"xi must lie in (0, 1/4], got {xi}")
    if n_lambda < 1 or n_theta < 1:
        raise DomainError("grid resolutions must be positive")
    lo, hi = lambda_range(xi)
    lams = np.linspace(lo, hi, n_lambda) if n_lambda > 1 else np.array([0.5])
    thetas = np.arange(n_theta) * (np.pi / n_theta)
    L, T = np.meshgrid(lams, thetas, indexing="ij")
    L = np.concatenate([[0.5], L.ravel()])
    T = np.concatenate([[0.0], T.ravel()])
    W = rotated_diag(L, T)
    # drop repeated matrices, e.g. rotations of (1/2) I
    keep = []
    seen = set()
    for k, Wk in enumerate(W):
        key = tuple(np.round(Wk.ravel(), 14))
        if key not in seen:
            seen.add(key)
            keep.append(k)
    keep = np.array(keep)
    return ControlGrid(W[keep], L[keep], T[keep], float(xi))


@dataclass
class MaProblem:
    """det D^2 u = f in the domain, u = g on the boundary, u convex."""

    f: Callable
    g: Callable
    xi: float = DEFAULT_XI
    grid: tuple = DEFAULT_GRID
    g_hessian: Optional[Callable] = None
    g_is_zero: bool = False
    exact: Optional[ExactSolution] = None
    name: str = "monge-ampere"

    def __post_init__(self):
        if not 0.0 < self.xi <= 0.25:
            raise DomainError(f"xi must lie in (0, 1/4], got {self.xi}")


def check_positive(f, points):
    vals = np.asarray(f(np.asarray(points, dtype=float)), dtype=float)
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0.0):
        k = int(np.argmin(np.where(np.isfinite(vals), vals, -np.inf)))
        raise DomainError(f"f must be positive; f = {vals[k]:.6g} at {points[k]}")


class MaControlProblem(ControlProblem):
    """HJB problem for -u with constant controls W; maximisation is vectorised
    over the whole grid."""

    def __init__(self, ma: MaProblem, grid: ControlGrid, sample_points=None, mode="grid"):
        if mode not in ("grid", "continuous"):
            raise ValueError(f"unknown control mode {mode!r}")
        self.mode = mode
        sqrt_det = np.sqrt(np.clip(grid.det, 0.0, None))
        self.grid = grid
        self.ma = ma
        self._sqrt_det = sqrt_det
        f = ma.f

        def make(k):
            w = sqrt_det[k]
            return Control((float(grid.lambdas[k]), float(grid.thetas[k])), grid.matrices[k],
                           lambda x, w=w: -2.0 * w * np.sqrt(f(x)))

        gh = None if ma.g_hessian is None else (lambda x: -ma.g_hessian(x))
        super().__init__([make(k) for k in range(len(grid))], g=lambda x: -ma.g(x),
                         g_hessian=gh, name=ma.name, g_is_zero=ma.g_is_zero)
        if sample_points is not None:
            check_positive(f, sample_points)

    def prepare(self, points):
        if self.mode == "continuous":
            return _PreparedContinuous(self, np.asarray(points, dtype=float))
        return _PreparedGrid(self, np.asarray(points, dtype=float))


class _PreparedGrid:
    _BLOCK = 1 << 14

    def __init__(self, problem: MaControlProblem, points):
        self.problem = problem
        self.points = points
        fv = np.asarray(problem.ma.f(points), dtype=float)
        if np.any(fv <= 0.0):
            raise DomainError("f must be positive at every quadrature point")
        self.sqrt_f = np.sqrt(fv)
        g = problem.grid.gamma
        W = problem.grid.matrices
        # gamma W in compact (xx, 2 xy, yy) form so that H : gamma W is a dot product
        self.gW = g[:, None, None] * W
        self.gW_flat = np.stack([self.gW[:, 0, 0], 2 * self.gW[:, 0, 1], self.gW[:, 1, 1]], 1)
        self.gc = 2.0 * g * problem._sqrt_det  # gamma f^W = -gc sqrt(f)

    def maximize(self, hessians):
        H = np.asarray(hessians, dtype=float)
        n = len(H)
        Hc = np.stack([H[:, 0, 0], 0.5 * (H[:, 0, 1] + H[:, 1, 0]), H[:, 1, 1]], 1)
        best = np.empty(n)
        index = np.empty(n, dtype=np.int64)
        for s in range(0, n, self._BLOCK):
            sl = slice(s, min(n, s + self._BLOCK))
            vals = Hc[sl] @ self.gW_flat.T + self.sqrt_f[sl, None] * self.gc[None, :]
            k = np.argmax(vals, axis=1)  # first maximiser in list order
            index[sl] = k
            best[sl] = vals[np.arange(len(k)), k]
        gA = self.gW[index]
        gf = -self.gc[index] * self.sqrt_f
        return best, index, gA, gf


class _PreparedContinuous(_PreparedGrid):
    """Maximisation over all of X_xi instead of the grid.

    With W = R diag(lam, 1 - lam) R^T and t = 2 lam - 1, only H : W depends
    on the rotation, so the optimal W shares the eigenvectors of H with the
    larger weight on the larger eigenvalue.  What remains is

        G(t) = 2 (m + t d + s sqrt(1 - t^2)) / (1 + t^2),  0 <= t <= tau,

    with m, d the mean and half-gap of the eigenvalues of H, s = sqrt(f) and
    tau = sqrt(1 - 4 xi).  G is sampled on a fixed grid; a sign change of G'
    next to the best sample is then located by bisection, which pins the
    maximiser down to rounding (a search on G itself only reaches the square
    root of the machine precision).
    """

    _SAMPLES = 65
    _BISECTIONS = 60

    @staticmethod
    def _objective(t, m, d, s):
        return 2.0 * (m + t * d + s * np.sqrt(np.clip(1.0 - t * t, 0.0, None))) / (1.0 + t * t)

    @staticmethod
    def _slope(t, m, d, s):
        # sign of G'(t), up to the positive factor 2 / (1 + t^2)^2
        q = np.sqrt(np.clip(1.0 - t * t, 1e-300, None))
        return (d - s * t / q) * (1.0 + t * t) - 2.0 * t * (m + t * d + s * q)

    def maximize(self, hessians):
        H = np.asarray(hessians, dtype=float)
        n = len(H)
        mu, vec = np.linalg.eigh(0.5 * (H + np.swapaxes(H, -1, -2)))  # ascending
        m = 0.5 * (mu[:, 0] + mu[:, 1])
        d = 0.5 * (mu[:, 1] - mu[:, 0])
        s = self.sqrt_f
        tau = np.sqrt(max(0.0, 1.0 - 4.0 * self.problem.grid.xi))
        ts = np.linspace(0.0, tau, self._SAMPLES)
        vals = self._objective(ts[None, :], m[:, None], d[:, None], s[:, None])
        k = np.argmax(vals, axis=1)
        step = ts[1] - ts[0] if len(ts) > 1 else 0.0
        lo = np.clip(ts[k] - step, 0.0, tau)
        hi = np.clip(ts[k] + step, 0.0, tau)
        bracket = (self._slope(lo, m, d, s) > 0) & (self._slope(hi, m, d, s) < 0)
        a, b = lo.copy(), hi.copy()
        for _ in range(self._BISECTIONS):
            c = 0.5 * (a + b)
            up = self._slope(c, m, d, s) > 0
            a = np.where(up, c, a)
            b = np.where(up, b, c)
        t = np.where(bracket, 0.5 * (a + b), ts[k])
        cand = np.stack([ts[k], t], axis=1)
        cv = self._objective(cand, m[:, None], d[:, None], s[:, None])
        pick = np.argmax(cv, axis=1)
        t = cand[np.arange(n), pick]
        best = cv[np.arange(n), pick]
        lam = 0.5 * (1.0 + t)
        v0, v1 = vec[:, :, 0], vec[:, :, 1]  # v1 belongs to the larger eigenvalue
        W = (lam[:, None, None] * np.einsum("ni,nj->nij", v1, v1)
             + (1.0 - lam)[:, None, None] * np.einsum("ni,nj->nij", v0, v0))
        det = lam * (1.0 - lam)
        g = 1.0 / (1.0 - 2.0 * det)
        gA = g[:, None, None] * W
        gf = -2.0 * g * np.sqrt(det) * s
        return best, np.zeros(n, dtype=np.int64), gA, gf


def ma_to_hjb(ma: MaProblem, grid: ControlGrid | None = None, sample_points=None,
              mode="grid"):
    """HJB problem solved for v = -u (boundary datum -g, A^W = W,
    f^W = -2 sqrt(det W) sqrt(f)).

    ``mode="grid"`` maximises over the finite control grid; ``"continuous"``
    maximises over all of X_xi (the grid then only serves as control labels).
    """
    grid = grid if grid is not None else build_control_grid(ma.xi, *ma.grid)
    if len(grid) == 0:
        raise DomainError("empty control grid")
    return MaControlProblem(ma, grid, sample_points, mode)


def xi_from_solution_bound(f_min, hessian_sup):
    """min(1/4, f_min / (2 hessian_sup^2)), hessian_sup the Frobenius sup of D^2 u."""
    if not (f_min > 0 and hessian_sup > 0):
        raise DomainError("f_min and hessian_sup must be positive")
    return min(0.25, f_min / (2.0 * hessian_sup ** 2))


def ma_hamiltonian(W, H, f):
    """-W : H + 2 sqrt(det W) sqrt(f), broadcasting over leading axes."""
    det = np.clip(np.linalg.det(W), 0.0, None)
    return -frobenius(W, H) + 2.0 * np.sqrt(det) * np.sqrt(f)


def grid_argmax(grid: ControlGrid, H, f):
    """Brute-force maximum of the Monge-Ampere Hamiltonian over the grid.

    ``H`` has shape (n, 2, 2) and ``f`` shape (n,); returns (value, index).
    """
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float)
    vals = ma_hamiltonian(grid.matrices[None], H[:, None], f[:, None])
    k = np.argmax(vals, axis=1)
    return vals[np.arange(len(k)), k], k


def cofactor_policy_diagnostic(u_h, f, ref_points=None, threshold=1e-8):
    """A_u = Cof(D^2 u_h) / Lap u_h at quadrature points, with the residual
    -A_u : D^2 u_h + 2 sqrt(det A_u) sqrt(f).

    ``u_h`` approximates the convex solution u itself (not -u).  Points where
    |Lap u_h| < threshold are masked out.  Returns ``(A_u, residual, mask)``
    with leading shape (nt, nq).
    """
    from .quadrature import triangle_rule

    space = u_h.space
    if ref_points is None:
        ref_points = triangle_rule(2 * space.degree).points
    _, _, H = u_h.evaluate_reference(ref_points)
    x = space.map_points(ref_points)
    lap = H[..., 0, 0] + H[..., 1, 1]
    mask = np.abs(lap) >= threshold
    cof = np.empty_like(H)
    cof[..., 0, 0] = H[..., 1, 1]
    cof[..., 1, 1] = H[..., 0, 0]
    cof[..., 0, 1] = -H[..., 0, 1]
    cof[..., 1, 0] = -H[..., 1, 0]
    safe = np.where(mask, lap, 1.0)
    A = cof / safe[..., None, None]
    fv = np.asarray(f(x.reshape(-1, 2)), dtype=float).reshape(x.shape[:2])
    res = ma_hamiltonian(A, H, np.clip(fv, 0.0, None))
    res = np.where(mask, res, np.nan)
    return A, res, mask
