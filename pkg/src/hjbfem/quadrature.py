"""Quadrature on the reference triangle and the reference interval."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@dataclass(frozen=True)
class QuadratureRule:
    """Points (reference coordinates) and positive weights.

    For triangle rules ``points`` has shape (nq, 2) on the triangle with
    vertices (0,0), (1,0), (0,1) and the weights sum to 1/2.  For edge rules
    ``points`` has shape (nq,) on [0, 1] and the weights sum to 1.
    """

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    @property
    def barycentric(self):
        p = np.atleast_2d(self.points)
        return np.column_stack([1.0 - p[:, 0] - p[:, 1], p[:, 0], p[:, 1]])


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi rule exact for polynomials of total ``degree``."""
    n = max(1, (degree + 2) // 2)
    # x-direction carries the Duffy Jacobian (1 - x): Gauss-Jacobi(1, 0)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = roots_legendre(n)
    x = 0.5 * (xj + 1.0)
    wx = 0.25 * wj
    y = 0.5 * (xl + 1.0)
    wy = 0.5 * wl
    X, Y = np.meshgrid(x, y, indexing="ij")
    W = np.outer(wx, wy)
    pts = np.column_stack([X.ravel(), (Y * (1.0 - X)).ravel()])
    rule = QuadratureRule(pts, W.ravel(), 2 * n - 1)
    return rule


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1] exact up to ``degree``."""
    n = max(1, (degree + 2) // 2)
    x, w = roots_legendre(n)
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, 2 * n - 1)
