"""Problem definition files.

A YAML document describes either a built-in experiment or a custom problem
on a convex polygon.  Coefficients are expressions in ``x`` and ``y``
(``x1``/``x2`` are accepted as aliases), parsed with sympy.  Example::

    problem: custom
    domain: [[0, 0], [1, 0], [1, 1], [0, 1]]
    initial_refinements: 2
    degree: 2
    controls:
      - label: a1
        A: [["2", "0"], ["0", "1"]]
        f: "4*exp(x)"
    g: "x**2 + y**2"
    exact: "x**2 + y**2"      # optional, enables error columns

A Monge-Ampere problem replaces ``controls``/``g`` by::

    monge_ampere:
      f: "1"
      g: "0"
      exact: null
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import sympy
import yaml

from .experiments import Benchmark
from .mesh import polygon_mesh, uniform_refine
from .monge_ampere import DEFAULT_GRID, DEFAULT_XI, MaProblem, ma_to_hjb
from .problem import Control, ControlProblem, ExactSolution


class ConfigError(ValueError):
    pass


_X, _Y = sympy.symbols("x y", real=True)
_NAMES = {"x": _X, "y": _Y, "x1": _X, "x2": _Y, "pi": sympy.pi, "e": sympy.E}


def parse_expression(text):
    try:
        return sympy.sympify(str(text), locals=_NAMES)
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc}") from exc


def scalar_field(expr):
    """Vectorised callable points -> values for a sympy expression."""
    expr = parse_expression(expr) if not isinstance(expr, sympy.Basic) else expr
    extra = expr.free_symbols - {_X, _Y}
    if extra:
        raise ConfigError(f"unknown symbols {sorted(map(str, extra))} in {expr}")
    fn = sympy.lambdify((_X, _Y), expr, modules="numpy")

    def field(points):
        points = np.asarray(points, dtype=float)
        out = np.asarray(fn(points[:, 0], points[:, 1]), dtype=float)
        return np.broadcast_to(out, (len(points),)).copy()

    return field


def matrix_field(entries):
    rows = [[parse_expression(e) for e in row] for row in entries]
    if len(rows) != 2 or any(len(r) != 2 for r in rows):
        raise ConfigError("coefficient matrices must be 2x2")
    if sympy.simplify(rows[0][1] - rows[1][0]) != 0:
        raise ConfigError("coefficient matrices must be symmetric")
    fields = [[scalar_field(e) for e in row] for row in rows]

    def field(points):
        out = np.empty((len(points), 2, 2))
        for i in range(2):
            for j in range(2):
                out[:, i, j] = fields[i][j](points)
        return out

    return field


def exact_from_expression(text):
    """Function, gradient and Hessian from one expression."""
    u = parse_expression(text)
    du = [sympy.diff(u, v) for v in (_X, _Y)]
    ddu = [[sympy.diff(d, v) for v in (_X, _Y)] for d in du]
    fu = scalar_field(u)
    fg = [scalar_field(d) for d in du]
    fh = [[scalar_field(d) for d in row] for row in ddu]
    return ExactSolution(
        fu,
        lambda p: np.stack([g(p) for g in fg], axis=1),
        lambda p: np.stack([np.stack([h(p) for h in row], axis=1) for row in fh], axis=1),
    )


def _check_convex(poly):
    poly = np.asarray(poly, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
        raise ConfigError("domain must be a list of at least three [x, y] vertices")
    d = np.roll(poly, -1, axis=0) - poly
    cross = d[:, 0] * np.roll(d, -1, axis=0)[:, 1] - d[:, 1] * np.roll(d, -1, axis=0)[:, 0]
    if not (np.all(cross > 0) or np.all(cross < 0)):
        raise ConfigError("domain polygon must be strictly convex")
    return poly


def load_config(path):
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def custom_benchmark(cfg: dict, xi=None, grid=None, control_mode="grid") -> Benchmark:
    """Benchmark from the ``domain``/``controls``/``monge_ampere`` keys."""
    poly = _check_convex(cfg.get("domain", [[0, 0], [1, 0], [1, 1], [0, 1]]))
    mesh = polygon_mesh(poly)
    for _ in range(int(cfg.get("initial_refinements", 2))):
        mesh = uniform_refine(mesh)
    if "monge_ampere" in cfg:
        ma_cfg = cfg["monge_ampere"] or {}
        exact = ma_cfg.get("exact")
        ex = exact_from_expression(exact) if exact is not None else None
        g_text = ma_cfg.get("g", "0")
        g_expr = parse_expression(g_text)
        ma = MaProblem(
            f=scalar_field(ma_cfg.get("f", "1")),
            g=scalar_field(g_expr),
            xi=float(xi if xi is not None else ma_cfg.get("xi", DEFAULT_XI)),
            grid=tuple(grid or ma_cfg.get("grid", DEFAULT_GRID)),
            g_hessian=exact_from_expression(g_expr).hess,
            g_is_zero=g_expr == 0,
            exact=ex,
            name="custom monge-ampere",
        )
        pts = mesh.vertices
        problem = ma_to_hjb(ma, sample_points=pts, mode=control_mode)
        return Benchmark(problem, mesh, -ex if ex is not None else None, ma, "custom MA")
    controls_cfg = cfg.get("controls")
    if not controls_cfg:
        raise ConfigError("custom problem needs a non-empty 'controls' list")
    controls = []
    for k, c in enumerate(controls_cfg):
        if "A" not in c:
            raise ConfigError(f"control {k} has no coefficient 'A'")
        controls.append(Control(c.get("label", k), matrix_field(c["A"]),
                                scalar_field(c.get("f", "0"))))
    g_expr = parse_expression(cfg.get("g", "0"))
    exact = cfg.get("exact")
    problem = ControlProblem(controls, g=scalar_field(g_expr),
                             g_hessian=exact_from_expression(g_expr).hess,
                             name=str(cfg.get("name", "custom")), g_is_zero=g_expr == 0)
    ex = exact_from_expression(exact) if exact is not None else None
    return Benchmark(problem, mesh, ex, None, problem.name)
