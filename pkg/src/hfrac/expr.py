"""Closed-form scalar fields over H^n, used for exterior data g and sources f.

A field is written as an arithmetic expression, e.g. ``"0.5 * bump(dist(1,0,0) / 0.8)"``
or ``"1 / gauge"``.  The text is parsed once with :mod:`ast` into a tree of
whitelisted nodes and evaluated vectorised over an ``(m, 2n+1)`` point array.

Variables: ``x1..xn, y1..yn, t`` (``x, y`` alias ``x1, y1``) and ``gauge``
(Koranyi gauge of the point).  Functions: ``exp, log, sqrt, abs, pos``
(positive part), ``min, max`` (two arguments), ``bump(s)`` (the C-infinity bump
``exp(1 - 1/(1-s^2))`` on ``|s| < 1``, zero elsewhere) and ``dist(c_1, ..., c_{2n+1})``
(gauge pseudo-distance from the constant point ``c``).
"""
from __future__ import annotations

import ast
import operator

import numpy as np

from .errors import InputError
from .hgroup import gauge_norm, group_inv, group_mul

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


_FUNCS = {
    "exp": (1, np.exp),
    "log": (1, np.log),
    "sqrt": (1, np.sqrt),
    "abs": (1, np.abs),
    "pos": (1, lambda v: np.maximum(v, 0.0)),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
    "bump": (1, _bump),
}


class Expr:
    """Parsed closed-form field; ``Expr(src)(points) -> values``."""

    def __init__(self, source: str):
        if not isinstance(source, str) or not source.strip():
            raise InputError("expression source must be a non-empty string")
        self.source = source.strip()
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise InputError(f"cannot parse expression {source!r}: {exc.msg}") from None
        self._tree = tree.body
        self._check(self._tree)

    def __repr__(self):
        return f"Expr({self.source!r})"

    def __eq__(self, other):
        return isinstance(other, Expr) and other.source == self.source

    def __hash__(self):
        return hash(self.source)

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise InputError(f"unsupported constant {node.value!r}")
        elif isinstance(node, ast.Name):
            pass  # resolved against the point dimension at evaluation time
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise InputError(f"unsupported operator {type(node.op).__name__}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise InputError(f"unsupported unary operator {type(node.op).__name__}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.keywords:
                raise InputError("only plain function calls are supported")
            name = node.func.id
            if name == "dist":
                for arg in node.args:
                    if _const_value(arg) is None:
                        raise InputError("dist() takes numeric constants only")
            elif name in _FUNCS:
                if len(node.args) != _FUNCS[name][0]:
                    raise InputError(f"{name}() takes {_FUNCS[name][0]} argument(s)")
                for arg in node.args:
                    self._check(arg)
            else:
                raise InputError(f"unsupported function {name!r}")
        else:
            raise InputError(f"unsupported expression node {type(node).__name__}")

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = pts.shape[-1]
        n = (d - 1) // 2
        out = self._eval(self._tree, pts, n)
        return np.broadcast_to(np.asarray(out, dtype=float), pts.shape[:-1]).copy()

    def _eval(self, node, pts, n):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return _variable(node.id, pts, n)
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, pts, n), self._eval(node.right, pts, n))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, pts, n)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call):
            name = node.func.id
            if name == "dist":
                c = np.array([_const_value(a) for a in node.args], dtype=float)
                if c.size != pts.shape[-1]:
                    raise InputError(f"dist() needs {pts.shape[-1]} coordinates, got {c.size}")
                return gauge_norm(group_mul(group_inv(c), pts))
            args = [self._eval(a, pts, n) for a in node.args]
            return _FUNCS[name][1](*args)
        raise InputError(f"unsupported expression node {type(node).__name__}")


def _const_value(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _const_value(node.operand)
        if v is None:
            return None
        return -v if isinstance(node.op, ast.USub) else v
    return None


def _variable(name, pts, n):
    if name == "t":
        return pts[..., -1]
    if name == "gauge":
        return gauge_norm(pts)
    if n == 1 and name in ("x", "y"):
        return pts[..., 0] if name == "x" else pts[..., 1]
    if len(name) > 1 and name[0] in "xy" and name[1:].isdigit():
        j = int(name[1:])
        if 1 <= j <= n:
            return pts[..., j - 1] if name[0] == "x" else pts[..., n + j - 1]
    raise InputError(f"unknown variable {name!r} for n={n}")


# Named closed forms -------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v))


def zero() -> Expr:
    return Expr("0")


def constant(c: float) -> Expr:
    return Expr(_fmt(c))


def _dist_src(center) -> str:
    if center is None:
        return "gauge"
    return "dist(" + ", ".join(_fmt(c) for c in center) + ")"


def gauge_power(beta: float, center=None, scale: float = 1.0) -> Expr:
    """scale * |c^{-1} o xi|^beta."""
    return Expr(f"{_fmt(scale)} * {_dist_src(center)} ** {_fmt(beta)}")


def smooth_bump(center, radius: float, amplitude: float = 1.0) -> Expr:
    """amplitude * bump(|c^{-1} o xi| / radius), supported in the gauge ball."""
    if radius <= 0:
        raise InputError("bump radius must be positive")
    return Expr(f"{_fmt(amplitude)} * bump({_dist_src(center)} / {_fmt(radius)})")


def gauge_decay(c: float = 1.0) -> Expr:
    """c (1 + |xi|^4)^(-1)."""
    return Expr(f"{_fmt(c)} / (1 + gauge ** 4)")
