"""Arithmetic expressions over (t, x) with symbolic x-derivatives.

Parsing and differentiation are delegated to sympy; the parser only sees a
whitelisted namespace, so arbitrary Python cannot be smuggled in through a
config file.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

from .errors import ConfigError

T, X = sp.symbols("t x", real=True)

_NAMESPACE = {
    "t": T, "x": X, "pi": sp.pi, "e": sp.E,
    "sin": sp.sin, "cos": sp.cos, "tan": sp.tan, "exp": sp.exp, "log": sp.log,
    "sqrt": sp.sqrt, "abs": sp.Abs, "Abs": sp.Abs, "sinh": sp.sinh, "cosh": sp.cosh,
    "tanh": sp.tanh, "asinh": sp.asinh, "atan": sp.atan, "sign": sp.sign,
    "Integer": sp.Integer, "Float": sp.Float, "Rational": sp.Rational, "Symbol": sp.Symbol,
}


def parse(text: str) -> sp.Expr:
    if "__" in text or len(text) > 500:
        raise ConfigError(f"rejected expression {text!r}")
    try:
        expr = parse_expr(text.replace("^", "**"), local_dict=dict(_NAMESPACE),
                          global_dict={"__builtins__": {}, **_NAMESPACE},
                          transformations=standard_transformations, evaluate=True)
    except Exception as exc:  # sympy raises a zoo of types here
        raise ConfigError(f"cannot parse expression {text!r}: {exc}") from exc
    if not isinstance(expr, sp.Expr):
        raise ConfigError(f"expression {text!r} is not arithmetic")
    extra = expr.free_symbols - {T, X}
    if extra:
        raise ConfigError(f"unknown names in {text!r}: {sorted(map(str, extra))}")
    return expr


def _vectorize(expr: sp.Expr):
    fn = sp.lambdify((T, X), expr, modules="numpy")

    def evaluate(t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        # constants lambdify to scalars; broadcast so callers always get arrays
        out = np.asarray(fn(t, x), dtype=float)
        return np.broadcast_to(out, np.broadcast(t, x).shape).copy()

    evaluate.expr = expr
    return evaluate


def _drop_singular(expr: sp.Expr) -> sp.Expr:
    """Remove DiracDelta and derivatives of sign(): both vanish off a null set."""
    expr = expr.replace(sp.DiracDelta, lambda *args: sp.S.Zero)
    return expr.replace(lambda e: isinstance(e, sp.Derivative), lambda e: sp.S.Zero)


@lru_cache(maxsize=64)
def derivatives(text: str, order: int = 3) -> dict:
    """Vectorized evaluators ``{"f", "dx", "dx2", "dx3", "dt"}`` for ``text``."""
    expr = parse(text)
    out = {"f": _vectorize(expr), "dt": _vectorize(sp.diff(expr, T))}
    d = expr
    for k in range(1, order + 1):
        d = _drop_singular(sp.diff(d, X))
        out["dx" if k == 1 else f"dx{k}"] = _vectorize(d)
    return out
