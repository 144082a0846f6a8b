"""Tiny arithmetic expressions over node coordinates.

Grammar: numbers, ``x1 x2 x3 pi``, ``+ - * / **``, unary minus and the
functions ``sin cos exp``. Anything else is rejected before evaluation.
"""
import ast

import numpy as np

from .errors import ConfigError

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


def _eval(node, env):
    if isinstance(node, ast.Expression):
        return _eval(node.body, env)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in env:
            return env[node.id]
        raise ConfigError(f"unknown variable {node.id!r} (allowed: x1, x2, x3, pi)")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
            and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords:
        return _FUNCS[node.func.id](_eval(node.args[0], env))
    raise ConfigError(f"unsupported syntax in expression: {ast.dump(node)[:60]}")


def compile_expr(text):
    """Parse ``text`` and return a function of the coordinate array ``(..., 3)``."""
    if not isinstance(text, str):
        raise ConfigError(f"expression must be a string, got {text!r}")
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}") from None
    # validate once on scalars so errors surface at config time
    _eval(tree, {"x1": 0.5, "x2": 0.5, "x3": 0.5, "pi": np.pi})

    def fn(x):
        env = {"x1": x[..., 0], "x2": x[..., 1], "x3": x[..., 2], "pi": np.pi}
        with np.errstate(all="ignore"):
            out = _eval(tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()

    return fn


def evaluate(text, coords):
    return compile_expr(text)(coords)
