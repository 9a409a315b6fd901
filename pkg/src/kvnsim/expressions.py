"""Tiny arithmetic grammar for user-supplied fields.

Accepted: numbers, the variables ``x1..xd`` (plus optional aliases such as
axis labels) and ``t``, the operators ``+ - * / **`` (``^`` is accepted as
power), unary minus, and the functions ``sin cos exp tanh``.  Expressions are
validated against this whitelist with :mod:`ast` and compiled into numpy
callables that broadcast over arrays of points.
"""
from __future__ import annotations

import ast
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh}
CONSTANTS = {"pi": np.pi}

_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_UNOPS = (ast.USub, ast.UAdd)


def _check(node: ast.AST, names: set[str], source: str):
    if isinstance(node, ast.Expression):
        _check(node.body, names, source)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
        _check(node.left, names, source)
        _check(node.right, names, source)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, _UNOPS):
        _check(node.operand, names, source)
    elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        pass
    elif isinstance(node, ast.Name):
        if node.id not in names and node.id not in CONSTANTS:
            raise ConfigError(f"unknown variable {node.id!r} in expression {source!r}")
    elif isinstance(node, ast.Call):
        if not (isinstance(node.func, ast.Name) and node.func.id in FUNCTIONS):
            raise ConfigError(f"unsupported function in expression {source!r}")
        if len(node.args) != 1 or node.keywords:
            raise ConfigError(f"functions take exactly one argument: {source!r}")
        _check(node.args[0], names, source)
    else:
        raise ConfigError(f"unsupported syntax {type(node).__name__} in expression {source!r}")


class Expression:
    """A compiled scalar expression ``f(x, t)``.

    ``x`` has shape ``(d, ...)``; the result broadcasts to ``x.shape[1:]``.
    """

    def __init__(self, source: str, dim: int, aliases: Mapping[str, int] | None = None):
        self.source = source
        self.dim = dim
        self.aliases = dict(aliases or {})
        names = {f"x{j + 1}" for j in range(dim)} | {"t"} | set(self.aliases)
        try:
            tree = ast.parse(source.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {source!r}: {exc.msg}") from None
        _check(tree, names, source)
        self._code = compile(tree, f"<expr {source}>", "eval")
        self.depends_on_t = any(isinstance(n, ast.Name) and n.id == "t" for n in ast.walk(tree))

    def __call__(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        env = dict(FUNCTIONS)
        env.update(CONSTANTS)
        for j in range(self.dim):
            env[f"x{j + 1}"] = x[j]
        for name, j in self.aliases.items():
            env[name] = x[j]
        env["t"] = t
        out = eval(self._code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[1:]).copy()

    def __repr__(self):
        return f"Expression({self.source!r})"


def compile_vector(sources: Sequence[str], dim: int, aliases=None) -> list[Expression]:
    return [Expression(s, dim, aliases) for s in sources]
