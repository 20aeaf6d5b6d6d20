"""A small arithmetic expression language for scenario files.

Expressions use Python operator syntax (``+ - * / **``, parentheses, unary
minus) over numbers, named variables, named parameters, the constants ``pi``
and ``e``, and a fixed set of elementary functions. Anything else (attribute
access, subscripts, comparisons, keyword arguments, ...) is rejected at parse
time. Validated trees are compiled once into an ordinary function of the
variables.
"""

from __future__ import annotations

import ast
import math
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from . import _fd
from .errors import ConfigurationError

FUNCTIONS = {
    "sin": math.sin, "cos": math.cos, "tan": math.tan,
    "asin": math.asin, "acos": math.acos, "atan": math.atan, "atan2": math.atan2,
    "sinh": math.sinh, "cosh": math.cosh, "tanh": math.tanh,
    "exp": math.exp, "log": math.log, "sqrt": math.sqrt, "abs": abs,
}
CONSTANTS = {"pi": math.pi, "e": math.e}

_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_UNARY = (ast.UAdd, ast.USub)


class ExpressionError(ConfigurationError):
    """Syntax or vocabulary error; ``column`` is 1-based within the expression text."""

    def __init__(self, message, text="", column=None):
        super().__init__(message)
        self.text = text
        self.column = column


def _fail(node, text, msg):
    col = getattr(node, "col_offset", None)
    raise ExpressionError(f"{msg} in {text!r}" + (f" at column {col + 1}" if col is not None else ""),
                          text, None if col is None else col + 1)


def _validate(node, text, allowed_names):
    if isinstance(node, ast.Expression):
        return _validate(node.body, text, allowed_names)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            _fail(node, text, "only numeric literals are allowed")
        return
    if isinstance(node, ast.Name):
        if node.id not in allowed_names and node.id not in CONSTANTS:
            _fail(node, text, f"unknown name {node.id!r}")
        return
    if isinstance(node, ast.BinOp):
        if not isinstance(node.op, _BINOPS):
            _fail(node, text, f"operator {type(node.op).__name__} is not allowed")
        _validate(node.left, text, allowed_names)
        _validate(node.right, text, allowed_names)
        return
    if isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, _UNARY):
            _fail(node, text, f"operator {type(node.op).__name__} is not allowed")
        _validate(node.operand, text, allowed_names)
        return
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
            _fail(node, text, "unknown function")
        if node.keywords:
            _fail(node, text, "keyword arguments are not allowed")
        for arg in node.args:
            _validate(arg, text, allowed_names)
        return
    _fail(node, text, f"{type(node).__name__} is not part of the expression grammar")


class Expression:
    """A scalar expression compiled against an ordered list of variable names."""

    def __init__(self, text, variables: Sequence[str], params: Optional[Mapping[str, float]] = None):
        if isinstance(text, (int, float)) and not isinstance(text, bool):
            text = repr(float(text))
        if not isinstance(text, str) or not text.strip():
            raise ExpressionError(f"expected an expression string, got {text!r}", str(text))
        self.text = text.strip()
        self.variables = tuple(variables)
        self.params = dict(params or {})
        clash = set(self.variables) & set(self.params)
        if clash:
            raise ExpressionError(f"parameter names shadow variables: {sorted(clash)}", self.text)
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"syntax error in {self.text!r} at column {exc.offset}", self.text, exc.offset) from None
        _validate(tree, self.text, set(self.variables) | set(self.params))
        self.names_used = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)} - set(FUNCTIONS)
        args = ast.arguments(posonlyargs=[], args=[ast.arg(arg=v) for v in self.variables], vararg=None,
                             kwonlyargs=[], kw_defaults=[], kwarg=None, defaults=[])
        lam = ast.Expression(body=ast.Lambda(args=args, body=tree.body))
        ast.fix_missing_locations(lam)
        namespace = {"__builtins__": {}, **FUNCTIONS, **CONSTANTS, **self.params}
        self._fn = eval(compile(lam, "<expression>", "eval"), namespace)

    def __call__(self, x) -> float:
        try:
            return float(self._fn(*x))
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            raise ExpressionError(f"cannot evaluate {self.text!r}: {exc}", self.text) from None

    def depends_on(self, name: str) -> bool:
        return name in self.names_used

    def gradient(self, x, h: float = _fd.BASE_STEP) -> np.ndarray:
        return _fd.gradient(self, np.asarray(x, dtype=float), h)

    def __repr__(self):
        return f"Expression({self.text!r})"


class ExpressionVector:
    """Several expressions over the same variables, evaluated together."""

    def __init__(self, texts, variables: Sequence[str], params: Optional[Mapping[str, float]] = None):
        if isinstance(texts, (str, int, float)):
            texts = [texts]
        self.items = [Expression(t, variables, params) for t in texts]
        self.variables = tuple(variables)

    def __len__(self):
        return len(self.items)

    def __call__(self, x) -> np.ndarray:
        return np.array([e(x) for e in self.items])

    def jacobian(self, x, h: float = _fd.BASE_STEP) -> np.ndarray:
        return _fd.jacobian(self, np.asarray(x, dtype=float), h)


def constant(text, params: Optional[Mapping[str, float]] = None) -> float:
    """Evaluate a variable-free expression (numbers pass straight through)."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return float(text)
    return Expression(text, (), params)(())


def indexed_names(prefix: str, count: int) -> list:
    return [f"{prefix}{i + 1}" for i in range(count)]


def matrix_names(prefix: str, n: int) -> list:
    """Row-major names phi11, phi12, ... (1-based indices)."""
    return [f"{prefix}{i + 1}{j + 1}" for i in range(n) for j in range(n)]


def parameter_table(raw: Optional[Mapping], where: str = "params") -> Dict[str, float]:
    """Numeric parameters; later entries may refer to earlier ones."""
    out: Dict[str, float] = {}
    for key, val in (raw or {}).items():
        if not isinstance(key, str) or not key.isidentifier():
            raise ConfigurationError(f"{where}: invalid parameter name {key!r}")
        if key in FUNCTIONS or key in CONSTANTS:
            raise ConfigurationError(f"{where}: parameter name {key!r} is reserved")
        out[key] = constant(val, out)
    return out
