"""A small, safe expression language for custom field definitions in configs.

Grammar (whitelisted Python expression syntax, no general code execution):

    expr    := arithmetic over +, -, *, /, ** with parentheses
    atoms   := numbers | x | y | u | m1 | m2 | vector literals [e1, e2, ...]
    indexing:= x[0], y[1], m1[0]      (constant integer indices)
    calls   := sin cos tanh exp sqrt abs norm dot min max

``x`` is the evaluation point, ``y`` the interaction partner, ``u`` the noise
label value (a number), ``m1`` the mean of the current measure and ``m2`` its
scalar 2-moment (nonlocal fields only).  Expressions are parsed with the
standard ``ast`` module and compiled node-by-node against this whitelist, so
attribute access, names outside the variable set, and arbitrary calls are
rejected at load time.
"""

from __future__ import annotations

import ast
from typing import Callable

import numpy as np

from .errors import InputError
from .fields import (
    InteractionField,
    NonlocalSampledField,
    NoiseSpace,
    PvfSpec,
    SampledField,
    StochasticInteractionField,
)
from .measure import DiscreteMeasure, second_moment

_FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "norm": lambda v: np.linalg.norm(np.atleast_1d(v)),
    "dot": lambda a, b: float(np.dot(np.atleast_1d(a), np.atleast_1d(b))),
    "min": np.minimum,
    "max": np.maximum,
}

_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}

_UNARY = {ast.USub: lambda a: -a, ast.UAdd: lambda a: a}


def _compile_node(node: ast.AST, variables: tuple) -> Callable[[dict], object]:
    if isinstance(node, ast.Expression):
        return _compile_node(node.body, variables)
    if isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise InputError(f"only numeric constants allowed, got {node.value!r}")
        value = float(node.value)
        return lambda env: value
    if isinstance(node, ast.Name):
        if node.id not in variables:
            raise InputError(f"unknown variable {node.id!r}; allowed: {variables}")
        name = node.id
        return lambda env: env[name]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op = _BINOPS[type(node.op)]
        left = _compile_node(node.left, variables)
        right = _compile_node(node.right, variables)
        return lambda env: op(left(env), right(env))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        op = _UNARY[type(node.op)]
        operand = _compile_node(node.operand, variables)
        return lambda env: op(operand(env))
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise InputError("only whitelisted function calls are allowed")
        if node.keywords:
            raise InputError("keyword arguments are not supported")
        fn = _FUNCTIONS[node.func.id]
        args = [_compile_node(a, variables) for a in node.args]
        return lambda env: fn(*(a(env) for a in args))
    if isinstance(node, (ast.List, ast.Tuple)):
        elems = [_compile_node(e, variables) for e in node.elts]

        def vec(env):
            flat = []
            for e in elems:
                v = np.asarray(e(env), dtype=float)
                if v.size != 1:
                    raise InputError("vector literal elements must be scalars")
                flat.append(float(v.reshape(())))
            return np.asarray(flat)

        return vec
    if isinstance(node, ast.Subscript):
        base = _compile_node(node.value, variables)
        idx_node = node.slice
        if not (isinstance(idx_node, ast.Constant) and isinstance(idx_node.value, int)):
            raise InputError("only constant integer indices are allowed")
        idx = idx_node.value
        return lambda env: np.atleast_1d(base(env))[idx]
    raise InputError(f"disallowed syntax: {ast.dump(node)[:80]}")


def compile_expression(text: str, variables: tuple) -> Callable[[dict], np.ndarray]:
    """Compile a DSL expression to an evaluator over an environment dict."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise InputError(f"cannot parse expression {text!r}: {exc}") from exc
    return _compile_node(tree, variables)


def _as_velocity(value, dim: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.shape == (1,) and dim > 1:
        raise InputError(f"expression yields a scalar but the field dimension is {dim}")
    if arr.shape != (dim,):
        raise InputError(f"expression yields shape {arr.shape}, expected ({dim},)")
    return arr


def _noise_from_config(cfg: dict) -> NoiseSpace:
    labels = [float(v) for v in cfg["labels"]]
    weights = np.asarray(cfg["weights"], dtype=float)
    return NoiseSpace(tuple(labels), weights)


def field_from_config(cfg: dict, dim: int) -> PvfSpec:
    """Build a PvfSpec from a config mapping with a DSL expression.

    Expected keys: kind (sampled | interaction | stochastic-interaction |
    nonlocal-sampled), the expression under "g", "f", or "h", and a noise
    table {"labels": [...], "weights": [...]} where applicable.
    """
    kind = cfg.get("kind")
    if kind == "sampled":
        fn = compile_expression(cfg["g"], ("x", "u"))
        noise = _noise_from_config(cfg["noise"])
        return SampledField(
            lambda x, u: _as_velocity(fn({"x": x, "u": u}), dim), noise
        )
    if kind == "interaction":
        fn = compile_expression(cfg["f"], ("x", "y"))
        return InteractionField(lambda x, y: _as_velocity(fn({"x": x, "y": y}), dim))
    if kind == "stochastic-interaction":
        fn = compile_expression(cfg["h"], ("x", "y", "u"))
        noise = _noise_from_config(cfg["noise"])
        return StochasticInteractionField(
            lambda x, y, u: _as_velocity(fn({"x": x, "y": y, "u": u}), dim), noise
        )
    if kind == "nonlocal-sampled":
        fn = compile_expression(cfg["g"], ("x", "u", "m1", "m2"))
        noise = _noise_from_config(cfg["noise"])

        def g(x, mu: DiscreteMeasure, u):
            env = {
                "x": x,
                "u": u,
                "m1": np.sum(mu.weights[:, None] * mu.atoms, axis=0),
                "m2": second_moment(mu),
            }
            return _as_velocity(fn(env), dim)

        return NonlocalSampledField(g, noise)
    raise InputError(f"unknown custom field kind {kind!r}")
