"""Closed expression grammar for nonseparable utilities.

An expression is a JSON-compatible tree.  Node forms::

    {"op": "const", "value": c}
    {"op": "x", "i": i}                 shared regressor component i
    {"op": "x", "alt": a, "i": i}       component i of alternative a's regressors
    {"op": "index"}                     the single index b0'x (Index family)
    {"op": "eta", "i": i}               heterogeneity component i
    {"op": "v"}                         the scalar disturbance (non-additive binary only)
    {"op": "add", "args": [...]}
    {"op": "mul", "args": [...]}        product
    {"op": "affine", "coef": [...], "args": [...], "const": c}
    {"op": "tanh", "arg": e}
    {"op": "sigmoid", "arg": e}         logistic function
    {"op": "pow", "arg": e, "n": k}     integer power k >= 0

Evaluation is vectorised over heterogeneity draws and returns the value
together with its exact gradient with respect to the regressors.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ConfigurationError

_OPS = {"const", "x", "index", "eta", "v", "add", "mul", "affine", "tanh", "sigmoid", "pow"}

# Resolves an {"op": "x"} / {"op": "index"} node to (value, gradient) where the
# gradient has length p = number of regressor entries.
XResolver = Callable[[dict], "tuple[float, np.ndarray]"]


def validate(node) -> None:
    if not isinstance(node, dict) or node.get("op") not in _OPS:
        raise ConfigurationError(f"unknown expression node: {node!r}")
    op = node["op"]
    if op == "const":
        float(node["value"])
    elif op in ("x", "eta"):
        if int(node["i"]) < 0:
            raise ConfigurationError(f"negative index in {node!r}")
    elif op in ("add", "mul"):
        if not node.get("args"):
            raise ConfigurationError(f"{op} needs a non-empty 'args' list")
        for a in node["args"]:
            validate(a)
    elif op == "affine":
        if len(node["coef"]) != len(node["args"]):
            raise ConfigurationError("affine: coef and args differ in length")
        for a in node["args"]:
            validate(a)
    elif op in ("tanh", "sigmoid"):
        validate(node["arg"])
    elif op == "pow":
        n = node["n"]
        if int(n) != n or n < 0:
            raise ConfigurationError("pow exponent must be a nonnegative integer")
        validate(node["arg"])


def walk(node):
    yield node
    for a in node.get("args", ()):
        yield from walk(a)
    if "arg" in node:
        yield from walk(node["arg"])


def eta_dim(node) -> int:
    return max((int(n["i"]) + 1 for n in walk(node) if n["op"] == "eta"), default=0)


def uses(node, op: str) -> bool:
    return any(n["op"] == op for n in walk(node))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def evaluate(node, eta: np.ndarray, resolve_x: XResolver, p: int, v=None):
    """Value ``(n,)`` and x-gradient ``(n, p)`` of ``node`` at every eta row."""
    n = eta.shape[0]
    op = node["op"]

    def rec(child):
        return evaluate(child, eta, resolve_x, p, v)

    if op == "const":
        return np.full(n, float(node["value"])), np.zeros((n, p))
    if op in ("x", "index"):
        val, grad = resolve_x(node)
        return np.full(n, float(val)), np.broadcast_to(grad, (n, p)).copy()
    if op == "eta":
        i = int(node["i"])
        if i >= eta.shape[1]:
            raise ConfigurationError(f"eta index {i} exceeds eta dimension {eta.shape[1]}")
        return eta[:, i].astype(float, copy=True), np.zeros((n, p))
    if op == "v":
        if v is None:
            raise ConfigurationError("expression references v but no v was supplied")
        return np.broadcast_to(np.asarray(v, float), (n,)).copy(), np.zeros((n, p))
    if op == "add":
        val, grad = rec(node["args"][0])
        for a in node["args"][1:]:
            a_val, a_grad = rec(a)
            val = val + a_val
            grad = grad + a_grad
        return val, grad
    if op == "affine":
        val = np.full(n, float(node.get("const", 0.0)))
        grad = np.zeros((n, p))
        for c, a in zip(node["coef"], node["args"]):
            a_val, a_grad = rec(a)
            val = val + c * a_val
            grad = grad + c * a_grad
        return val, grad
    if op == "mul":
        val, grad = rec(node["args"][0])
        for a in node["args"][1:]:
            a_val, a_grad = rec(a)
            grad = grad * a_val[:, None] + a_grad * val[:, None]
            val = val * a_val
        return val, grad
    if op == "tanh":
        a_val, a_grad = rec(node["arg"])
        t = np.tanh(a_val)
        return t, a_grad * (1.0 - t * t)[:, None]
    if op == "sigmoid":
        a_val, a_grad = rec(node["arg"])
        s = _sigmoid(a_val)
        return s, a_grad * (s * (1.0 - s))[:, None]
    if op == "pow":
        k = int(node["n"])
        if k == 0:
            return np.ones(n), np.zeros((n, p))
        a_val, a_grad = rec(node["arg"])
        return a_val**k, a_grad * (k * a_val ** (k - 1))[:, None]
    raise ConfigurationError(f"unknown op {op!r}")
