"""Structural utility specifications.

Binary models are threshold crossing, ``Y = 1(delta(x, eta, v) >= 0)``, and
every supported binary family is written in its canonical additive form
``delta = h(x, eta) + v``.  Multinomial models carry utilities
``u_j(x, eta) + v_j``.

Regressors are arrays of shape ``(d,)`` when shared across alternatives and
``(J, d)`` when choice specific.  Gradients are taken with respect to the
whole regressor array, so ``grad_x_utilities`` has shape ``(J, *x_shape)``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import grammar
from .errors import ConfigurationError, UnsupportedError, WrongFamilyError

BINARY_RC = "BinaryRC"
LINEAR_RC = "LinearRC"
INDEX = "Index"
GENERAL = "GeneralNonseparable"
QUADRATIC = "QuadraticScalar"
FAMILIES = (BINARY_RC, LINEAR_RC, INDEX, GENERAL, QUADRATIC)

# central-difference step for checking analytic gradients
FD_REL_STEP = 1e-4


@dataclass(frozen=True)
class ModelDims:
    J: int = 2
    d: int = 1
    choice_specific: bool = False

    def __post_init__(self):
        if self.J < 2:
            raise ConfigurationError(f"J must be >= 2, got {self.J}")
        if self.d < 1:
            raise ConfigurationError(f"d must be >= 1, got {self.d}")

    @property
    def x_shape(self) -> tuple[int, ...]:
        return (self.J, self.d) if self.choice_specific else (self.d,)


@dataclass(frozen=True)
class UtilityModel:
    """A utility specification from one of the supported families.

    ``params`` holds family constants: ``xi`` (LinearRC intercepts),
    ``beta0`` (Index coefficients), ``eta_dim`` (optional override for
    grammar families).  ``expr`` is one grammar tree for binary
    GeneralNonseparable / Index models, a list of ``J`` trees for
    multinomial GeneralNonseparable models, and ``None`` otherwise.
    """

    family: str
    dims: ModelDims
    params: dict = field(default_factory=dict)
    expr: Any = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown model family {self.family!r}")
        if self.family == LINEAR_RC:
            if not self.dims.choice_specific:
                raise ConfigurationError("LinearRC needs choice_specific regressors")
            xi = np.asarray(self.params.get("xi", np.zeros(self.dims.J)), float)
            if xi.shape != (self.dims.J,):
                raise ConfigurationError(f"xi must have length J={self.dims.J}")
        elif self.family == BINARY_RC:
            if self.dims.choice_specific or self.dims.J != 2:
                raise ConfigurationError("BinaryRC is a J=2 model with shared regressors")
        elif self.family == QUADRATIC:
            if self.dims.d != 1 or self.dims.choice_specific or self.dims.J != 2:
                raise ConfigurationError("QuadraticScalar has a scalar shared regressor")
        elif self.family == INDEX:
            beta0 = np.asarray(self.params.get("beta0", ()), float)
            if beta0.shape != (self.dims.d,):
                raise ConfigurationError(f"Index needs beta0 of length d={self.dims.d}")
            if not isinstance(self.expr, dict):
                raise ConfigurationError("Index needs a single expression tree in g(index, eta)")
            grammar.validate(self.expr)
            if grammar.uses(self.expr, "x"):
                raise ConfigurationError("Index expressions see x only through {'op': 'index'}")
        elif self.family == GENERAL:
            trees = self.expr if isinstance(self.expr, list) else [self.expr]
            if isinstance(self.expr, list) and len(trees) != self.dims.J:
                raise ConfigurationError(f"need J={self.dims.J} utility expressions")
            if not isinstance(self.expr, list) and (self.dims.J != 2 or self.dims.choice_specific):
                raise ConfigurationError("a single expression defines a binary model (J=2, shared x)")
            for t in trees:
                grammar.validate(t)
                for node in grammar.walk(t):
                    if node["op"] == "index":
                        raise ConfigurationError("'index' nodes belong to the Index family")
                    if node["op"] == "x":
                        self._check_x_node(node)
            if isinstance(self.expr, list) and any(grammar.uses(t, "v") for t in trees):
                raise ConfigurationError("multinomial utilities are additive in v by construction")

    def _check_x_node(self, node):
        i = int(node["i"])
        if i >= self.dims.d:
            raise ConfigurationError(f"x index {i} exceeds d={self.dims.d}")
        if "alt" in node:
            if not self.dims.choice_specific:
                raise ConfigurationError("'alt' used with shared regressors")
            if not 0 <= int(node["alt"]) < self.dims.J:
                raise ConfigurationError(f"alternative {node['alt']} out of range")
        elif self.dims.choice_specific:
            raise ConfigurationError("choice-specific x nodes need an 'alt' field")

    # ------------------------------------------------------------------ shape
    @property
    def is_binary(self) -> bool:
        if self.family == GENERAL:
            return not isinstance(self.expr, list)
        return self.family in (BINARY_RC, INDEX, QUADRATIC)

    @property
    def is_multinomial(self) -> bool:
        return not self.is_binary

    @property
    def J(self) -> int:
        return self.dims.J

    @property
    def x_shape(self) -> tuple[int, ...]:
        return self.dims.x_shape

    @property
    def eta_dim(self) -> int:
        if self.family in (BINARY_RC, LINEAR_RC):
            return self.dims.d
        if self.family == QUADRATIC:
            return 3
        trees = self.expr if isinstance(self.expr, list) else [self.expr]
        inferred = max(grammar.eta_dim(t) for t in trees)
        return max(int(self.params.get("eta_dim", 0)), inferred)

    @property
    def additive(self) -> bool:
        """True when delta(x, eta, v) = h(x, eta) + v."""
        return not (self.family == GENERAL and self.is_binary and grammar.uses(self.expr, "v"))

    def check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != self.x_shape:
            if x.size == int(np.prod(self.x_shape)) and x.ndim <= 1:
                x = x.reshape(self.x_shape)
            else:
                raise ConfigurationError(f"x has shape {x.shape}, model expects {self.x_shape}")
        return x

    def check_eta(self, eta) -> np.ndarray:
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        if eta.shape[1] != self.eta_dim:
            raise ConfigurationError(f"eta has dimension {eta.shape[1]}, model expects {self.eta_dim}")
        return eta

    # ------------------------------------------------------------ vectorised
    def _resolver(self, x: np.ndarray):
        p = x.size

        def resolve(node):
            grad = np.zeros(p)
            if node["op"] == "index":
                beta0 = np.asarray(self.params["beta0"], float)
                grad[:] = beta0
                return float(beta0 @ x), grad
            i = int(node["i"])
            flat = int(node["alt"]) * self.dims.d + i if "alt" in node else i
            grad[flat] = 1.0
            return float(x.reshape(-1)[flat]), grad

        return resolve

    def h_and_grad(self, x, eta) -> tuple[np.ndarray, np.ndarray]:
        """Canonical index ``h(x, eta)`` ``(n,)`` and its x-gradient ``(n, *x_shape)``."""
        if not self.is_binary:
            raise WrongFamilyError(f"{self.family} with J utilities is not a binary model")
        if not self.additive:
            raise UnsupportedError("canonical form of a delta that is non-additive in v")
        x = self.check_x(x)
        eta = self.check_eta(eta)
        n = eta.shape[0]
        if self.family == BINARY_RC:
            return eta @ x, eta.copy()
        if self.family == QUADRATIC:
            xs = float(x[0])
            val = eta[:, 0] + eta[:, 1] * xs + eta[:, 2] * xs * xs
            return val, (eta[:, 1] + 2.0 * eta[:, 2] * xs)[:, None]
        val, grad = grammar.evaluate(self.expr, eta, self._resolver(x), x.size)
        return val, grad.reshape((n,) + self.x_shape)

    def h(self, x, eta) -> np.ndarray:
        """h(x, eta) at every eta row, skipping gradients where that is cheaper."""
        if self.family == BINARY_RC:
            return self.check_eta(eta) @ self.check_x(x)
        return self.h_and_grad(x, eta)[0]

    def u(self, x, eta) -> np.ndarray:
        if self.family == LINEAR_RC:
            x = self.check_x(x)
            xi = np.asarray(self.params.get("xi", np.zeros(self.J)), float)
            return self.check_eta(eta) @ x.T + xi
        return self.u_and_grad(x, eta)[0]

    def delta_and_grad(self, x, eta, v) -> tuple[np.ndarray, np.ndarray]:
        if not self.is_binary:
            raise WrongFamilyError(f"{self.family} with J utilities is not a binary model")
        if self.additive:
            h, g = self.h_and_grad(x, eta)
            return h + np.asarray(v, float), g
        x = self.check_x(x)
        eta = self.check_eta(eta)
        val, grad = grammar.evaluate(self.expr, eta, self._resolver(x), x.size, v=v)
        return val, grad.reshape((eta.shape[0],) + self.x_shape)

    def u_and_grad(self, x, eta) -> tuple[np.ndarray, np.ndarray]:
        """Utilities ``(n, J)`` and gradients ``(n, J, *x_shape)``."""
        if not self.is_multinomial:
            raise WrongFamilyError(f"{self.family} is a binary model; use eval_delta")
        x = self.check_x(x)
        eta = self.check_eta(eta)
        n, J = eta.shape[0], self.J
        if self.family == LINEAR_RC:
            xi = np.asarray(self.params.get("xi", np.zeros(J)), float)
            u = eta @ x.T + xi
            grad = np.zeros((n, J) + self.x_shape)
            for k in range(J):
                grad[:, k, k, :] = eta
            return u, grad
        resolve = self._resolver(x)
        vals, grads = zip(*(grammar.evaluate(t, eta, resolve, x.size) for t in self.expr))
        u = np.stack(vals, axis=1)
        grad = np.stack(grads, axis=1).reshape((n, J) + self.x_shape)
        return u, grad

    def phi_and_grad(self, x, eta):
        """Continuous outcome ``phi(x, eps)`` of the QuadraticScalar family."""
        if self.family != QUADRATIC:
            raise WrongFamilyError("phi is defined for the QuadraticScalar family")
        val, grad = self.h_and_grad(x, eta)
        return val, grad[:, 0]


# ---------------------------------------------------------------- scalar ops
def eval_delta(model: UtilityModel, x, eta, v) -> float:
    val, _ = model.delta_and_grad(x, eta, v)
    return float(val[0])


def eval_utilities(model: UtilityModel, x, eta) -> np.ndarray:
    u, _ = model.u_and_grad(x, eta)
    return u[0]


def grad_x_delta(model: UtilityModel, x, eta, v=0.0) -> np.ndarray:
    _, g = model.delta_and_grad(x, eta, v)
    return g[0]


def grad_x_utilities(model: UtilityModel, x, eta) -> np.ndarray:
    _, g = model.u_and_grad(x, eta)
    return g[0]


def canonical_h(model: UtilityModel, x, eta) -> float:
    """h(x, eta) with delta >= 0 iff h + v >= 0 (delta(x, eta, 0) for additive models)."""
    val, _ = model.h_and_grad(x, eta)
    return float(val[0])


def fd_steps(x) -> np.ndarray:
    x = np.asarray(x, float)
    return FD_REL_STEP * np.maximum(1.0, np.abs(x))


def fd_grad(f, x, steps=None) -> np.ndarray:
    """Central-difference gradient of a scalar or array valued ``f``."""
    x = np.asarray(x, float)
    steps = fd_steps(x) if steps is None else np.broadcast_to(steps, x.shape)
    f0 = np.asarray(f(x), float)
    out = np.zeros(f0.shape + x.shape)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = steps[idx]
        out[(...,) + idx] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * steps[idx])
    return out


def gradient_discrepancy(model: UtilityModel, x, eta, v=0.0) -> float:
    """Largest analytic-vs-central-difference gradient error, relative where |g| > 1e-2."""
    if model.is_binary:
        analytic = grad_x_delta(model, x, eta, v)
        numeric = fd_grad(lambda z: eval_delta(model, z, eta, v), model.check_x(x))
    else:
        analytic = grad_x_utilities(model, x, eta)
        numeric = fd_grad(lambda z: eval_utilities(model, z, eta), model.check_x(x))
    scale = np.maximum(np.abs(analytic), 1e-2)
    return float(np.max(np.abs(analytic - numeric) / scale))


def max_gradient_norm(model: UtilityModel, xs, etas) -> float:
    """Largest ||d_x delta|| (or ||d_x u_j||) over a probe grid."""
    best = 0.0
    etas = model.check_eta(etas)
    for x in xs:
        if model.is_binary:
            _, g = model.delta_and_grad(x, etas, 0.0)
            norms = np.sqrt(np.sum(g.reshape(len(etas), -1) ** 2, axis=1))
        else:
            _, g = model.u_and_grad(x, etas)
            norms = np.sqrt(np.sum(g.reshape(len(etas), model.J, -1) ** 2, axis=2))
        best = max(best, float(np.max(norms)))
    return best


# ------------------------------------------------------------- serialisation
def model_to_dict(model: UtilityModel) -> dict:
    out = {
        "family": model.family,
        "dims": {"J": model.dims.J, "d": model.dims.d, "choice_specific": model.dims.choice_specific},
        "params": {k: np.asarray(v).tolist() if not np.isscalar(v) else v for k, v in model.params.items()},
    }
    if model.expr is not None:
        out["expr"] = copy.deepcopy(model.expr)
    return out


def model_from_dict(doc: dict) -> UtilityModel:
    try:
        dims = ModelDims(**doc.get("dims", {}))
        return UtilityModel(
            family=doc["family"],
            dims=dims,
            params=dict(doc.get("params", {})),
            expr=copy.deepcopy(doc.get("expr")),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"bad model document: {exc}") from exc
