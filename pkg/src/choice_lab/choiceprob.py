"""Choice probabilities and their numerical x-derivatives.

Probabilities mix a conditional choice kernel over the law of eta.  The
kernel is always integrated over v in closed form (or by one-dimensional
quadrature for i.i.d. Gaussian disturbances); eta is integrated by Monte
Carlo draws from keyed streams or by tensor Gauss-Hermite quadrature.
Because draws depend only on ``(seed, label)``, evaluating a probability at
``x + h`` and ``x - h`` reuses the same draws, which is what makes the
central differences below usable on Monte Carlo estimates.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from . import rng as rngmod
from .distributions import (
    EtaDist,
    EtaShifted,
    Heterogeneity,
    IIDGumbel,
    NoiseDist,
    PointMass,
    eta_to_dict,
    logit_jac,
    logit_probs,
)
from .errors import ConfigurationError, UnsupportedError, WrongFamilyError
from .model import UtilityModel

MONTE_CARLO = "monte_carlo"
GAUSS_HERMITE = "gauss_hermite"
HYBRID = "hybrid"
METHODS = (MONTE_CARLO, GAUSS_HERMITE, HYBRID)

MAX_QUADRATURE_DIM = 3
MC_REL_STEP = 1e-3
CLOSED_REL_STEP = 1e-5
HESSIAN_CLOSED_REL_STEP = 1e-4


@dataclass(frozen=True)
class IntegrationSpec:
    """How eta is integrated out.

    ``gauss_hermite`` and ``hybrid`` both use tensor quadrature over eta with
    the kernel in v in closed form; eta of dimension above three falls back
    to Monte Carlo with ``n_draws``.
    """

    method: str = MONTE_CARLO
    n_draws: int = 100_000
    nodes_per_dim: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown integration method {self.method!r}")
        if self.n_draws < 1:
            raise ConfigurationError("n_draws must be >= 1")
        if not 5 <= self.nodes_per_dim <= 50:
            raise ConfigurationError("nodes_per_dim must lie in [5, 50]")

    @property
    def is_mc(self) -> bool:
        return self.method == MONTE_CARLO

    def with_seed(self, seed: int) -> "IntegrationSpec":
        return IntegrationSpec(self.method, self.n_draws, self.nodes_per_dim, seed)


@dataclass(frozen=True, eq=False)
class Nodes:
    """Integration nodes for eta: Monte Carlo draws or quadrature points."""

    points: np.ndarray
    weights: np.ndarray
    random: bool

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def expect(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean and standard error of per-node ``values`` with shape ``(n, ...)``."""
        values = np.asarray(values, float)
        if self.random:
            mean = values.mean(axis=0)
            if self.n < 2:
                return mean, np.zeros_like(mean)
            return mean, values.std(axis=0, ddof=1) / np.sqrt(self.n)
        w = self.weights.reshape((-1,) + (1,) * (values.ndim - 1))
        mean = np.sum(w * values, axis=0)
        return mean, np.zeros_like(mean)


@lru_cache(maxsize=16)
def _cached_draws(dist_key: str, n: int, seed: int, label: str) -> np.ndarray:
    from .distributions import eta_from_dict

    dist = eta_from_dict(json.loads(dist_key))
    out = rngmod.blocked_draws(n, seed, label, dist.sample)
    out.flags.writeable = False
    return out


def mc_draws(dist: EtaDist, n: int, seed: int, label: str = "eta") -> np.ndarray:
    return _cached_draws(json.dumps(eta_to_dict(dist), sort_keys=True), int(n), int(seed), label)


def eta_nodes(dist: EtaDist, integ: IntegrationSpec, label: str = "eta") -> Nodes:
    if isinstance(dist, PointMass):
        return Nodes(dist.beta[None, :].copy(), np.ones(1), random=False)
    if integ.is_mc or dist.dim > MAX_QUADRATURE_DIM:
        pts = mc_draws(dist, integ.n_draws, integ.seed, label)
        return Nodes(pts, np.full(len(pts), 1.0 / len(pts)), random=True)
    pts, w = dist.quadrature(integ.nodes_per_dim)
    return Nodes(pts, w, random=False)


@dataclass(frozen=True, eq=False)
class ProbResult:
    """Probability (scalar or J-vector) with its Monte Carlo standard error.

    ``samples`` keeps the per-node integrand for Monte Carlo results so that
    finite differences can report the standard error of the difference.
    """

    value: np.ndarray
    mc_se: np.ndarray
    n_effective: int
    samples: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_nodes(cls, nodes: Nodes, per_node: np.ndarray) -> "ProbResult":
        mean, se = nodes.expect(per_node)
        return cls(mean, se, nodes.n, per_node if nodes.random else None)


# -------------------------------------------------------------------- kernels
def logit_kernel(u) -> np.ndarray:
    """Multinomial logit probabilities exp(u_j) / sum_k exp(u_k), overflow safe."""
    u = np.asarray(u, float)
    if not np.all(np.isfinite(u)):
        raise ConfigurationError("utilities must be finite")
    return logit_probs(u)


def logit_jacobian(u) -> np.ndarray:
    """p_jk = p_j (1{j=k} - p_k)."""
    u = np.asarray(u, float)
    if not np.all(np.isfinite(u)):
        raise ConfigurationError("utilities must be finite")
    return logit_jac(u)


def _is_logit(noise: NoiseDist) -> bool:
    return isinstance(noise, IIDGumbel) or (
        isinstance(noise, EtaShifted) and isinstance(noise.base, IIDGumbel)
    )


def cond_choice_prob(
    u, noise: NoiseDist, eta=None, integ: IntegrationSpec | None = None, label: str = "v"
) -> ProbResult:
    """p_j(u | eta) for a single utility vector.

    Logit noise uses the closed form.  Other noise uses the argmax frequency
    over ``integ.n_draws`` disturbance draws (ties go to the lowest index),
    unless ``integ`` asks for quadrature, in which case the one-dimensional
    quadrature kernel is used.
    """
    u = np.asarray(u, float)
    J = u.shape[-1]
    eta_row = None if eta is None else np.atleast_2d(np.asarray(eta, float))
    if _is_logit(noise):
        return ProbResult(noise.kernel(u[None, :], eta_row)[0], np.zeros(J), 1)
    integ = integ or IntegrationSpec()
    if not integ.is_mc:
        return ProbResult(noise.kernel(u[None, :], eta_row)[0], np.zeros(J), 1)
    n = integ.n_draws

    def sampler(k, gen):
        rows = None if eta_row is None else np.repeat(eta_row, k, axis=0)
        return noise.sample_vector(k, J, gen, rows)

    v = rngmod.blocked_draws(n, integ.seed, label, sampler)
    choice = np.argmax(u + v, axis=1)
    onehot = np.zeros((n, J))
    onehot[np.arange(n), choice] = 1.0
    mean = onehot.mean(axis=0)
    se = onehot.std(axis=0, ddof=1) / np.sqrt(n)
    return ProbResult(mean, se, n, onehot)


def noise_draws(noise: NoiseDist, eta: np.ndarray, seed: int, label: str, J: int | None = None) -> np.ndarray:
    """Disturbance draws matched row by row to ``eta``, from keyed blocks."""
    eta = np.atleast_2d(np.asarray(eta, float))
    parts, start = [], 0
    for b, size in enumerate(rngmod.block_sizes(eta.shape[0])):
        rows = eta[start : start + size]
        gen = rngmod.generator(seed, label, b)
        parts.append(noise.sample(size, gen, rows) if J is None else noise.sample_vector(size, J, gen, rows))
        start += size
    return np.concatenate(parts, axis=0)


def binary_probs_at(model: UtilityModel, noise: NoiseDist, x, eta: np.ndarray, shift=0.0) -> np.ndarray:
    """1 - F_v(-h(x, eta) - shift | eta) at every eta row.

    ``shift`` is a location shift of v (scalar or one value per row).
    """
    h = model.h(x, eta) + shift
    return 1.0 - noise.cdf(-h, eta if noise.depends_on_eta else None)


def multinomial_probs_at(model: UtilityModel, noise: NoiseDist, x, eta: np.ndarray, shift=0.0) -> np.ndarray:
    """p_j(u(x, eta) + shift | eta) at every eta row, shape ``(n, J)``."""
    if not noise.closed_kernel:
        raise UnsupportedError(f"{type(noise).__name__} has no smooth multinomial kernel")
    u = model.u(x, eta) + shift
    return noise.kernel(u, eta if noise.depends_on_eta else None)


def probs_at(model: UtilityModel, noise: NoiseDist, x, eta: np.ndarray, shift=0.0) -> np.ndarray:
    """Per-row choice probability: ``(n,)`` for binary models, ``(n, J)`` otherwise."""
    if model.is_binary:
        return binary_probs_at(model, noise, x, eta, shift)
    return multinomial_probs_at(model, noise, x, eta, shift)


def deriv_integrand_at(model: UtilityModel, noise: NoiseDist, x, eta: np.ndarray, shift=0.0) -> np.ndarray:
    """Per-row integrand of the probability derivative.

    Binary: d_x h f_v(-h - shift | eta), shape ``(n, *x_shape)``.
    Multinomial: sum_k p_jk(u + shift | eta) d_x u_k, shape ``(n, J, *x_shape)``.
    """
    cond = eta if noise.depends_on_eta else None
    if model.is_binary:
        h, g = model.h_and_grad(x, eta)
        dens = noise.density(-(h + shift), cond)
        return g * dens.reshape((-1,) + (1,) * (g.ndim - 1))
    u, du = model.u_and_grad(x, eta)
    jac = noise.kernel_jacobian(u + shift, cond)
    n, J = u.shape
    out = np.einsum("njk,nkp->njp", jac, du.reshape(n, J, -1))
    return out.reshape((n, J) + model.x_shape)


def _check_quadrature(dist: EtaDist, integ: IntegrationSpec):
    from .distributions import FiniteMixture, MultivariateNormal

    from .distributions import UniformBox

    ok = (MultivariateNormal, PointMass, UniformBox)
    if integ.is_mc:
        return
    comps = dist.components if isinstance(dist, FiniteMixture) else (dist,)
    if not all(isinstance(c, ok) for c in comps):
        raise UnsupportedError(f"quadrature needs Gaussian eta, got {type(dist).__name__}")


def binary_choice_prob(
    model: UtilityModel, dists: Heterogeneity, x, integ: IntegrationSpec, label: str = "eta"
) -> ProbResult:
    """P(x) = E[1 - F_v(-h(x, eta) | eta)]."""
    if not model.is_binary:
        raise WrongFamilyError("binary_choice_prob needs a binary model")
    _check_quadrature(dists.eta, integ)
    nodes = eta_nodes(dists.eta, integ, label)
    return ProbResult.from_nodes(nodes, binary_probs_at(model, dists.noise, x, nodes.points))


def choice_prob(
    model: UtilityModel, dists: Heterogeneity, x, integ: IntegrationSpec, label: str = "eta"
) -> ProbResult:
    """P_j(x) = integral of p_j(u(x, eta) | eta) over the law of eta."""
    if not model.is_multinomial:
        raise WrongFamilyError("choice_prob needs a multinomial model")
    _check_quadrature(dists.eta, integ)
    nodes = eta_nodes(dists.eta, integ, label)
    return ProbResult.from_nodes(nodes, multinomial_probs_at(model, dists.noise, x, nodes.points))


# ------------------------------------------------------ numerical derivatives
@dataclass(frozen=True, eq=False)
class GradResult:
    """Central-difference derivative with step and error diagnostics.

    ``value`` has shape ``out_shape + x_shape``; ``err_est`` is the change
    under step halving; ``samples`` holds per-draw difference quotients for
    Monte Carlo inputs.
    """

    value: np.ndarray
    mc_se: np.ndarray
    step: np.ndarray
    err_est: np.ndarray
    samples: np.ndarray | None = field(default=None, repr=False)


def default_steps(x, mc: bool, rel: float | None = None) -> np.ndarray:
    x = np.asarray(x, float)
    rel = rel if rel is not None else (MC_REL_STEP if mc else CLOSED_REL_STEP)
    return rel * np.maximum(1.0, np.abs(x))


def _check_steps(x, steps):
    if np.any(steps <= 0) or np.any((x + steps) - x == 0) or np.any(~np.isfinite(steps)):
        raise ConfigurationError(f"finite-difference step underflows at x={x!r}")


def _as_prob(res) -> ProbResult:
    if isinstance(res, ProbResult):
        return res
    val = np.asarray(res, float)
    return ProbResult(val, np.zeros_like(val), 1, None)


def _central(prob_fn, x, steps):
    vals, samples = [], []
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = steps[idx]
        plus, minus = _as_prob(prob_fn(x + e)), _as_prob(prob_fn(x - e))
        vals.append((plus.value - minus.value) / (2 * steps[idx]))
        if plus.samples is not None and minus.samples is not None:
            samples.append((plus.samples - minus.samples) / (2 * steps[idx]))
        else:
            samples.append(None)
    out = np.moveaxis(np.array(vals), 0, -1).reshape(np.shape(vals[0]) + x.shape)
    if any(s is None for s in samples):
        return out, None
    per = np.moveaxis(np.array(samples), 0, -1)
    return out, per.reshape(per.shape[:-1] + x.shape)


def num_grad_prob(
    prob_fn: Callable, x, steps=None, mc: bool | None = None, halving: bool = True
) -> GradResult:
    """Central-difference gradient of ``prob_fn`` (scalar or vector valued).

    Monte Carlo backed functions must draw with common random numbers, i.e.
    reuse the same stream at every argument.
    """
    x = np.asarray(x, float)
    if mc is None:
        mc = _as_prob(prob_fn(x)).samples is not None
    steps = default_steps(x, mc) if steps is None else np.broadcast_to(np.asarray(steps, float), x.shape)
    _check_steps(x, steps)
    value, per = _central(prob_fn, x, steps)
    if halving:
        half, _ = _central(prob_fn, x, steps / 2)
        err = np.abs(value - half)
    else:
        err = np.zeros_like(value)
    if per is not None:
        n = per.shape[0]
        se = per.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        se = np.zeros_like(value)
    return GradResult(value, se, np.asarray(steps, float), err, per)


def num_hessian_prob(prob_fn: Callable, x, steps=None, mc: bool | None = None) -> GradResult:
    """Central-difference Hessian of a scalar ``prob_fn``; same contract as ``num_grad_prob``."""
    x = np.asarray(x, float).reshape(-1)
    f0 = _as_prob(prob_fn(x))
    if mc is None:
        mc = f0.samples is not None
    if steps is None:
        steps = default_steps(x, mc, None if mc else HESSIAN_CLOSED_REL_STEP)
    steps = np.broadcast_to(np.asarray(steps, float), x.shape)
    _check_steps(x, steps)
    d = x.size

    def at(*shifts):
        e = np.zeros(d)
        for i, s in shifts:
            e[i] += s * steps[i]
        return _as_prob(prob_fn(x + e))

    def combine(parts):
        val = sum(c * p.value for c, p in parts)
        if all(p.samples is not None for _, p in parts):
            return val, sum(c * p.samples for c, p in parts)
        return val, None

    value = np.zeros((d, d))
    per = None
    for i in range(d):
        for j in range(i, d):
            if i == j:
                parts = [(1.0, at((i, 1))), (-2.0, f0), (1.0, at((i, -1)))]
                scale = steps[i] ** 2
            else:
                parts = [
                    (1.0, at((i, 1), (j, 1))),
                    (-1.0, at((i, 1), (j, -1))),
                    (-1.0, at((i, -1), (j, 1))),
                    (1.0, at((i, -1), (j, -1))),
                ]
                scale = 4 * steps[i] * steps[j]
            val, s = combine(parts)
            value[i, j] = value[j, i] = float(val) / scale
            if s is not None:
                if per is None:
                    per = np.zeros((len(s), d, d))
                per[:, i, j] = per[:, j, i] = s / scale
    # rounding floor of a second difference: a few ulps of |f| over h^2
    rounding = 8 * np.finfo(float).eps * max(1.0, float(np.abs(f0.value))) / np.outer(steps, steps)
    if per is not None:
        se = per.std(axis=0, ddof=1) / np.sqrt(per.shape[0])
    else:
        se = np.zeros((d, d))
    return GradResult(value, se, np.asarray(steps, float), rounding, per)
