"""Heterogeneity laws.

``EtaDist`` covers the random coefficients ``eta``; ``NoiseDist`` covers the
additive disturbance ``v`` (scalar for binary models, a J-vector for
multinomial ones), possibly shifted by ``eta``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special, stats

from .errors import ConfigurationError, UnsupportedError

MIX_WEIGHT_TOL = 1e-12


@lru_cache(maxsize=64)
def hermite_rule(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights with sum(w * f(z)) ~= E[f(Z)], Z ~ N(0, 1)."""
    z, w = np.polynomial.hermite.hermgauss(k)
    return np.sqrt(2.0) * z, w / np.sqrt(np.pi)


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """L with L @ L.T == cov for symmetric PSD cov (singular allowed)."""
    cov = np.asarray(cov, float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ConfigurationError(f"covariance must be square, got shape {cov.shape}")
    scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
    if not np.allclose(cov, cov.T, atol=1e-12 * scale):
        raise ConfigurationError("covariance matrix is not symmetric")
    vals, vecs = np.linalg.eigh(cov)
    if vals.size and vals.min() < -1e-10 * scale:
        raise ConfigurationError(f"covariance matrix is not PSD (min eigenvalue {vals.min():.3g})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


# ---------------------------------------------------------------------- eta
class EtaDist:
    dim: int

    def mean(self) -> np.ndarray:
        raise NotImplementedError

    def second_moment(self) -> np.ndarray:
        raise NotImplementedError

    def covariance(self) -> np.ndarray:
        m = self.mean()
        return self.second_moment() - np.outer(m, m)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def quadrature(self, nodes_per_dim: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def shifted(self, delta) -> "EtaDist":
        raise NotImplementedError

    @property
    def supports_quadrature(self) -> bool:
        return True


@dataclass(frozen=True, eq=False)
class MultivariateNormal(EtaDist):
    mu: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, float))
        cov = np.atleast_2d(np.asarray(self.cov, float))
        if cov.shape != (mu.size, mu.size):
            raise ConfigurationError(f"cov shape {cov.shape} does not match mean length {mu.size}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_L", psd_factor(cov))

    @property
    def dim(self) -> int:
        return self.mu.size

    def mean(self):
        return self.mu.copy()

    def covariance(self):
        return self.cov.copy()

    def second_moment(self):
        return self.cov + np.outer(self.mu, self.mu)

    def sample(self, n, rng):
        return self.mu + rng.standard_normal((n, self.dim)) @ self._L.T

    def quadrature(self, nodes_per_dim):
        z, w = hermite_rule(nodes_per_dim)
        grid = np.array(list(itertools.product(z, repeat=self.dim)))
        weights = np.prod(np.array(list(itertools.product(w, repeat=self.dim))), axis=1)
        return self.mu + grid @ self._L.T, weights

    def shifted(self, delta):
        return MultivariateNormal(self.mu + np.asarray(delta, float), self.cov)


@dataclass(frozen=True, eq=False)
class PointMass(EtaDist):
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, float)))

    @property
    def dim(self):
        return self.beta.size

    def mean(self):
        return self.beta.copy()

    def second_moment(self):
        return np.outer(self.beta, self.beta)

    def sample(self, n, rng):
        return np.tile(self.beta, (n, 1))

    def quadrature(self, nodes_per_dim):
        return self.beta[None, :].copy(), np.ones(1)

    def shifted(self, delta):
        return PointMass(self.beta + np.asarray(delta, float))


@dataclass(frozen=True, eq=False)
class FiniteMixture(EtaDist):
    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        if w.ndim != 1 or len(w) != len(self.components) or not len(w):
            raise ConfigurationError("mixture needs one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > MIX_WEIGHT_TOL:
            raise ConfigurationError("mixture weights must be nonnegative and sum to 1")
        if len({c.dim for c in self.components}) != 1:
            raise ConfigurationError("mixture components differ in dimension")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def dim(self):
        return self.components[0].dim

    def mean(self):
        return sum(w * c.mean() for w, c in zip(self.weights, self.components))

    def second_moment(self):
        return sum(w * c.second_moment() for w, c in zip(self.weights, self.components))

    def sample(self, n, rng):
        u = rng.random(n)
        label = np.searchsorted(np.cumsum(self.weights), u, side="right")
        label = np.minimum(label, len(self.components) - 1)
        out = np.empty((n, self.dim))
        for k, comp in enumerate(self.components):
            # every component is sampled so the stream layout does not depend on labels
            draws = comp.sample(n, rng)
            out[label == k] = draws[label == k]
        return out

    def quadrature(self, nodes_per_dim):
        pts, wts = [], []
        for w, comp in zip(self.weights, self.components):
            if w == 0.0:
                continue
            p, q = comp.quadrature(nodes_per_dim)
            pts.append(p)
            wts.append(w * q)
        return np.concatenate(pts), np.concatenate(wts)

    def shifted(self, delta):
        return FiniteMixture(self.weights, tuple(c.shifted(delta) for c in self.components))


@dataclass(frozen=True, eq=False)
class UniformBox(EtaDist):
    """Independent uniforms on the box [lo, hi]; used for bounded regressor and control laws."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, float))
        hi = np.atleast_1d(np.asarray(self.hi, float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ConfigurationError("UniformBox needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.size

    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def covariance(self):
        return np.diag((self.hi - self.lo) ** 2 / 12.0)

    def second_moment(self):
        return self.covariance() + np.outer(self.mean(), self.mean())

    def sample(self, n, rng):
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))

    def quadrature(self, nodes_per_dim):
        z, w = np.polynomial.legendre.leggauss(nodes_per_dim)
        half = 0.5 * (self.hi - self.lo)
        grid = np.array(list(itertools.product(z, repeat=self.dim)))
        weights = np.prod(np.array(list(itertools.product(w / 2.0, repeat=self.dim))), axis=1)
        return self.mean() + grid * half, weights

    def shifted(self, delta):
        delta = np.asarray(delta, float)
        return UniformBox(self.lo + delta, self.hi + delta)

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)


def sample_eta(dist: EtaDist, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    return dist.sample(n, rng)


# -------------------------------------------------------------------- noise
def _logistic(z):
    return special.expit(z)


class NoiseDist:
    """Law of v given eta.

    Binary use (scalar v): ``density``, ``cdf``, ``ddensity``, ``sample``.
    Multinomial use (v in R^J): ``kernel`` / ``kernel_jacobian`` give
    p_j(u | eta) and p_jk(u | eta) when a closed form exists, and
    ``sample_vector`` draws v for Monte Carlo argmax frequencies.
    """

    closed_kernel = False

    def density(self, v, eta=None):
        raise UnsupportedError(f"{type(self).__name__} has no scalar density")

    def cdf(self, v, eta=None):
        raise UnsupportedError(f"{type(self).__name__} has no scalar CDF")

    def ddensity(self, v, eta=None):
        raise UnsupportedError(f"{type(self).__name__} has no scalar density")

    def sample(self, n, rng, eta=None):
        raise UnsupportedError(f"{type(self).__name__} has no scalar sampler")

    def sample_vector(self, n, J, rng, eta=None):
        raise UnsupportedError(f"{type(self).__name__} is not a multinomial disturbance")

    def kernel(self, u, eta=None):
        raise UnsupportedError(f"{type(self).__name__} has no closed-form choice kernel")

    def kernel_jacobian(self, u, eta=None):
        raise UnsupportedError(f"{type(self).__name__} has no closed-form choice kernel")

    @property
    def depends_on_eta(self) -> bool:
        return False

    def mode_density_at_zero(self) -> float:
        return float(self.density(np.zeros(1))[0])


def _chunked(fn, u: np.ndarray, rows: int = 8192):
    if u.ndim < 2 or u.shape[0] <= rows:
        return fn(u)
    return np.concatenate([fn(u[i : i + rows]) for i in range(0, u.shape[0], rows)])


def logit_probs(u: np.ndarray) -> np.ndarray:
    z = u - np.max(u, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def logit_jac(u: np.ndarray) -> np.ndarray:
    p = logit_probs(u)
    eye = np.eye(u.shape[-1])
    return p[..., :, None] * (eye - p[..., None, :])


@dataclass(frozen=True)
class LogisticDiff(NoiseDist):
    """v = xi + (difference of two standard Type I extreme value draws)."""

    xi: float = 0.0

    def density(self, v, eta=None):
        s = _logistic(np.asarray(v, float) - self.xi)
        return s * (1.0 - s)

    def cdf(self, v, eta=None):
        return _logistic(np.asarray(v, float) - self.xi)

    def ddensity(self, v, eta=None):
        s = _logistic(np.asarray(v, float) - self.xi)
        return s * (1.0 - s) * (1.0 - 2.0 * s)

    def sample(self, n, rng, eta=None):
        u = rng.random(n)
        return self.xi + np.log(u) - np.log1p(-u)


@dataclass(frozen=True)
class Gaussian(NoiseDist):
    """N(mean, sd^2) scalar; i.i.d. across alternatives when used as a J-vector."""

    mean: float = 0.0
    sd: float = 1.0
    nodes: int = 48

    def __post_init__(self):
        if self.sd <= 0:
            raise ConfigurationError("Gaussian noise needs sd > 0")

    closed_kernel = True

    def density(self, v, eta=None):
        return stats.norm.pdf(np.asarray(v, float), self.mean, self.sd)

    def cdf(self, v, eta=None):
        return stats.norm.cdf(np.asarray(v, float), self.mean, self.sd)

    def ddensity(self, v, eta=None):
        z = (np.asarray(v, float) - self.mean) / self.sd
        return -z / self.sd * stats.norm.pdf(z) / self.sd

    def sample(self, n, rng, eta=None):
        return self.mean + self.sd * rng.standard_normal(n)

    def sample_vector(self, n, J, rng, eta=None):
        return self.mean + self.sd * rng.standard_normal((n, J))

    def kernel(self, u, eta=None):
        return _chunked(self._kernel, np.asarray(u, float))

    def kernel_jacobian(self, u, eta=None):
        return _chunked(self._kernel_jacobian, np.asarray(u, float))

    def _kernel(self, u):
        # p_j = E_z[prod_{k != j} Phi((u_j - u_k)/sd + z)]: one-dimensional quadrature
        u = u / self.sd
        z, w = hermite_rule(self.nodes)
        diff = u[..., :, None] - u[..., None, :]  # (..., j, k)
        cdf = special.ndtr(diff[..., None] + z)  # (..., j, k, q)
        J = u.shape[-1]
        idx = np.arange(J)
        cdf[..., idx, idx, :] = 1.0
        return np.prod(cdf, axis=-2) @ w

    def _kernel_jacobian(self, u):
        u = u / self.sd
        z, w = hermite_rule(self.nodes)
        J = u.shape[-1]
        idx = np.arange(J)
        diff = u[..., :, None] - u[..., None, :]
        arg = diff[..., None] + z
        cdf = special.ndtr(arg)
        pdf = np.exp(-0.5 * arg * arg) / np.sqrt(2 * np.pi)
        cdf[..., idx, idx, :] = 1.0
        jac = np.zeros(u.shape + (J,))
        for k in range(J):
            others = cdf.copy()
            others[..., :, k, :] = 1.0
            term = -(pdf[..., :, k, :] * np.prod(others, axis=-2)) @ w  # d p_j / d u_k, j != k
            jac[..., :, k] = term
        jac[..., idx, idx] = 0.0
        jac[..., idx, idx] = -np.sum(jac, axis=-1)
        return jac / self.sd


@dataclass(frozen=True)
class IIDGumbel(NoiseDist):
    """J independent standard Type I extreme value disturbances."""

    closed_kernel = True

    def kernel(self, u, eta=None):
        return logit_probs(np.asarray(u, float))

    def kernel_jacobian(self, u, eta=None):
        return logit_jac(np.asarray(u, float))

    def sample_vector(self, n, J, rng, eta=None):
        return rng.gumbel(size=(n, J))

    # binary use: the difference of two Gumbels is standard logistic
    def density(self, v, eta=None):
        return LogisticDiff(0.0).density(v)

    def cdf(self, v, eta=None):
        return LogisticDiff(0.0).cdf(v)

    def ddensity(self, v, eta=None):
        return LogisticDiff(0.0).ddensity(v)

    def sample(self, n, rng, eta=None):
        g = rng.gumbel(size=(n, 2))
        return g[:, 0] - g[:, 1]


@dataclass(frozen=True, eq=False)
class EtaShifted(NoiseDist):
    """v = base + shift @ eta: a location shift that makes f_v(. | eta) vary with eta.

    ``shift`` is a vector (binary v) or a ``(J, m)`` matrix (multinomial v).
    """

    base: NoiseDist
    shift: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shift", np.asarray(self.shift, float))

    @property
    def closed_kernel(self):
        return self.base.closed_kernel

    @property
    def depends_on_eta(self):
        return bool(np.any(self.shift != 0))

    def _loc(self, eta):
        if eta is None:
            raise ConfigurationError("EtaShifted noise needs eta")
        eta = np.atleast_2d(np.asarray(eta, float))
        if self.shift.ndim != 1:
            raise ConfigurationError("binary use of EtaShifted needs a shift vector")
        return eta @ self.shift

    def _uloc(self, eta):
        if eta is None:
            raise ConfigurationError("EtaShifted noise needs eta")
        eta = np.atleast_2d(np.asarray(eta, float))
        if self.shift.ndim != 2:
            raise ConfigurationError("multinomial use of EtaShifted needs a (J, m) shift")
        return eta @ self.shift.T

    def density(self, v, eta=None):
        return self.base.density(np.asarray(v, float) - self._loc(eta))

    def cdf(self, v, eta=None):
        return self.base.cdf(np.asarray(v, float) - self._loc(eta))

    def ddensity(self, v, eta=None):
        return self.base.ddensity(np.asarray(v, float) - self._loc(eta))

    def sample(self, n, rng, eta=None):
        return self.base.sample(n, rng) + self._loc(eta)

    def sample_vector(self, n, J, rng, eta=None):
        return self.base.sample_vector(n, J, rng) + self._uloc(eta)

    def kernel(self, u, eta=None):
        return self.base.kernel(np.asarray(u, float) + self._uloc(eta))

    def kernel_jacobian(self, u, eta=None):
        return self.base.kernel_jacobian(np.asarray(u, float) + self._uloc(eta))


def density_v(dist: NoiseDist, v, eta=None):
    return dist.density(v, eta)


def cdf_v(dist: NoiseDist, v, eta=None):
    return dist.cdf(v, eta)


def ddensity_v(dist: NoiseDist, v, eta=None):
    return dist.ddensity(v, eta)


def sample_v(dist: NoiseDist, eta, rng, J: int | None = None, n: int | None = None):
    """Draw v given eta rows: shape ``(n,)`` for binary use or ``(n, J)`` when J is given."""
    if eta is not None:
        eta = np.atleast_2d(np.asarray(eta, float))
        n = eta.shape[0] if n is None else n
    if n is None:
        raise ConfigurationError("sample_v needs eta rows or n")
    if J is None:
        return dist.sample(n, rng, eta)
    return dist.sample_vector(n, J, rng, eta)


@dataclass(frozen=True, eq=False)
class Heterogeneity:
    """Joint law of (eta, v): eta ~ ``eta``, v | eta ~ ``noise``."""

    eta: EtaDist
    noise: NoiseDist


# ------------------------------------------------------------- serialisation
def eta_from_dict(doc: dict) -> EtaDist:
    kind = doc.get("kind")
    try:
        if kind == "MultivariateNormal":
            return MultivariateNormal(doc["mean"], doc["cov"])
        if kind == "PointMass":
            return PointMass(doc["beta"])
        if kind == "UniformBox":
            return UniformBox(doc["lo"], doc["hi"])
        if kind == "FiniteMixture":
            return FiniteMixture(doc["weights"], tuple(eta_from_dict(c) for c in doc["components"]))
    except KeyError as exc:
        raise ConfigurationError(f"eta distribution {kind}: missing field {exc}") from exc
    raise ConfigurationError(f"unknown eta distribution kind {kind!r}")


def noise_from_dict(doc: dict) -> NoiseDist:
    kind = doc.get("kind")
    try:
        if kind == "LogisticDiff":
            return LogisticDiff(float(doc.get("xi", 0.0)))
        if kind == "Gaussian":
            return Gaussian(float(doc.get("mean", 0.0)), float(doc.get("sd", 1.0)))
        if kind == "IIDGumbel":
            return IIDGumbel()
        if kind == "EtaShifted":
            return EtaShifted(noise_from_dict(doc["base"]), doc["shift"])
    except KeyError as exc:
        raise ConfigurationError(f"noise distribution {kind}: missing field {exc}") from exc
    raise ConfigurationError(f"unknown noise distribution kind {kind!r}")


def eta_to_dict(dist: EtaDist) -> dict:
    if isinstance(dist, MultivariateNormal):
        return {"kind": "MultivariateNormal", "mean": dist.mu.tolist(), "cov": dist.cov.tolist()}
    if isinstance(dist, PointMass):
        return {"kind": "PointMass", "beta": dist.beta.tolist()}
    if isinstance(dist, UniformBox):
        return {"kind": "UniformBox", "lo": dist.lo.tolist(), "hi": dist.hi.tolist()}
    if isinstance(dist, FiniteMixture):
        return {
            "kind": "FiniteMixture",
            "weights": dist.weights.tolist(),
            "components": [eta_to_dict(c) for c in dist.components],
        }
    raise ConfigurationError(f"cannot serialise {dist!r}")


def noise_to_dict(dist: NoiseDist) -> dict:
    if isinstance(dist, LogisticDiff):
        return {"kind": "LogisticDiff", "xi": dist.xi}
    if isinstance(dist, Gaussian):
        return {"kind": "Gaussian", "mean": dist.mean, "sd": dist.sd}
    if isinstance(dist, IIDGumbel):
        return {"kind": "IIDGumbel"}
    if isinstance(dist, EtaShifted):
        return {"kind": "EtaShifted", "base": noise_to_dict(dist.base), "shift": dist.shift.tolist()}
    raise ConfigurationError(f"cannot serialise {dist!r}")
