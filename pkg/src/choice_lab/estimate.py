"""Kernel estimators that recover probability derivatives from simulated samples.

Everything is local linear: weighted least squares of a choice indicator on
``(1, X - x0)`` with product-kernel weights.  The intercept estimates the
probability and the slope its gradient.  Choices are stored 0-based
(binary samples use 0/1).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .choiceprob import mc_draws, noise_draws
from .distributions import EtaDist, Heterogeneity
from .errors import ConfigurationError, InsufficientDataError, SingularFitError
from .model import BINARY_RC, LINEAR_RC, UtilityModel
from . import rng as rngmod

GAUSSIAN = "gaussian"
EPANECHNIKOV = "epanechnikov"
LEVEL = "level"
DERIVATIVE = "derivative"
RULE_CONSTANT = 1.06
MIN_LOCAL = 50
COND_LIMIT = 1e12


# ----------------------------------------------------------------- samples
@dataclass(frozen=True, eq=False)
class CrossSectionSample:
    X: np.ndarray  # (n, p) flattened regressors
    Y: np.ndarray  # (n,) 0-based choices
    J: int
    config_hash: str = ""
    seed: int = 0

    @property
    def n(self) -> int:
        return len(self.Y)

    def indicators(self) -> np.ndarray:
        """(n, J) one-hot choices; binary samples return the single column 1(Y = 1)."""
        if self.J == 2:
            return self.Y[:, None].astype(float)
        out = np.zeros((self.n, self.J))
        out[np.arange(self.n), self.Y] = 1.0
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(self.X.shape[1])] + ["y"])
        for x, y in zip(self.X, self.Y):
            w.writerow([repr(float(v)) for v in x] + [int(y)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, J: int = 2) -> "CrossSectionSample":
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array(rows[1:], float)
        return cls(data[:, :-1], data[:, -1].astype(int), J)


@dataclass(frozen=True, eq=False)
class PanelSample:
    X1: np.ndarray
    X2: np.ndarray
    Y1: np.ndarray
    Y2: np.ndarray
    J: int
    config_hash: str = ""
    seed: int = 0

    @property
    def n(self) -> int:
        return len(self.Y1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        p = self.X1.shape[1]
        w.writerow([f"x1_{i}" for i in range(p)] + [f"x2_{i}" for i in range(p)] + ["y1", "y2"])
        for a, b, y1, y2 in zip(self.X1, self.X2, self.Y1, self.Y2):
            w.writerow([repr(float(v)) for v in a] + [repr(float(v)) for v in b] + [int(y1), int(y2)])
        return buf.getvalue()


def _utilities_rowwise(model: UtilityModel, X: np.ndarray, eta: np.ndarray) -> np.ndarray:
    if model.family == LINEAR_RC:
        xb = X.reshape((-1,) + model.x_shape)
        xi = np.asarray(model.params.get("xi", np.zeros(model.J)), float)
        return np.einsum("nm,njm->nj", eta, xb) + xi
    return np.concatenate([model.u(x.reshape(model.x_shape), e[None, :]) for x, e in zip(X, eta)])


def _index_rowwise(model: UtilityModel, X: np.ndarray, eta: np.ndarray) -> np.ndarray:
    if model.family == BINARY_RC:
        return np.sum(eta * X, axis=1)
    return np.concatenate([model.h(x.reshape(model.x_shape), e[None, :]) for x, e in zip(X, eta)])


def simulate_cross_section(model: UtilityModel, dists: Heterogeneity, x_law: EtaDist, n: int, seed: int,
                           config_hash: str = "") -> CrossSectionSample:
    """Draw X from ``x_law``, then (eta, v), and record the utility-maximising choice."""
    if x_law.dim != int(np.prod(model.x_shape)):
        raise ConfigurationError(f"x_law has dimension {x_law.dim}, model needs {int(np.prod(model.x_shape))}")
    X = mc_draws(x_law, n, seed, "sample/x")
    eta = mc_draws(dists.eta, n, seed, "sample/eta")
    if model.is_binary:
        v = noise_draws(dists.noise, eta, seed, "sample/v")
        Y = (_index_rowwise(model, X, eta) + v >= 0).astype(int)
    else:
        v = noise_draws(dists.noise, eta, seed, "sample/v", model.J)
        Y = np.argmax(_utilities_rowwise(model, X, eta) + v, axis=1)
    return CrossSectionSample(np.array(X), Y, model.J, config_hash, seed)


def simulate_panel(dgp, model: UtilityModel, n: int, seed: int, config_hash: str = "") -> PanelSample:
    """Two-period sample from a ``panel.PanelDGP``."""
    from .panel import outcomes, simulate_draws

    draws = simulate_draws(dgp, model, n, seed)
    y1, y2 = outcomes(dgp, model, draws)
    return PanelSample(np.array(draws.X1), np.array(draws.X2), y1, y2, model.J, config_hash, seed)


# ---------------------------------------------------------------- kernels
@dataclass(frozen=True)
class KernelConfig:
    kernel: str = GAUSSIAN
    bandwidth: object = DERIVATIVE  # rule tag or per-dimension positive values
    order: int = 1
    constant: float = RULE_CONSTANT

    def __post_init__(self):
        if self.kernel not in (GAUSSIAN, EPANECHNIKOV):
            raise ConfigurationError(f"unknown kernel {self.kernel!r}")
        if self.order != 1:
            raise ConfigurationError("only local linear fits (order 1) are supported")
        if not isinstance(self.bandwidth, str):
            b = np.atleast_1d(np.asarray(self.bandwidth, float))
            if np.any(b <= 0):
                raise ConfigurationError("bandwidths must be positive")
        elif self.bandwidth not in (LEVEL, DERIVATIVE):
            raise ConfigurationError(f"unknown bandwidth rule {self.bandwidth!r}")


def kernel_weights(u: np.ndarray, kernel: str) -> np.ndarray:
    """Product kernel weights for scaled offsets ``u`` of shape ``(n, d)``."""
    if kernel == GAUSSIAN:
        return np.exp(-0.5 * np.sum(u * u, axis=1))
    inside = np.clip(1.0 - u * u, 0.0, None)
    return np.prod(0.75 * inside, axis=1)


def bandwidth_rule(X: np.ndarray, target: str = DERIVATIVE, c: float = RULE_CONSTANT) -> np.ndarray:
    """b_i = c sd(X_i) n^(-1/(d+4)) for levels and n^(-1/(d+6)) for derivatives."""
    X = np.atleast_2d(np.asarray(X, float))
    n, d = X.shape
    power = {LEVEL: d + 4, DERIVATIVE: d + 6}.get(target)
    if power is None:
        raise ConfigurationError(f"unknown bandwidth target {target!r}")
    return c * X.std(axis=0, ddof=1) * n ** (-1.0 / power)


def resolve_bandwidth(X: np.ndarray, kcfg: KernelConfig) -> np.ndarray:
    if isinstance(kcfg.bandwidth, str):
        return bandwidth_rule(X, kcfg.bandwidth, kcfg.constant)
    b = np.atleast_1d(np.asarray(kcfg.bandwidth, float))
    return np.broadcast_to(b, (X.shape[1],)).copy()


@dataclass(frozen=True, eq=False)
class LocalFit:
    """Local linear estimates at one point.

    ``level`` has one entry per response column and ``slope`` has shape
    ``(columns, d)``; ``slope_se`` are heteroskedasticity-robust standard
    errors.
    """

    level: np.ndarray
    slope: np.ndarray
    level_se: np.ndarray
    slope_se: np.ndarray
    bandwidth: np.ndarray
    n_local: int
    n_effective: float
    weights: np.ndarray = field(repr=False, default=None)


def _wls(Z: np.ndarray, R: np.ndarray, w: np.ndarray, x0):
    """Weighted least squares of every column of R on Z; returns (coef, robust se)."""
    A = Z.T @ (w[:, None] * Z)
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > COND_LIMIT:
        raise SingularFitError(x0)
    coef = np.linalg.solve(A, Z.T @ (w[:, None] * R))
    resid = R - Z @ coef
    Ainv = np.linalg.inv(A)
    ses = []
    for c in range(R.shape[1]):
        wz = (w * resid[:, c])[:, None] * Z
        cov = Ainv @ (wz.T @ wz) @ Ainv
        ses.append(np.sqrt(np.clip(np.diag(cov), 0.0, None)))
    return coef, np.array(ses).T


def local_linear(X: np.ndarray, R: np.ndarray, x0, bandwidth: np.ndarray, kernel: str = GAUSSIAN,
                 extra_weights: np.ndarray | None = None) -> LocalFit:
    """Local linear regression of the columns of ``R`` on ``X`` at ``x0``."""
    X = np.atleast_2d(np.asarray(X, float))
    R = np.asarray(R, float).reshape(len(X), -1)
    x0 = np.asarray(x0, float).ravel()
    b = np.asarray(bandwidth, float)
    U = (X - x0) / b
    w = kernel_weights(U, kernel)
    if extra_weights is not None:
        w = w * extra_weights
    n_local = int(np.sum(np.all(np.abs(U) <= 2.0, axis=1) & (w > 0)))
    if n_local < MIN_LOCAL:
        raise InsufficientDataError(f"only {n_local} observations within 2 bandwidths of {x0.tolist()}")
    keep = w > 1e-300
    Z = np.hstack([np.ones((keep.sum(), 1)), X[keep] - x0])
    coef, se = _wls(Z, R[keep], w[keep], x0)
    n_eff = float(w.sum() ** 2 / np.sum(w * w))
    return LocalFit(coef[0], coef[1:].T, se[0], se[1:].T, b, n_local, n_eff, w)


def local_linear_fit(sample: CrossSectionSample, x0, kcfg: KernelConfig) -> LocalFit:
    """P_j(x0) and its gradient from a cross-section sample (all j at once)."""
    b = resolve_bandwidth(sample.X, kcfg)
    return local_linear(sample.X, sample.indicators(), x0, b, kcfg.kernel)


# ------------------------------------------------------------ ratio estimator
@dataclass(frozen=True, eq=False)
class RatioEstimate:
    """Ratios of derivative components at the origin with bootstrap intervals.

    ``ratios[j]`` is d_j / d_ref for every ``j != ref``; entries are NaN when
    the reference derivative is not separated from zero (``flagged``).
    """

    derivative: np.ndarray
    ref: int
    components: list
    ratios: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    boot_se: np.ndarray
    ref_boot_se: float
    flagged: bool
    bandwidth: np.ndarray


def estimate_mean_coeff_ratio(sample: CrossSectionSample, kcfg: KernelConfig, x0=None, ref: int | None = None,
                              n_boot: int = 200, seed: int = 0, level: float = 0.95,
                              guard: float = 3.0) -> RatioEstimate:
    """Estimated d_j P(0) / d_ref P(0) with percentile bootstrap intervals.

    Resamples are multinomial count vectors applied as extra kernel weights,
    so the bandwidth is held fixed across resamples.  The ratio is reported
    only when |d_ref| exceeds ``guard`` bootstrap standard errors.
    """
    if sample.J != 2:
        raise ConfigurationError("the coefficient-ratio estimator is for binary samples")
    d = sample.X.shape[1]
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, float)
    ref = d - 1 if ref is None else int(ref)
    others = [j for j in range(d) if j != ref]
    b = resolve_bandwidth(sample.X, kcfg)
    R = sample.indicators()
    fit = local_linear(sample.X, R, x0, b, kcfg.kernel)
    deriv = fit.slope[0]
    gen = rngmod.generator(seed, "bootstrap")
    # only observations with non-negligible weight matter for the refit
    active = fit.weights > 1e-12 * fit.weights.max()
    Xa, Ra, wa = sample.X[active], R[active], fit.weights[active]
    Z = np.hstack([np.ones((len(Xa), 1)), Xa - x0])
    boot = np.empty((n_boot, d))
    for r in range(n_boot):
        counts = gen.multinomial(sample.n, np.full(sample.n, 1.0 / sample.n))[active]
        w = wa * counts
        A = Z.T @ (w[:, None] * Z)
        boot[r] = np.linalg.solve(A, Z.T @ (w * Ra[:, 0]))[1:]
    ref_se = float(boot[:, ref].std(ddof=1))
    flagged = abs(deriv[ref]) <= guard * ref_se
    alpha = 0.5 * (1.0 - level)
    if flagged:
        nan = np.full(len(others), np.nan)
        return RatioEstimate(deriv, ref, others, nan, nan, nan, nan, ref_se, True, b)
    ratios = deriv[others] / deriv[ref]
    boot_r = boot[:, others] / boot[:, [ref]]
    lo, hi = np.quantile(boot_r, [alpha, 1.0 - alpha], axis=0)
    return RatioEstimate(deriv, ref, others, ratios, lo, hi, boot_r.std(axis=0, ddof=1), ref_se, False, b)


# ------------------------------------------------------------ panel estimator
@dataclass(frozen=True, eq=False)
class PanelDiagEstimate:
    """X2-slope block of E[Y_j2 - Y_j1 | X1, X2] at (x, x): shape ``(columns, p)``."""

    slope_x2: np.ndarray
    slope_x2_se: np.ndarray
    intercept: np.ndarray
    intercept_se: np.ndarray
    bandwidth: np.ndarray
    n_effective: float


def panel_diag_estimator(sample: PanelSample, x_diag, kcfg: KernelConfig) -> PanelDiagEstimate:
    """Local linear regression of Y_j2 - Y_j1 on (X1, X2) at X1 = X2 = x_diag."""
    X = np.hstack([sample.X1, sample.X2])
    p = sample.X1.shape[1]
    x_diag = np.asarray(x_diag, float).ravel()
    if x_diag.size != p:
        raise ConfigurationError(f"x_diag has {x_diag.size} entries, sample has p={p}")
    if sample.J == 2:
        R = (sample.Y2 - sample.Y1)[:, None].astype(float)
    else:
        R = np.zeros((sample.n, sample.J))
        R[np.arange(sample.n), sample.Y2] += 1.0
        R[np.arange(sample.n), sample.Y1] -= 1.0
    b = resolve_bandwidth(X, kcfg)
    fit = local_linear(X, R, np.concatenate([x_diag, x_diag]), b, kcfg.kernel)
    return PanelDiagEstimate(fit.slope[:, p:], fit.slope_se[:, p:], fit.level, fit.level_se, b, fit.n_effective)


def estimate_direction(sample: PanelSample, diag_points, kcfg: KernelConfig, d: int | None = None):
    """Common direction of the diagonal X2-slopes, stacked over points.

    Binary samples contribute one slope vector per point.  Multinomial samples
    with choice-specific regressors (``p = J d``) contribute one d-vector per
    (j, k) pair; own-alternative pairs fix the sign.
    Returns ``(unit vector, stacked rows)``.
    """
    from .panel import direction_from_rows

    rows, own = [], []
    for x in diag_points:
        est = panel_diag_estimator(sample, x, kcfg)
        if sample.J == 2:
            rows.append(est.slope_x2[0])
            own.append(True)
            continue
        d = d or est.slope_x2.shape[1] // sample.J
        blocks = est.slope_x2.reshape(sample.J, sample.J, d)
        for j in range(sample.J):
            for k in range(sample.J):
                rows.append(blocks[j, k])
                own.append(j == k)
    rows = np.array(rows)
    b, _ = direction_from_rows(rows, np.array(own))
    return b, rows
