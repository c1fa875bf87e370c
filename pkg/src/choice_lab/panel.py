"""Two-period panels with time-stationary heterogeneity.

Regressors ``X = (X1, X2)`` are drawn from ``x_law`` (dimension ``2p``, the
first ``p`` entries are period 1).  A time-invariant effect
``alpha | X ~ N(mu + G (X1 + X2) / 2, Sigma)`` carries the dependence on the
regressors.  Two ways of entering the utility are supported:

* ``eta_mode="alpha"``: the random coefficients are alpha itself;
* ``eta_mode="fixed"``: the coefficients are the constant ``beta0`` and
  alpha shifts the disturbance, ``v_t = base_t + shift @ alpha`` (an
  additive fixed effect).

Transitory disturbances are i.i.d. over periods given ``(alpha, X)`` unless
``transitory=False``, in which case ``v_1 = v_2``.  Either way the law of
``eps_t`` given ``X`` does not depend on ``t``.

The derivative with respect to ``X2`` always holds ``X1`` fixed and re-mixes
the law of alpha at ``(X1, X2 +- h)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .choiceprob import (
    IntegrationSpec,
    Nodes,
    ProbResult,
    deriv_integrand_at,
    eta_nodes,
    mc_draws,
    noise_draws,
    num_grad_prob,
    probs_at,
)
from .distributions import EtaDist, MultivariateNormal, NoiseDist, UniformBox
from .errors import ConfigurationError, IdentificationError, WrongFamilyError
from .identities import gaussian_kernel, silverman_bandwidth
from .model import LINEAR_RC, QUADRATIC, UtilityModel
from .report import DIFFER, STATUS_OK, STATUS_SKIPPED, DerivativeReport, combined_se

ALPHA = "alpha"
FIXED = "fixed"
NEAR_DIAGONAL = 1e-10
PAIR_GAPS = (0.25, 0.5, 1.0)


@dataclass(frozen=True, eq=False)
class PanelDGP:
    x_law: EtaDist
    mu: np.ndarray
    G: np.ndarray
    Sigma: np.ndarray
    noise: NoiseDist
    eta_mode: str = ALPHA
    beta0: np.ndarray | None = None
    alpha_shift: np.ndarray | None = None
    transitory: bool = True

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, float))
        G = np.atleast_2d(np.asarray(self.G, float))
        Sigma = np.atleast_2d(np.asarray(self.Sigma, float))
        if self.x_law.dim % 2:
            raise ConfigurationError("x_law must have even dimension 2p")
        if G.shape != (mu.size, self.x_law.dim // 2):
            raise ConfigurationError(f"G must be {mu.size}x{self.x_law.dim // 2}, got {G.shape}")
        if self.eta_mode not in (ALPHA, FIXED):
            raise ConfigurationError(f"unknown eta_mode {self.eta_mode!r}")
        if self.eta_mode == FIXED and (self.beta0 is None or self.alpha_shift is None):
            raise ConfigurationError("eta_mode 'fixed' needs beta0 and alpha_shift")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "_alpha0", MultivariateNormal(mu, Sigma))
        if self.beta0 is not None:
            object.__setattr__(self, "beta0", np.atleast_1d(np.asarray(self.beta0, float)))
        if self.alpha_shift is not None:
            object.__setattr__(self, "alpha_shift", np.asarray(self.alpha_shift, float))

    @property
    def p(self) -> int:
        return self.x_law.dim // 2

    @property
    def alpha_base(self) -> MultivariateNormal:
        """Law of alpha at X1 + X2 = 0."""
        return self._alpha0

    def alpha_mean_shift(self, x1, x2) -> np.ndarray:
        xbar = 0.5 * (np.asarray(x1, float).ravel() + np.asarray(x2, float).ravel())
        return self.G @ xbar

    def eta_and_shift(self, alpha: np.ndarray, multinomial: bool):
        """Map alpha rows to (eta rows, location shift of v)."""
        if self.eta_mode == ALPHA:
            return alpha, 0.0
        eta = np.broadcast_to(self.beta0, (len(alpha), self.beta0.size))
        shift = self.alpha_shift
        if multinomial:
            if shift.ndim != 2:
                raise ConfigurationError("multinomial alpha_shift must be a (J, m) matrix")
            return eta, alpha @ shift.T
        if shift.ndim != 1:
            raise ConfigurationError("binary alpha_shift must be a vector")
        return eta, alpha @ shift


def gaussian_x_law(p: int, mean=0.0, sd=1.0, rho=0.5) -> MultivariateNormal:
    """(X1, X2) with N(mean, sd^2) coordinates and correlation rho between periods."""
    cov = np.kron(np.array([[1.0, rho], [rho, 1.0]]), np.eye(p)) * sd**2
    return MultivariateNormal(np.full(2 * p, float(mean)), cov)


def uniform_x_law(p: int, lo=-1.0, hi=1.0) -> UniformBox:
    return UniformBox(np.full(2 * p, float(lo)), np.full(2 * p, float(hi)))


# ------------------------------------------------------- conditional means
def _nodes(dgp: PanelDGP, integ: IntegrationSpec) -> Nodes:
    return eta_nodes(dgp.alpha_base, integ, "panel/alpha")


def _per_node(dgp, model, nodes, x_eval, x1, x2, integrand=False):
    alpha = nodes.points + dgp.alpha_mean_shift(x1, x2)
    eta, shift = dgp.eta_and_shift(alpha, model.is_multinomial)
    fn = deriv_integrand_at if integrand else probs_at
    return fn(model, dgp.noise, x_eval, eta, shift)


def cond_E_Yt(dgp: PanelDGP, model: UtilityModel, X1, X2, t: int, integ: IntegrationSpec) -> ProbResult:
    """E[Y_t | X1, X2] (a J-vector for multinomial models)."""
    if t not in (1, 2):
        raise ConfigurationError(f"t must be 1 or 2, got {t}")
    nodes = _nodes(dgp, integ)
    x_t = X1 if t == 1 else X2
    return ProbResult.from_nodes(nodes, _per_node(dgp, model, nodes, x_t, X1, X2))


def _diff_fn(dgp, model, x1, integ):
    """X2 -> E[Y2 - Y1 | X1, X2] with X1 fixed (common draws across X2)."""
    nodes = _nodes(dgp, integ)

    def fn(x2):
        per = _per_node(dgp, model, nodes, x2, x1, x2) - _per_node(dgp, model, nodes, x1, x1, x2)
        return ProbResult.from_nodes(nodes, per)

    return fn


def thm7_lhs(dgp: PanelDGP, model: UtilityModel, x_diag, integ: IntegrationSpec):
    """d/dX2 E[Y2 - Y1 | X1, X2] at X1 = X2 = x_diag, as a ``GradResult``."""
    x = model.check_x(x_diag)
    return num_grad_prob(_diff_fn(dgp, model, x, integ), x, mc=integ.is_mc or None)


def thm7_rhs(dgp: PanelDGP, model: UtilityModel, x_diag, integ: IntegrationSpec,
             bandwidth: float | None = None, path: str = "analytic"):
    """Density-weighted mean utility derivative on the threshold, given X on the diagonal.

    ``path="analytic"`` integrates the derivative integrand over the law of
    eta given X; ``path="kernel"`` averages d_x delta K_b(delta) over joint
    draws.  Returns ``(value, se)``.
    """
    x = model.check_x(x_diag)
    if path == "analytic":
        nodes = _nodes(dgp, integ)
        return nodes.expect(_per_node(dgp, model, nodes, x, x, x, integrand=True))
    if path != "kernel":
        raise ConfigurationError(f"unknown RHS path {path!r}")
    if not model.is_binary:
        raise WrongFamilyError("the kernel path is defined for binary models")
    if bandwidth is not None and bandwidth <= 0:
        raise ConfigurationError(f"bandwidth must be positive, got {bandwidth}")
    alpha = mc_draws(dgp.alpha_base, integ.n_draws, integ.seed, "panel/kalpha") + dgp.alpha_mean_shift(x, x)
    eta, shift = dgp.eta_and_shift(alpha, False)
    v = noise_draws(dgp.noise, eta, integ.seed, "panel/kv")
    h, g = model.h_and_grad(x, eta)
    delta = h + shift + v
    b = silverman_bandwidth(delta) if bandwidth is None else float(bandwidth)
    per = g * gaussian_kernel(delta, b).reshape((-1,) + (1,) * (g.ndim - 1))
    return per.mean(axis=0), per.std(axis=0, ddof=1) / np.sqrt(len(per))


def heterogeneity_bias(dgp: PanelDGP, model: UtilityModel, x_pair, integ: IntegrationSpec):
    """d/dX2 E[Y1 | X1, X2]: the part of the X2-derivative that flows through the law of eps."""
    x1, x2 = (model.check_x(v) for v in x_pair)
    nodes = _nodes(dgp, integ)

    def fn(z):
        return ProbResult.from_nodes(nodes, _per_node(dgp, model, nodes, x1, x1, z))

    return num_grad_prob(fn, x2, mc=integ.is_mc or None)


def _diag_reports(label, dgp, model, diag_grid, integ, rhs_integ, tol_rel, k_bias):
    rhs_integ = rhs_integ or integ
    reports = []
    for x in diag_grid:
        x = model.check_x(x)
        lhs = thm7_lhs(dgp, model, x, integ)
        rhs, rhs_se = thm7_rhs(dgp, model, x, rhs_integ)
        reports.append(DerivativeReport(label, x.ravel(), lhs.value, rhs,
                                        combined_se(lhs.mc_se, rhs_se), tol_rel=tol_rel))
        bias = heterogeneity_bias(dgp, model, (x, x), integ)
        se = np.zeros_like(bias.value) if bias.mc_se is None else bias.mc_se
        # Y1 can be free of the coefficients at x (linear utilities at the origin),
        # in which case the bias vanishes identically and there is nothing to separate.
        structural_zero = not np.any(bias.value) and not np.any(se)
        reports.append(DerivativeReport(
            f"{label}_het_bias", x.ravel(), bias.value, np.zeros_like(bias.value), bias.mc_se,
            mode=DIFFER, k_se=k_bias, combine="any",
            status=STATUS_SKIPPED if structural_zero else STATUS_OK,
            note=("period-1 probability does not depend on the coefficients here"
                  if structural_zero else "passes when some component is separated from zero"),
        ))
    return reports


def verify_thm7(dgp: PanelDGP, model: UtilityModel, diag_grid, integ: IntegrationSpec,
                rhs_integ: IntegrationSpec | None = None, tol_rel: float = 0.01,
                k_bias: float = 5.0) -> list[DerivativeReport]:
    """Diagonal identity for binary panels, with the heterogeneity-bias term alongside."""
    if not model.is_binary:
        raise WrongFamilyError("verify_thm7 needs a binary model; use thm8_check")
    return _diag_reports("thm7", dgp, model, diag_grid, integ, rhs_integ, tol_rel, k_bias)


def thm8_check(dgp: PanelDGP, model: UtilityModel, diag_grid, integ: IntegrationSpec,
               rhs_integ: IntegrationSpec | None = None, tol_rel: float = 0.01,
               k_bias: float = 5.0) -> list[DerivativeReport]:
    """Multinomial diagonal identity; adds the origin scalar-multiple form when it applies.

    At X1 = X2 = 0 with linear choice-specific utilities, coefficients equal
    to alpha and v independent of alpha, the RHS is p_jk(xi) E[alpha | X = 0].
    """
    if not model.is_multinomial:
        raise WrongFamilyError("thm8_check needs a multinomial model")
    reports = _diag_reports("thm8", dgp, model, diag_grid, integ, rhs_integ, tol_rel, k_bias)
    for x in diag_grid:
        x = model.check_x(x)
        if (model.family == LINEAR_RC and dgp.eta_mode == ALPHA and not np.any(x)
                and not dgp.noise.depends_on_eta):
            xi = np.asarray(model.params.get("xi", np.zeros(model.J)), float)
            pjk = dgp.noise.kernel_jacobian(xi[None, :])[0]
            mean = dgp.mu + dgp.alpha_mean_shift(x, x)
            origin = pjk[:, :, None] * mean[None, None, :]
            lhs = thm7_lhs(dgp, model, x, integ)
            reports.append(DerivativeReport("thm8_berry_origin", x.ravel(), lhs.value, origin,
                                            lhs.mc_se, tol_rel=tol_rel))
    return reports


# ---------------------------------------------------------- direction
@dataclass(frozen=True)
class DirectionResult:
    beta_hat: np.ndarray
    angle: float
    scalars: np.ndarray
    singular_values: np.ndarray


def direction_from_rows(rows: np.ndarray, own: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dominant right singular vector of ``rows``, signed so own-alternative rows load positively."""
    _, s, vt = np.linalg.svd(rows, full_matrices=False)
    b = vt[0]
    if np.sum(rows[own] @ b) < 0:
        b = -b
    return b, s


def angle_between(a, b) -> float:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    cos = float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def thm9_recover_beta(dgp: PanelDGP, model: UtilityModel, diag_grid, integ: IntegrationSpec,
                      max_angle: float | None = None, scalar_floor: float = 1e-10):
    """Recover beta0 up to scale from stacked diagonal derivatives.

    Every diagonal derivative d/dX2^k E[Y_j2 - Y_j1 | X] equals a scalar
    E[p_jk | X] times beta0.  The scalars are computed and reported; if they
    all vanish the direction is not identified and ``IdentificationError`` is
    raised.  Returns ``(DirectionResult, DerivativeReport)``; the report
    compares the angle to beta0 with ``max_angle`` (1e-3 for quadrature,
    0.02 for Monte Carlo by default).
    """
    if model.family != LINEAR_RC or dgp.eta_mode != FIXED:
        raise WrongFamilyError("direction recovery needs LinearRC utilities with fixed coefficients")
    beta0 = dgp.beta0
    J, d = model.J, model.dims.d
    rows, own, scalars = [], [], []
    nodes = _nodes(dgp, integ)
    for x in diag_grid:
        x = model.check_x(x)
        lhs = thm7_lhs(dgp, model, x, integ)  # (J, J, d)
        alpha = nodes.points + dgp.alpha_mean_shift(x, x)
        eta, shift = dgp.eta_and_shift(alpha, True)
        u = model.u(x, eta) + shift
        jac, _ = nodes.expect(dgp.noise.kernel_jacobian(u, eta if dgp.noise.depends_on_eta else None))
        scalars.append(jac)
        for j in range(J):
            for k in range(J):
                rows.append(lhs.value[j, k])
                own.append(j == k)
    scalars = np.array(scalars)
    if np.max(np.abs(scalars)) <= scalar_floor:
        raise IdentificationError("all diagonal scalars E[p_jk | X] vanish; beta0 is not identified")
    b, s = direction_from_rows(np.array(rows), np.array(own))
    angle = angle_between(b, beta0)
    result = DirectionResult(b, angle, scalars, s)
    if max_angle is None:
        max_angle = 0.02 if integ.is_mc else 1e-3
    report = DerivativeReport("thm9_angle", np.zeros(1), [angle], [0.0], tol_abs=max_angle, tol_rel=0.0,
                              metadata={"beta_hat": b.tolist(), "beta0_unit": (beta0 / np.linalg.norm(beta0)).tolist(),
                                        "max_abs_scalar": float(np.max(np.abs(scalars))),
                                        "singular_values": s.tolist()})
    return result, report


# ------------------------------------------------------------ draws
@dataclass(frozen=True, eq=False)
class PanelDraws:
    X1: np.ndarray
    X2: np.ndarray
    alpha: np.ndarray
    v1: np.ndarray
    v2: np.ndarray


def simulate_draws(dgp: PanelDGP, model: UtilityModel, n: int, seed: int, x_pair=None) -> PanelDraws:
    """Joint draws of regressors, effects and disturbances.

    With ``x_pair`` the regressors are held at that pair (draws from the law
    of eps given X); otherwise X is drawn from ``x_law``.
    """
    p = dgp.p
    if x_pair is None:
        xs = mc_draws(dgp.x_law, n, seed, "panel/x")
        x1, x2 = xs[:, :p], xs[:, p:]
    else:
        x1 = np.broadcast_to(np.asarray(x_pair[0], float).ravel(), (n, p))
        x2 = np.broadcast_to(np.asarray(x_pair[1], float).ravel(), (n, p))
    alpha = mc_draws(dgp.alpha_base, n, seed, "panel/alpha_sim") + 0.5 * (x1 + x2) @ dgp.G.T
    eta, _ = dgp.eta_and_shift(alpha, model.is_multinomial)
    J = model.J if model.is_multinomial else None
    v1 = noise_draws(dgp.noise, eta, seed, "panel/v1", J)
    v2 = noise_draws(dgp.noise, eta, seed, "panel/v2", J) if dgp.transitory else v1
    return PanelDraws(np.asarray(x1), np.asarray(x2), alpha, v1, v2)


def _rowwise(model: UtilityModel, fn, xs: np.ndarray, eta: np.ndarray):
    """Evaluate ``fn(x, eta_rows)`` where x differs by row (grouping identical rows)."""
    p = xs.shape[1]
    if np.all(xs == xs[0]):
        return fn(xs[0].reshape(model.x_shape), eta)
    if model.family in (QUADRATIC,) or (model.is_binary and p == 1):
        # scalar regressor: vectorise through the row-specific value
        out = [fn(np.array([xv]), eta[i : i + 1]) for i, xv in enumerate(xs[:, 0])]
        return tuple(np.concatenate(parts) for parts in zip(*out)) if isinstance(out[0], tuple) else np.concatenate(out)
    out = [fn(xr.reshape(model.x_shape), eta[i : i + 1]) for i, xr in enumerate(xs)]
    return tuple(np.concatenate(parts) for parts in zip(*out)) if isinstance(out[0], tuple) else np.concatenate(out)


def _h_rows(model, xs, eta):
    """h(X_i, eta_i) and its gradient, one regressor row per eta row."""
    if model.family == QUADRATIC:
        x = xs[:, 0]
        h = eta[:, 0] + eta[:, 1] * x + eta[:, 2] * x * x
        return h, (eta[:, 1] + 2 * eta[:, 2] * x)[:, None]
    if model.family == "BinaryRC":
        return np.sum(eta * xs, axis=1), eta.copy()
    return _rowwise(model, model.h_and_grad, xs, eta)


def outcomes(dgp: PanelDGP, model: UtilityModel, draws: PanelDraws):
    """Observed choices ``(Y1, Y2)``: 0/1 for binary models, 0-based indices otherwise."""
    eta, shift = dgp.eta_and_shift(draws.alpha, model.is_multinomial)
    ys = []
    for x, v in ((draws.X1, draws.v1), (draws.X2, draws.v2)):
        if model.is_binary:
            h, _ = _h_rows(model, x, eta)
            ys.append((h + shift + v >= 0).astype(int))
        else:
            if model.family == LINEAR_RC:
                xb = x.reshape((-1,) + model.x_shape)
                xi = np.asarray(model.params.get("xi", np.zeros(model.J)), float)
                u = np.einsum("nm,njm->nj", eta, xb) + xi
            else:
                u = _rowwise(model, model.u, x, eta)
            ys.append(np.argmax(u + shift + v, axis=1))
    return ys[0], ys[1]


def stationarity_witness(dgp: PanelDGP, model: UtilityModel, x_probe=None, n: int = 100_000,
                         seed: int = 0, x_bins: int = 5, level: float = 0.05) -> dict:
    """Two-sample KS of delta(x_probe, eps_1) against delta(x_probe, eps_2) within X-bins.

    Period 1 and period 2 values come from independent halves of the draws so
    the two samples are independent.  Bins are quantile bins of the first
    coordinate of X1 + X2; the smallest p-value is compared with ``level``
    divided by the number of bins.
    """
    if not model.is_binary:
        raise WrongFamilyError("the stationarity witness uses a binary net utility")
    x_probe = np.zeros(model.x_shape) if x_probe is None else model.check_x(x_probe)
    dr = simulate_draws(dgp, model, n, seed)
    eta, shift = dgp.eta_and_shift(dr.alpha, False)
    h = model.h(x_probe, eta) + shift
    d1, d2 = h + dr.v1, h + dr.v2
    s = (dr.X1 + dr.X2)[:, 0]
    edges = np.quantile(s, np.linspace(0, 1, x_bins + 1))
    which = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, x_bins - 1)
    half = np.arange(n) < n // 2
    pvals = []
    for b in range(x_bins):
        in_bin = which == b
        pvals.append(float(stats.ks_2samp(d1[in_bin & half], d2[in_bin & ~half]).pvalue))
    threshold = level / x_bins
    return {"min_pvalue": min(pvals), "threshold": threshold, "pvalues": pvals, "pass": min(pvals) > threshold}


# ------------------------------------------------- nonidentification
@dataclass(frozen=True, eq=False)
class EquivalentLinearModel:
    """Per-draw time-invariant (eps_a, eps_b) reproducing the observed outcomes."""

    eps_a: np.ndarray
    eps_b: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    Y1: np.ndarray
    Y2: np.ndarray
    n_excluded: int
    max_rel_err: float
    binary: bool = False
    indicators_equal: bool = True

    def phi(self, x) -> np.ndarray:
        return self.eps_a + self.eps_b * np.asarray(x, float)

    @property
    def excluded_fraction(self) -> float:
        return self.n_excluded / (self.n_excluded + len(self.eps_a))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["draw", "eps_a", "eps_b", "Y1", "Y2", "X1", "X2"])
        for i in range(len(self.eps_a)):
            w.writerow([i] + [repr(float(a[i])) for a in
                              (self.eps_a, self.eps_b, self.Y1, self.Y2, self.X1, self.X2)])
        return buf.getvalue()


def _split_scalar(draws: PanelDraws):
    if draws.X1.shape[1] != 1:
        raise ConfigurationError("the linear construction needs a scalar regressor")
    return draws.X1[:, 0], draws.X2[:, 0]


def _linear_construction(x1, x2, y1, y2, binary: bool):
    keep = np.abs(x2 - x1) >= NEAR_DIAGONAL
    x1, x2, y1, y2 = x1[keep], x2[keep], y1[keep], y2[keep]
    eb = (y2 - y1) / (x2 - x1)
    ea = y1 - eb * x1
    err = 0.0
    for x, y in ((x1, y1), (x2, y2)):
        scale = np.maximum(np.maximum(np.abs(y), np.abs(ea)), np.abs(eb * x))
        scale = np.where(scale > 0, scale, 1.0)
        err = max(err, float(np.max(np.abs(ea + eb * x - y) / scale)) if len(y) else 0.0)
    equal = True
    if binary:
        equal = bool(np.all((ea + eb * x1 >= 0) == (y1 >= 0)) and np.all((ea + eb * x2 >= 0) == (y2 >= 0)))
    return EquivalentLinearModel(ea, eb, x1, x2, y1, y2, int((~keep).sum()), err, binary, equal)


def construct_equivalent_linear(dgp: PanelDGP, model: UtilityModel, draws: PanelDraws) -> EquivalentLinearModel:
    """eps_b = (Y2 - Y1) / (X2 - X1), eps_a = Y1 - eps_b X1 for the continuous outcome Y_t = phi + v_t.

    Draws with |X2 - X1| below 1e-10 are excluded and counted.  The relative
    reconstruction error is measured against the size of the summands.
    """
    if not model.is_binary:
        raise WrongFamilyError("the linear construction needs a scalar outcome model")
    x1, x2 = _split_scalar(draws)
    eta, shift = dgp.eta_and_shift(draws.alpha, False)
    y1 = _h_rows(model, draws.X1, eta)[0] + shift + draws.v1
    y2 = _h_rows(model, draws.X2, eta)[0] + shift + draws.v2
    return _linear_construction(x1, x2, y1, y2, binary=False)


def construct_equivalent_binary(dgp: PanelDGP, model: UtilityModel, draws: PanelDraws) -> EquivalentLinearModel:
    """Threshold version: the linear map built from delta_t reproduces every 1(delta_t >= 0)."""
    if not model.is_binary:
        raise WrongFamilyError("the binary construction needs a binary model")
    x1, x2 = _split_scalar(draws)
    eta, shift = dgp.eta_and_shift(draws.alpha, False)
    d1 = _h_rows(model, draws.X1, eta)[0] + shift + draws.v1
    d2 = _h_rows(model, draws.X2, eta)[0] + shift + draws.v2
    return _linear_construction(x1, x2, d1, d2, binary=True)


def equivalence_report(dgp: PanelDGP, model: UtilityModel, n: int, seed: int, binary: bool = False,
                       tol: float = 1e-12) -> DerivativeReport:
    """Per-draw reconstruction error of the equivalent linear model, against ``tol``.

    ``binary=True`` builds the threshold version and additionally requires
    every indicator to be reproduced (otherwise the error is reported as 1).
    """
    draws = simulate_draws(dgp, model, n, seed)
    eq = (construct_equivalent_binary if binary else construct_equivalent_linear)(dgp, model, draws)
    err = eq.max_rel_err if eq.indicators_equal else 1.0
    label = "thm11_equivalence" if binary else "thm10_equivalence"
    return DerivativeReport(label, np.zeros(1), [err], [0.0], tol_abs=tol, tol_rel=0.0,
                            metadata={"n_draws": n, "n_excluded": eq.n_excluded,
                                      "indicators_equal": eq.indicators_equal})


def default_pairs(center: float = 0.0, gaps=PAIR_GAPS) -> list[tuple[float, float]]:
    """Off-diagonal pairs (center - g/2, center + g/2)."""
    return [(center - g / 2, center + g / 2) for g in gaps]


def approach_pairs(center: float = 0.0, start: float = 1.0, halvings: int = 3) -> list[tuple[float, float]]:
    """Pairs whose gap halves ``halvings`` times, moving toward the diagonal."""
    return [(center - g / 2, center + g / 2) for g in start / 2.0 ** np.arange(halvings + 1)]


def _pair_nodes(dgp, integ, x1, x2):
    nodes = _nodes(dgp, integ)
    return nodes, nodes.points + dgp.alpha_mean_shift(x1, x2)


def thm10_gap(dgp: PanelDGP, model: UtilityModel, x_pairs, integ: IntegrationSpec,
              k_gap: float = 5.0, tol_abs: float = 1e-10) -> list[DerivativeReport]:
    """Difference-quotient versus derivative candidates for E[phi_x(X2, eps_2) | X].

    For each pair: A = E[phi(X2, eps_2) - phi(X1, eps_2) | X] / (X2 - X1) and
    B = E[phi_x(X2, eps_2) | X].  The ``thm10_gap`` report is in ``differ``
    mode (passes when |A - B| > k_gap se); ``thm10_remainder`` records
    E[phi(X2) - phi(X1) - phi_x(X2)(X2 - X1) | X].  When phi is linear in x,
    both reports switch to ``equal`` mode against zero with ``tol_abs``.
    """
    if model.family != QUADRATIC:
        raise WrongFamilyError("thm10_gap needs the QuadraticScalar family")
    linear = _is_linear_phi(dgp)
    reports = []
    for x1, x2 in x_pairs:
        x1a, x2a = np.atleast_1d(float(x1)), np.atleast_1d(float(x2))
        dx = float(x2 - x1)
        if abs(dx) < NEAR_DIAGONAL:
            raise ConfigurationError("thm10_gap needs X1 != X2")
        nodes, alpha = _pair_nodes(dgp, integ, x1a, x2a)
        # transitory v_t enters phi additively and cancels in phi(X2, eps_2) - phi(X1, eps_2)
        p2, g2 = model.phi_and_grad(x2a, alpha)
        p1, _ = model.phi_and_grad(x1a, alpha)
        a_per = (p2 - p1) / dx
        gap_per = a_per - g2
        rem_per = p2 - p1 - g2 * dx
        (a, a_se), (b, b_se) = nodes.expect(a_per), nodes.expect(g2)
        gap, gap_se = nodes.expect(gap_per)
        rem, rem_se = nodes.expect(rem_per)
        meta = {"A_difference_quotient": float(a), "A_se": float(a_se), "B_derivative": float(b),
                "B_se": float(b_se), "dx": dx, "expected_gap": float(np.mean(dgp.mu[2] + dgp.G[2] @ [0.5 * (x1 + x2)]) * (x1 - x2))}
        pair = np.array([x1, x2], float)
        if linear:
            reports.append(DerivativeReport("thm10_gap", pair, [gap], [0.0], [gap_se], tol_abs=tol_abs,
                                            tol_rel=0.0, metadata=meta))
        else:
            reports.append(DerivativeReport("thm10_gap", pair, [a], [b], [gap_se], mode=DIFFER,
                                            k_se=k_gap, metadata=meta))
        reports.append(DerivativeReport("thm10_remainder", pair, [rem], [0.0], [rem_se],
                                        mode="equal" if linear else DIFFER,
                                        tol_abs=tol_abs, tol_rel=0.0, k_se=k_gap, metadata={"dx": dx}))
    return reports


def _is_linear_phi(dgp: PanelDGP) -> bool:
    """eps_c identically zero: zero mean, no X dependence, no variance."""
    return dgp.mu[2] == 0.0 and not np.any(dgp.G[2]) and not np.any(dgp.Sigma[2])


def expected_difference_quotient(dgp: PanelDGP, model: UtilityModel, n: int, seed: int):
    """E[eps_b] of the equivalent linear model over the regressor law, with its standard error."""
    eq = construct_equivalent_linear(dgp, model, simulate_draws(dgp, model, n, seed))
    return float(np.mean(eq.eps_b)), float(np.std(eq.eps_b, ddof=1) / np.sqrt(len(eq.eps_b)))


def thm11_gap(dgp: PanelDGP, model: UtilityModel, x_pairs, integ: IntegrationSpec,
              bandwidth: float | None = None, k_gap: float = 5.0, tol_abs: float = 1e-10) -> list[DerivativeReport]:
    """Kernel-conditioned derivative objects of the true and equivalent binary models.

    With draws of eps given X: A = mean(eps_b_tilde K_b(delta_2)) and
    B = mean(delta_x(X2, eps_2) K_b(delta_2)), using the per-draw
    construction.  Metadata carries the side condition
    E[delta(X1, eps_2) + delta_x(X2, eps_2)(X2 - X1) | X, delta_2 = 0] and
    kernel density estimates at 0 of delta(X2, eps_2) and of the
    equivalent model's index.
    """
    if not model.is_binary:
        raise WrongFamilyError("thm11_gap needs a binary model")
    reports = []
    for x1, x2 in x_pairs:
        x1a, x2a = np.atleast_1d(float(x1)), np.atleast_1d(float(x2))
        dx = float(x2 - x1)
        if abs(dx) < NEAR_DIAGONAL:
            raise ConfigurationError("thm11_gap needs X1 != X2")
        dr = simulate_draws(dgp, model, integ.n_draws, integ.seed, (x1a, x2a))
        eq = construct_equivalent_binary(dgp, model, dr)
        eta, shift = dgp.eta_and_shift(dr.alpha, False)
        h2, g2 = model.h_and_grad(x2a, eta)
        h12, _ = model.h_and_grad(x1a, eta)
        d2 = h2 + shift + dr.v2
        b = silverman_bandwidth(d2) if bandwidth is None else float(bandwidth)
        k = gaussian_kernel(d2, b)
        a_per = eq.eps_b * k
        b_per = g2[:, 0] * k
        gap_per = a_per - b_per
        n = len(k)
        se = lambda z: float(np.std(z, ddof=1) / np.sqrt(n))  # noqa: E731
        side_per = (h12 + shift + dr.v2 + g2[:, 0] * dx) * k
        tilde_index = eq.eps_a + eq.eps_b * x2
        meta = {
            "bandwidth": b, "dx": dx, "A": float(a_per.mean()), "B": float(b_per.mean()),
            "side_condition": float(side_per.mean() / k.mean()),
            "side_condition_se": se(side_per) / float(k.mean()),
            "density_true": float(k.mean()),
            "density_equivalent": float(gaussian_kernel(tilde_index, b).mean()),
            "indicators_equal": eq.indicators_equal, "max_rel_err": eq.max_rel_err,
        }
        pair = np.array([x1, x2], float)
        linear = np.allclose(gap_per, 0.0, atol=1e-12 * max(1.0, float(np.max(np.abs(a_per)))))
        if linear:
            reports.append(DerivativeReport("thm11_gap", pair, [gap_per.mean()], [0.0], [se(gap_per)],
                                            tol_abs=tol_abs, tol_rel=0.0, metadata=meta))
        else:
            reports.append(DerivativeReport("thm11_gap", pair, [a_per.mean()], [b_per.mean()],
                                            [se(gap_per)], mode=DIFFER, k_se=k_gap, metadata=meta))
    return reports


def dgp_from_dict(doc: dict) -> PanelDGP:
    from .distributions import eta_from_dict, noise_from_dict

    try:
        p = int(doc.get("p", 1))
        x_doc = doc["x_law"]
        kind = x_doc.get("kind")
        if kind == "gaussian_pair":
            x_law = gaussian_x_law(p, x_doc.get("mean", 0.0), x_doc.get("sd", 1.0), x_doc.get("rho", 0.5))
        elif kind == "uniform_square":
            x_law = uniform_x_law(p, x_doc.get("lo", -1.0), x_doc.get("hi", 1.0))
        else:
            x_law = eta_from_dict(x_doc)
        return PanelDGP(
            x_law=x_law,
            mu=doc["mu"],
            G=doc["G"],
            Sigma=doc["Sigma"],
            noise=noise_from_dict(doc["noise"]),
            eta_mode=doc.get("eta_mode", ALPHA),
            beta0=doc.get("beta0"),
            alpha_shift=doc.get("alpha_shift"),
            transitory=bool(doc.get("transitory", True)),
        )
    except KeyError as exc:
        raise ConfigurationError(f"panel DGP: missing field {exc}") from exc
