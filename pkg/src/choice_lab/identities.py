"""Cross-section derivative identities for threshold-crossing and multinomial models.

Each ``verify_*`` / ``*_check`` function computes a numerical derivative of a
choice probability (the left-hand side) and a closed-form or integrated
expression for it (the right-hand side), and returns ``DerivativeReport``
objects.  The left-hand side can be Monte Carlo backed; the right-hand side
takes its own ``rhs_integ`` so both sides can use independent routes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .choiceprob import (
    IntegrationSpec,
    binary_choice_prob,
    choice_prob,
    eta_nodes,
    mc_draws,
    noise_draws,
    num_grad_prob,
    num_hessian_prob,
)
from .distributions import (
    EtaShifted,
    Heterogeneity,
    IIDGumbel,
    MultivariateNormal,
    hermite_rule,
)
from .errors import ConfigurationError, WrongFamilyError
from .model import BINARY_RC, INDEX, LINEAR_RC, UtilityModel
from .report import (
    STATUS_PRECONDITION,
    DerivativeReport,
    combined_se,
)
from . import rng as rngmod

BANDWIDTH_CONSTANT = 1.06
GRID_POINTS = 5
GRID_HALF_WIDTH = 1.5


def default_grid(shape, points: int = GRID_POINTS, half_width: float = GRID_HALF_WIDTH) -> list[np.ndarray]:
    """Tensor grid with ``points`` values per coordinate in [-half_width, half_width]."""
    shape = tuple(np.atleast_1d(shape))
    axis = np.linspace(-half_width, half_width, points)
    size = int(np.prod(shape))
    mesh = np.meshgrid(*([axis] * size), indexing="ij")
    flat = np.stack([m.ravel() for m in mesh], axis=1)
    return [row.reshape(shape) for row in flat]


def silverman_bandwidth(values: np.ndarray, c: float = BANDWIDTH_CONSTANT) -> float:
    values = np.asarray(values, float)
    return c * float(np.std(values, ddof=1)) * values.size ** (-0.2)


def gaussian_kernel(t, b: float) -> np.ndarray:
    t = np.asarray(t, float) / b
    return np.exp(-0.5 * t * t) / (np.sqrt(2.0 * np.pi) * b)


def _require_binary(model: UtilityModel):
    if not model.is_binary:
        raise WrongFamilyError(f"{model.family} with J={model.J} utilities is not a binary model")


def _noise_eta(dists: Heterogeneity, eta):
    return eta if dists.noise.depends_on_eta else None


# -------------------------------------------------------------- binary RHS
@dataclass(frozen=True)
class ThresholdRHS:
    """Both evaluations of E[d_x delta | delta = 0] f_delta(0).

    ``analytic`` integrates f_v(-h | eta) d_x h over eta; ``kernel`` averages
    d_x delta * K_b(delta) over joint draws of (eta, v).
    """

    analytic: np.ndarray
    analytic_se: np.ndarray
    kernel: np.ndarray
    kernel_se: np.ndarray
    bandwidth: float


def analytic_rhs(model: UtilityModel, dists: Heterogeneity, x, integ: IntegrationSpec, label: str = "eta"):
    """E_eta[d_x h(x, eta) f_v(-h(x, eta) | eta)] with its standard error."""
    _require_binary(model)
    nodes = eta_nodes(dists.eta, integ, label)
    h, g = model.h_and_grad(x, nodes.points)
    dens = dists.noise.density(-h, _noise_eta(dists, nodes.points))
    per = g * dens.reshape((-1,) + (1,) * (g.ndim - 1))
    return nodes.expect(per)


def kernel_rhs(
    model: UtilityModel,
    dists: Heterogeneity,
    x,
    n_draws: int,
    seed: int,
    bandwidth: float | None = None,
    label: str = "kernel",
):
    """Mean of d_x delta * K_b(delta) over joint (eta, v) draws.

    Returns ``(value, se, bandwidth)``; the default bandwidth is
    1.06 * sd(delta) * n^(-1/5).
    """
    _require_binary(model)
    if bandwidth is not None and bandwidth <= 0:
        raise ConfigurationError(f"bandwidth must be positive, got {bandwidth}")
    eta = mc_draws(dists.eta, n_draws, seed, f"{label}/eta")
    v = noise_draws(dists.noise, eta, seed, f"{label}/v")
    delta, g = model.delta_and_grad(x, eta, v)
    b = silverman_bandwidth(delta) if bandwidth is None else float(bandwidth)
    per = g * gaussian_kernel(delta, b).reshape((-1,) + (1,) * (g.ndim - 1))
    se = per.std(axis=0, ddof=1) / np.sqrt(per.shape[0])
    return per.mean(axis=0), se, b


def kernel_smoothed_rhs(
    model: UtilityModel,
    dists: Heterogeneity,
    x,
    integ: IntegrationSpec,
    bandwidth: float,
    nodes: int = 64,
) -> np.ndarray:
    """Exact expectation of the kernel path at bandwidth ``b`` (no sampling noise).

    E[d_x h K_b(h + v)] = E_eta[d_x h E_z f_v(-h + b z | eta)], z ~ N(0, 1).
    Used to isolate the O(b^2) smoothing bias of the kernel path.
    """
    if bandwidth <= 0:
        raise ConfigurationError(f"bandwidth must be positive, got {bandwidth}")
    z, w = hermite_rule(nodes)
    pts = eta_nodes(dists.eta, integ)
    h, g = model.h_and_grad(x, pts.points)
    eta = _noise_eta(dists, pts.points)
    dens = np.zeros_like(h)
    for zk, wk in zip(z, w):
        dens += wk * dists.noise.density(-h + bandwidth * zk, eta)
    per = g * dens.reshape((-1,) + (1,) * (g.ndim - 1))
    return pts.expect(per)[0]


def thm1_rhs(
    model: UtilityModel,
    dists: Heterogeneity,
    x,
    integ: IntegrationSpec,
    cond_bandwidth: float | None = None,
) -> ThresholdRHS:
    """Density-weighted conditional mean of d_x delta on the threshold delta = 0."""
    if cond_bandwidth is not None and cond_bandwidth <= 0:
        raise ConfigurationError(f"bandwidth must be positive, got {cond_bandwidth}")
    a, a_se = analytic_rhs(model, dists, x, integ) if model.additive else (None, None)
    k, k_se, b = kernel_rhs(model, dists, x, integ.n_draws, integ.seed, cond_bandwidth)
    if a is None:
        a, a_se = k, k_se
    return ThresholdRHS(np.asarray(a), np.asarray(a_se), k, k_se, b)


def thm2_rhs(model: UtilityModel, dists: Heterogeneity, x, integ: IntegrationSpec) -> np.ndarray:
    """E_eta[d_x h(x, eta) f_v(-h(x, eta) | eta)]: the density-weighted average derivative."""
    return analytic_rhs(model, dists, x, integ)[0]


def _binary_lhs(model, dists, x, integ, steps=None):
    fn = lambda z: binary_choice_prob(model, dists, z, integ)  # noqa: E731
    return num_grad_prob(fn, model.check_x(x), steps=steps, mc=integ.is_mc or None)


def _verify_binary(label, model, dists, x_grid, integ, rhs_integ, tol_rel, path, bandwidth):
    _require_binary(model)
    rhs_integ = rhs_integ or integ
    grid = x_grid if x_grid is not None else default_grid(model.x_shape)
    reports = []
    for x in grid:
        lhs = _binary_lhs(model, dists, x, integ)
        if path == "kernel":
            rhs, rhs_se, b = kernel_rhs(model, dists, x, rhs_integ.n_draws, rhs_integ.seed, bandwidth)
            meta = {"bandwidth": b}
        else:
            rhs, rhs_se = analytic_rhs(model, dists, x, rhs_integ)
            meta = {}
        reports.append(DerivativeReport(
            label, x, lhs.value, rhs, combined_se(lhs.mc_se, rhs_se), tol_rel=tol_rel,
            metadata={"fd_step": lhs.step.tolist(), "fd_err_est": lhs.err_est.tolist(), **meta},
        ))
    return reports


def verify_thm1(
    model: UtilityModel,
    dists: Heterogeneity,
    x_grid: Sequence | None,
    integ: IntegrationSpec,
    rhs_integ: IntegrationSpec | None = None,
    tol_rel: float = 0.01,
    path: str = "analytic",
    bandwidth: float | None = None,
) -> list[DerivativeReport]:
    """d_x P(x) against the threshold-conditioned RHS, by the analytic or kernel path."""
    if path not in ("analytic", "kernel"):
        raise ConfigurationError(f"unknown RHS path {path!r}")
    return _verify_binary("thm1", model, dists, x_grid, integ, rhs_integ, tol_rel, path, bandwidth)


def verify_thm2(
    model: UtilityModel,
    dists: Heterogeneity,
    x_grid: Sequence | None,
    integ: IntegrationSpec,
    rhs_integ: IntegrationSpec | None = None,
    tol_rel: float = 0.01,
) -> list[DerivativeReport]:
    """d_x P(x) against E[d_x h f_v(-h | eta)] on a grid."""
    return _verify_binary("thm2", model, dists, x_grid, integ, rhs_integ, tol_rel, "analytic", None)


# ----------------------------------------------------------- at the origin
def _origin_precondition(model: UtilityModel, dists: Heterogeneity) -> str:
    if model.family != BINARY_RC:
        return f"needs the BinaryRC family, got {model.family}"
    if dists.noise.depends_on_eta:
        return "v depends on eta"
    return ""


def ratio_with_se(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """Ratio of two means and its delta-method standard error from per-draw values."""
    a, b = float(np.mean(num)), float(np.mean(den))
    r = a / b
    infl = (num - r * den) / b
    return r, float(np.std(infl, ddof=1) / np.sqrt(len(infl)))


def cor3_check(
    model: UtilityModel,
    dists: Heterogeneity,
    integ: IntegrationSpec,
    ref: int | None = None,
    tol_rel: float = 0.01,
) -> list[DerivativeReport]:
    """d_x P(0) = f_v(0) E[eta], and ratios d_j P(0) / d_ref P(0) = E[eta_j] / E[eta_ref].

    ``ref`` defaults to the last component.  Ratios whose reference mean is
    zero are reported as skipped.
    """
    x0 = np.zeros(model.x_shape)
    why = _origin_precondition(model, dists)
    if why:
        return [DerivativeReport("cor3", x0, np.zeros(model.x_shape), np.zeros(model.x_shape),
                                 status=STATUS_PRECONDITION, note=why)]
    lhs = _binary_lhs(model, dists, x0, integ)
    mean = dists.eta.mean()
    f0 = float(dists.noise.density(np.zeros(1))[0])
    reports = [DerivativeReport("cor3", x0, lhs.value, f0 * mean, lhs.mc_se, tol_rel=tol_rel)]
    d = model.dims.d
    ref = d - 1 if ref is None else int(ref)
    if d < 2:
        return reports
    others = [j for j in range(d) if j != ref]
    if mean[ref] == 0.0:
        reports.append(DerivativeReport("cor3_ratio", x0, np.zeros(len(others)), np.zeros(len(others)),
                                         status="skipped", note="reference mean is zero"))
        return reports
    vals, ses = [], []
    for j in others:
        if lhs.samples is not None:
            r, se = ratio_with_se(lhs.samples[:, j], lhs.samples[:, ref])
        else:
            r, se = lhs.value[j] / lhs.value[ref], 0.0
        vals.append(r)
        ses.append(se)
    reports.append(DerivativeReport(
        "cor3_ratio", x0, vals, mean[others] / mean[ref], ses, tol_rel=tol_rel,
        metadata={"reference": ref, "numerators": others},
    ))
    return reports


def hessian_check(
    model: UtilityModel, dists: Heterogeneity, integ: IntegrationSpec, tol_rel: float = 0.02
) -> DerivativeReport:
    """Hessian of P at 0 against -E[eta eta'] f_vv(0)."""
    x0 = np.zeros(model.x_shape)
    why = _origin_precondition(model, dists)
    if why:
        z = np.zeros(model.x_shape * 2)
        return DerivativeReport("hessian", x0, z, z, status=STATUS_PRECONDITION, note=why)
    fn = lambda z: binary_choice_prob(model, dists, z, integ)  # noqa: E731
    lhs = num_hessian_prob(fn, x0, mc=integ.is_mc or None)
    fvv = float(dists.noise.ddensity(np.zeros(1))[0])
    rhs = -dists.eta.second_moment() * fvv
    # the rounding floor of a second difference behaves like an extra standard error
    se = combined_se(lhs.mc_se, lhs.err_est / 3.0)
    return DerivativeReport("hessian", x0, lhs.value, rhs, se, tol_rel=tol_rel,
                            metadata={"fvv0": fvv, "fd_step": lhs.step.tolist()})


# --------------------------------------------------------------- index
def index_check(
    model: UtilityModel,
    dists: Heterogeneity,
    x_grid: Sequence | None,
    integ: IntegrationSpec,
    tol_rel: float = 0.01,
    max_angle: float = 1e-3,
) -> list[DerivativeReport]:
    """d_x P(x) = beta0 tau_u(beta0'x), where tau(u) is P at index value u.

    tau is evaluated by moving x along beta0 / |beta0|^2 so that the index
    shifts by exactly ``s``; tau_u is the central difference in ``s``.
    Each grid point gives a componentwise report and an angle report
    (angle between d_x P and beta0, against ``max_angle``).
    """
    if model.family != INDEX:
        raise WrongFamilyError(f"index_check needs the Index family, got {model.family}")
    beta0 = np.asarray(model.params["beta0"], float)
    direction = beta0 / float(beta0 @ beta0)
    grid = x_grid if x_grid is not None else default_grid(model.x_shape)
    fn = lambda z: binary_choice_prob(model, dists, z, integ)  # noqa: E731
    reports = []
    for x in grid:
        x = model.check_x(x)
        lhs = num_grad_prob(fn, x, mc=integ.is_mc or None)
        tau = num_grad_prob(lambda s: fn(x + s[0] * direction), np.zeros(1), mc=integ.is_mc or None)
        rhs = beta0 * float(tau.value[0])
        rhs_se = np.abs(beta0) * float(tau.mc_se[0])
        reports.append(DerivativeReport("index", x, lhs.value, rhs, combined_se(lhs.mc_se, rhs_se),
                                        tol_rel=tol_rel, metadata={"tau_u": float(tau.value[0])}))
        norm = np.linalg.norm(lhs.value)
        if norm == 0.0:
            angle = 0.0
        else:
            cos = abs(float(lhs.value @ beta0)) / (norm * np.linalg.norm(beta0))
            angle = float(np.arccos(min(1.0, cos)))
        reports.append(DerivativeReport("index_angle", x, [angle], [0.0], tol_abs=max_angle, tol_rel=0.0))
    return reports


# ---------------------------------------------------------- multinomial
def multinomial_rhs(model: UtilityModel, dists: Heterogeneity, x, integ: IntegrationSpec, label: str = "eta"):
    """E[sum_k p_jk(u | eta) d_x u_k] for every j, with its standard error.

    Returns ``(value, se, logit_gap)``; ``logit_gap`` is the largest
    difference from the logit form p_j (d_x u_j - sum_k p_k d_x u_k) when the
    disturbances are i.i.d. Gumbel, else ``None``.
    """
    if not model.is_multinomial:
        raise WrongFamilyError("multinomial_rhs needs a multinomial model")
    nodes = eta_nodes(dists.eta, integ, label)
    u, du = model.u_and_grad(x, nodes.points)
    eta = _noise_eta(dists, nodes.points)
    jac = dists.noise.kernel_jacobian(u, eta)
    n, J = u.shape
    flat = du.reshape(n, J, -1)
    per = np.einsum("njk,nkp->njp", jac, flat)
    logit_gap = None
    if isinstance(dists.noise, IIDGumbel):
        p = dists.noise.kernel(u)
        avg = np.einsum("nk,nkp->np", p, flat)
        alt = p[:, :, None] * (flat - avg[:, None, :])
        logit_gap = float(np.max(np.abs(alt - per)))
    mean, se = nodes.expect(per)
    shape = (J,) + model.x_shape
    return mean.reshape(shape), se.reshape(shape), logit_gap


def _multinomial_lhs(model, dists, x, integ):
    fn = lambda z: choice_prob(model, dists, z, integ)  # noqa: E731
    return num_grad_prob(fn, model.check_x(x), mc=integ.is_mc or None)


def thm4_check(
    model: UtilityModel,
    dists: Heterogeneity,
    x_bundle,
    integ: IntegrationSpec,
    rhs_integ: IntegrationSpec | None = None,
    tol_rel: float = 0.01,
) -> DerivativeReport:
    """d_x P_j(x) in every regressor slot against E[sum_k p_jk d_x u_k]."""
    rhs_integ = rhs_integ or integ
    lhs = _multinomial_lhs(model, dists, x_bundle, integ)
    rhs, rhs_se, gap = multinomial_rhs(model, dists, x_bundle, rhs_integ)
    meta = {} if gap is None else {"logit_form_gap": gap}
    return DerivativeReport("thm4", np.ravel(x_bundle), lhs.value, rhs,
                            combined_se(lhs.mc_se, rhs_se), tol_rel=tol_rel, metadata=meta)


def berry_deriv_check(
    model: UtilityModel,
    dists: Heterogeneity,
    x_bundle,
    integ: IntegrationSpec,
    rhs_integ: IntegrationSpec | None = None,
    tol_rel: float = 0.01,
) -> list[DerivativeReport]:
    """d_{x^k} P_j = E[p_jk(u | eta) eta] for choice-specific linear utilities.

    At the origin all utilities equal the intercepts whatever eta is, so when
    v does not depend on eta the RHS collapses to p_jk(xi) E[eta]; that
    scalar-multiple form is reported separately as ``berry_origin``.
    """
    if model.family != LINEAR_RC:
        raise WrongFamilyError(f"berry_deriv_check needs LinearRC, got {model.family}")
    rhs_integ = rhs_integ or integ
    x = model.check_x(x_bundle)
    lhs = _multinomial_lhs(model, dists, x, integ)
    nodes = eta_nodes(dists.eta, rhs_integ)
    u = model.u(x, nodes.points)
    jac = dists.noise.kernel_jacobian(u, _noise_eta(dists, nodes.points))
    per = jac[:, :, :, None] * nodes.points[:, None, None, :]
    rhs, rhs_se = nodes.expect(per)
    reports = [DerivativeReport("berry", x.ravel(), lhs.value, rhs, combined_se(lhs.mc_se, rhs_se),
                                tol_rel=tol_rel)]
    if not np.any(x) and not dists.noise.depends_on_eta:
        xi = np.asarray(model.params.get("xi", np.zeros(model.J)), float)
        pjk = dists.noise.kernel_jacobian(xi[None, :])[0]
        origin = pjk[:, :, None] * dists.eta.mean()[None, None, :]
        reports.append(DerivativeReport("berry_origin", x.ravel(), lhs.value, origin, lhs.mc_se,
                                        tol_rel=tol_rel, metadata={"p_jk": pjk.tolist()}))
    return reports


# ------------------------------------------------- weighted average effect
def weighted_avg_derivative(
    model: UtilityModel,
    dists: Heterogeneity,
    weight_fn: Callable[[np.ndarray], np.ndarray],
    x_law,
    integ: IntegrationSpec,
    n_x: int = 2000,
    n_joint: int | None = None,
    tol_rel: float = 0.01,
) -> DerivativeReport:
    """E[w(X) d_x P(X)] against E[w(X) f_v(-h(X, eta) | eta) d_x h(X, eta)].

    The left side averages numerical derivatives (eta integrated by ``integ``)
    over ``n_x`` draws of X from ``x_law``; the right side is a joint Monte
    Carlo average over ``n_joint`` independent draws of (X, eta).
    ``weight_fn`` maps an ``(n, d)`` array of X rows to ``n`` weights.
    """
    _require_binary(model)
    seed = integ.seed
    xs = mc_draws(x_law, n_x, seed, "wavg/x")
    w = np.asarray(weight_fn(xs), float)
    nodes = eta_nodes(dists.eta, integ, "wavg/eta")
    eta_v = _noise_eta(dists, nodes.points)
    steps = 1e-3 * np.maximum(1.0, np.abs(xs)) if integ.is_mc else 1e-5 * np.maximum(1.0, np.abs(xs))
    d = xs.shape[1]
    grads = np.zeros((n_x, d))
    for i in range(n_x):
        if w[i] == 0.0:
            continue
        for j in range(d):
            e = np.zeros(d)
            e[j] = steps[i, j]
            up = 1.0 - dists.noise.cdf(-model.h(xs[i] + e, nodes.points), eta_v)
            dn = 1.0 - dists.noise.cdf(-model.h(xs[i] - e, nodes.points), eta_v)
            grads[i, j] = nodes.expect(up - dn)[0] / (2 * steps[i, j])
    per_lhs = w[:, None] * grads
    lhs = per_lhs.mean(axis=0)
    lhs_se = per_lhs.std(axis=0, ddof=1) / np.sqrt(n_x)

    n_joint = n_joint or integ.n_draws
    xj = mc_draws(x_law, n_joint, seed, "wavg/xjoint")
    ej = mc_draws(dists.eta, n_joint, seed, "wavg/etajoint")
    wj = np.asarray(weight_fn(xj), float)
    per_rhs = np.zeros((n_joint, d))
    for start in range(0, n_joint, rngmod.BLOCK_SIZE):
        sl = slice(start, start + rngmod.BLOCK_SIZE)
        if model.family == BINARY_RC:
            h = np.sum(ej[sl] * xj[sl], axis=1)
            g = ej[sl]
        else:
            hs = [model.h_and_grad(xr, er[None, :]) for xr, er in zip(xj[sl], ej[sl])]
            h = np.array([a[0] for a, _ in hs])
            g = np.array([b[0] for _, b in hs])
        dens = dists.noise.density(-h, ej[sl] if dists.noise.depends_on_eta else None)
        per_rhs[sl] = wj[sl, None] * dens[:, None] * g.reshape(len(h), -1)
    rhs = per_rhs.mean(axis=0)
    rhs_se = per_rhs.std(axis=0, ddof=1) / np.sqrt(n_joint)
    return DerivativeReport("wavg", np.zeros(d), lhs, rhs, combined_se(lhs_se, rhs_se), tol_rel=tol_rel,
                            metadata={"n_x": n_x, "n_joint": n_joint})
