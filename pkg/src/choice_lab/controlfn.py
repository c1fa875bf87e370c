"""Triangular designs with an observed control variable.

The first stage is ``X = m(Z) + w`` with ``m(Z) = Pi Z`` or ``tanh(Pi Z)``,
the instrument ``Z`` independent of ``w``, and the heterogeneity depends on
the control only: ``eta | w ~ N(mu + Gamma w, Sigma)``.  Optionally the
disturbance is shifted by ``v_shift_w @ w`` as well.  Conditional on ``w``
the regressors are then independent of ``(eta, v)``.

Regressors are handled as flat vectors of length ``p = prod(model.x_shape)``;
``w`` has the same length.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .choiceprob import (
    IntegrationSpec,
    Nodes,
    ProbResult,
    default_steps,
    deriv_integrand_at,
    eta_nodes,
    mc_draws,
    num_grad_prob,
    probs_at,
)
from .distributions import (
    EtaDist,
    Heterogeneity,
    MultivariateNormal,
    NoiseDist,
    UniformBox,
)
from .errors import ConfigurationError, PreconditionError, UnsupportedError
from .identities import analytic_rhs, multinomial_rhs
from .model import UtilityModel
from .report import DIFFER, STATUS_PRECONDITION, DerivativeReport, combined_se

LINEAR = "linear"
TANH = "tanh"
NODE_BUDGET = 2_000_000


@dataclass(frozen=True, eq=False)
class TriangularDGP:
    z_law: EtaDist
    Pi: np.ndarray
    w_law: EtaDist
    mu: np.ndarray
    Gamma: np.ndarray
    Sigma: np.ndarray
    noise: NoiseDist
    first_stage: str = LINEAR
    v_shift_w: np.ndarray | None = None

    def __post_init__(self):
        Pi = np.atleast_2d(np.asarray(self.Pi, float))
        mu = np.atleast_1d(np.asarray(self.mu, float))
        Gamma = np.atleast_2d(np.asarray(self.Gamma, float))
        Sigma = np.atleast_2d(np.asarray(self.Sigma, float))
        p = self.w_law.dim
        if Pi.shape != (p, self.z_law.dim):
            raise ConfigurationError(f"Pi must be {p}x{self.z_law.dim}, got {Pi.shape}")
        if Gamma.shape != (mu.size, p):
            raise ConfigurationError(f"Gamma must be {mu.size}x{p}, got {Gamma.shape}")
        if self.first_stage not in (LINEAR, TANH):
            raise ConfigurationError(f"unknown first stage {self.first_stage!r}")
        object.__setattr__(self, "Pi", Pi)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Gamma", Gamma)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "_eta0", MultivariateNormal(mu, Sigma))
        if self.v_shift_w is not None:
            object.__setattr__(self, "v_shift_w", np.asarray(self.v_shift_w, float))

    @property
    def p(self) -> int:
        return self.w_law.dim

    @property
    def eta_base(self) -> MultivariateNormal:
        """Law of eta at w = 0."""
        return self._eta0

    def first_stage_mean(self, z: np.ndarray) -> np.ndarray:
        lin = np.atleast_2d(z) @ self.Pi.T
        return np.tanh(lin) if self.first_stage == TANH else lin

    def eta_given_w(self, w) -> MultivariateNormal:
        return MultivariateNormal(self.mu + self.Gamma @ np.asarray(w, float).ravel(), self.Sigma)

    def v_shift(self, w: np.ndarray, multinomial: bool):
        """Location shift of v for each row of ``w``: ``(n,)`` or ``(n, J)``."""
        w = np.atleast_2d(w)
        if self.v_shift_w is None:
            return np.zeros(len(w)) if not multinomial else 0.0
        shift = self.v_shift_w
        if multinomial:
            if shift.ndim != 2:
                raise ConfigurationError("multinomial v_shift_w must be a (J, p) matrix")
            return w @ shift.T
        if shift.ndim != 1:
            raise ConfigurationError("binary v_shift_w must be a length-p vector")
        return w @ shift

    def simulate(self, n: int, seed: int):
        """Joint draws ``(Z, w, X, eta)`` from independent keyed streams."""
        z = mc_draws(self.z_law, n, seed, "cf/z")
        w = mc_draws(self.w_law, n, seed, "cf/w")
        base = mc_draws(self._eta0, n, seed, "cf/eta")
        x = self.first_stage_mean(z) + w
        return z, w, x, base + w @ self.Gamma.T

    def implied_eta(self) -> MultivariateNormal:
        """Marginal law of eta after integrating w out (exact when w is Gaussian)."""
        mw = self.w_law.mean()
        vw = self.w_law.covariance()
        return MultivariateNormal(self.mu + self.Gamma @ mw, self.Sigma + self.Gamma @ vw @ self.Gamma.T)


def _flat(model: UtilityModel, x) -> np.ndarray:
    return model.check_x(x).ravel()


# ----------------------------------------------------- conditional support
def in_conditional_support(dgp: TriangularDGP, x, ws) -> np.ndarray:
    """Whether each row of ``ws`` lies in the support of w given X = x."""
    ws = np.atleast_2d(np.asarray(ws, float))
    ok = np.ones(len(ws), bool)
    if isinstance(dgp.w_law, UniformBox):
        ok &= dgp.w_law.contains(ws)
    target = np.asarray(x, float).ravel()[None, :] - ws
    if dgp.first_stage == TANH:
        inside = np.all(np.abs(target) < 1.0, axis=1)
        ok &= inside
        target = np.arctanh(np.clip(target, -1 + 1e-15, 1 - 1e-15))
    if isinstance(dgp.z_law, UniformBox):
        if dgp.Pi.shape[0] != dgp.Pi.shape[1]:
            raise UnsupportedError("support of w given X needs a square Pi when Z is bounded")
        z = np.linalg.solve(dgp.Pi, target.T).T
        ok &= dgp.z_law.contains(z)
    elif np.linalg.matrix_rank(dgp.Pi) < dgp.p:
        raise UnsupportedError("support of w given X needs Pi of full row rank")
    return ok


def common_support_at(dgp: TriangularDGP, x, n_probe: int = 4096, seed: int = 0) -> bool:
    """Range check: every probe draw of w lies in the support of w given X = x."""
    probe = mc_draws(dgp.w_law, n_probe, seed, "cf/probe")
    if isinstance(dgp.w_law, UniformBox):
        corners = np.array(np.meshgrid(*zip(dgp.w_law.lo, dgp.w_law.hi), indexing="ij")).reshape(dgp.p, -1).T
        probe = np.vstack([probe, corners])
    return bool(np.all(in_conditional_support(dgp, x, probe)))


# -------------------------------------------------- conditional objects
def _cond_nodes(dgp: TriangularDGP, integ: IntegrationSpec) -> Nodes:
    return eta_nodes(dgp.eta_base, integ, "cf/eta")


def _batched(dgp, model, x, ws, nodes, fn):
    """Apply ``fn(x, eta, shift)`` for every (w, node) pair and integrate out the nodes."""
    ws = np.atleast_2d(ws)
    chunk = max(1, NODE_BUDGET // nodes.n)
    vals, ses = [], []
    for start in range(0, len(ws), chunk):
        wc = ws[start : start + chunk]
        k = len(wc)
        eta = (nodes.points[None, :, :] + (wc @ dgp.Gamma.T)[:, None, :]).reshape(k * nodes.n, -1)
        shift = dgp.v_shift(wc, model.is_multinomial)
        shift = np.repeat(np.asarray(shift), nodes.n, axis=0) if np.ndim(shift) else shift
        per = fn(x, eta, shift)
        per = per.reshape((k, nodes.n) + per.shape[1:])
        mean, se = zip(*(nodes.expect(per[i]) for i in range(k)))
        vals.append(np.array(mean))
        ses.append(np.array(se))
    return np.concatenate(vals), np.concatenate(ses)


def cond_prob_xw(dgp: TriangularDGP, model: UtilityModel, x, w, integ: IntegrationSpec) -> ProbResult:
    """P_j(x, w): choice probabilities mixed over the law of eta given w."""
    nodes = _cond_nodes(dgp, integ)
    w = np.atleast_2d(np.asarray(w, float))
    eta = nodes.points + w @ dgp.Gamma.T
    shift = dgp.v_shift(w, model.is_multinomial)
    shift = shift[0] if np.ndim(shift) else shift
    return ProbResult.from_nodes(nodes, probs_at(model, dgp.noise, x, eta, shift))


def cond_rhs_xw(dgp: TriangularDGP, model: UtilityModel, x, w, integ: IntegrationSpec):
    """Integral of the derivative integrand over the law of eta given w, with its standard error."""
    nodes = _cond_nodes(dgp, integ)
    val, se = _batched(dgp, model, x, w, nodes,
                       lambda xx, eta, s: deriv_integrand_at(model, dgp.noise, xx, eta, s))
    return val[0], se[0]


def cond_deriv_batch(dgp: TriangularDGP, model: UtilityModel, x, ws, integ: IntegrationSpec) -> np.ndarray:
    """Central-difference d_x P_j(x, w) for every row of ``ws`` at once (common draws)."""
    x = model.check_x(x)
    nodes = _cond_nodes(dgp, integ)
    steps = default_steps(x, integ.is_mc)
    fn = lambda xx, eta, s: probs_at(model, dgp.noise, xx, eta, s)  # noqa: E731
    out = None
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = steps[idx]
        up, _ = _batched(dgp, model, x + e, ws, nodes, fn)
        dn, _ = _batched(dgp, model, x - e, ws, nodes, fn)
        d = (up - dn) / (2 * steps[idx])
        if out is None:
            out = np.zeros(d.shape + x.shape)
        out[(...,) + idx] = d
    return out


def verify_thm5(
    dgp: TriangularDGP,
    model: UtilityModel,
    x_grid,
    w_grid,
    integ: IntegrationSpec,
    rhs_integ: IntegrationSpec | None = None,
    tol_rel: float = 0.01,
) -> list[DerivativeReport]:
    """d_x P_j(x, w) against the integrand averaged over eta given w, on an (x, w) grid."""
    rhs_integ = rhs_integ or integ
    reports = []
    for x in x_grid:
        x = model.check_x(x)
        for w in w_grid:
            w = np.atleast_1d(np.asarray(w, float))
            lhs = num_grad_prob(lambda z: cond_prob_xw(dgp, model, z, w, integ), x, mc=integ.is_mc or None)
            rhs, rhs_se = cond_rhs_xw(dgp, model, x, w, rhs_integ)
            reports.append(DerivativeReport(
                "thm5", np.concatenate([x.ravel(), w]), lhs.value, rhs,
                combined_se(lhs.mc_se, rhs_se), tol_rel=tol_rel, metadata={"w": w.tolist()},
            ))
    return reports


def _w_sample(dgp: TriangularDGP, n_w: int, seed: int) -> np.ndarray:
    return mc_draws(dgp.w_law, n_w, seed, "cf/wavg")


def unconditional_rhs(
    dgp: TriangularDGP, model: UtilityModel, x, integ: IntegrationSpec, w_nodes: int = 20
):
    """RHS of the averaged identity: derivative integrand under the marginal law of eta.

    Gaussian w without a w-shift in v gives a Gaussian marginal for eta, which
    is integrated directly.  Otherwise the conditional RHS is averaged over
    quadrature nodes of w.  Returns ``(value, se, route)``.
    """
    if isinstance(dgp.w_law, MultivariateNormal) and dgp.v_shift_w is None:
        het = Heterogeneity(dgp.implied_eta(), dgp.noise)
        if model.is_binary:
            val, se = analytic_rhs(model, het, x, integ, "cf/marginal")
        else:
            val, se, _ = multinomial_rhs(model, het, x, integ, "cf/marginal")
        return val, se, "implied_gaussian"
    pts, wts = dgp.w_law.quadrature(w_nodes)
    nodes = _cond_nodes(dgp, integ)
    vals, ses = _batched(dgp, model, x, pts, nodes,
                         lambda xx, eta, s: deriv_integrand_at(model, dgp.noise, xx, eta, s))
    wts = wts.reshape((-1,) + (1,) * (vals.ndim - 1))
    return np.sum(wts * vals, axis=0), np.sqrt(np.sum(wts**2 * ses**2, axis=0)), "nested_quadrature"


def avg_over_w(
    dgp: TriangularDGP,
    model: UtilityModel,
    x,
    integ: IntegrationSpec,
    rhs_integ: IntegrationSpec | None = None,
    n_w: int = 2000,
    tol_rel: float = 0.01,
    k_gap: float = 5.0,
) -> list[DerivativeReport]:
    """Average of d_x P_j(x, w) over the identified values of w, against the marginal RHS.

    d_x P_j(x, w) is only observable for w in the support of w given X = x, so
    the left side averages over draws of w inside that set.  Under common
    support this is all of F_w and a ``cor6`` report is returned.  Otherwise
    the ``cor6`` report is marked as a failed precondition and a ``cor6_gap``
    report (``differ`` mode, ``k_gap`` standard errors) records the gap.
    """
    rhs_integ = rhs_integ or integ
    x = model.check_x(x)
    ws = _w_sample(dgp, n_w, integ.seed)
    keep = in_conditional_support(dgp, x.ravel(), ws)
    common = common_support_at(dgp, x.ravel(), seed=integ.seed)
    derivs = cond_deriv_batch(dgp, model, x, ws[keep], integ)
    lhs = derivs.mean(axis=0)
    lhs_se = derivs.std(axis=0, ddof=1) / np.sqrt(len(derivs)) if len(derivs) > 1 else np.zeros_like(lhs)
    rhs, rhs_se, route = unconditional_rhs(dgp, model, x, rhs_integ)
    meta = {"route": route, "n_w": int(n_w), "n_w_in_support": int(keep.sum()), "common_support": common}
    se = combined_se(lhs_se, rhs_se)
    if common:
        return [DerivativeReport("cor6", x.ravel(), lhs, rhs, se, tol_rel=tol_rel, metadata=meta)]
    return [
        DerivativeReport("cor6", x.ravel(), lhs, rhs, se, status=STATUS_PRECONDITION,
                         note="support of w given X=x is smaller than the support of w", metadata=meta),
        DerivativeReport("cor6_gap", x.ravel(), lhs, rhs, se, mode=DIFFER, k_se=k_gap, metadata=meta),
    ]


# ----------------------------------------------------- local average response
def conditional_w_given_x(dgp: TriangularDGP, x, integ: IntegrationSpec, n_sim: int = 200_000,
                          max_keep: int = 4000) -> Nodes:
    """Nodes for the law of w given X = x.

    Gaussian linear designs use the exact conditional normal; other designs
    keep simulated w whose X falls in a box of half-width
    1.06 * sd(X_i) * n^(-1/5) around x.
    """
    x = np.asarray(x, float).ravel()
    gaussian = (
        isinstance(dgp.z_law, MultivariateNormal)
        and isinstance(dgp.w_law, MultivariateNormal)
        and dgp.first_stage == LINEAR
    )
    if gaussian:
        mw, vw = dgp.w_law.mean(), dgp.w_law.covariance()
        mx = dgp.Pi @ dgp.z_law.mean() + mw
        vx = dgp.Pi @ dgp.z_law.covariance() @ dgp.Pi.T + vw
        gain = vw @ np.linalg.pinv(vx)
        cov = vw - gain @ vw
        cov = 0.5 * (cov + cov.T)
        cond = MultivariateNormal(mw + gain @ (x - mx), np.where(np.abs(cov) < 1e-14, 0.0, cov))
        if np.allclose(cond.cov, 0.0):
            return Nodes(cond.mu[None, :], np.ones(1), random=False)
        return eta_nodes(cond, integ, "cf/wgivenx")
    _, w, xs, _ = dgp.simulate(n_sim, integ.seed)
    half = 1.06 * xs.std(axis=0, ddof=1) * n_sim ** (-0.2)
    keep = np.all(np.abs(xs - x) <= half, axis=1)
    kept = w[keep][:max_keep]
    if len(kept) < 50:
        raise PreconditionError(f"only {len(kept)} simulated draws near X={x.tolist()}")
    return Nodes(kept, np.full(len(kept), 1.0 / len(kept)), random=True)


def local_average_response(dgp: TriangularDGP, model: UtilityModel, x, integ: IntegrationSpec,
                           n_sim: int = 200_000):
    """Integral of d_x P_j(x, w) over the law of w given X = x; returns ``(value, se)``."""
    x = model.check_x(x)
    nodes = conditional_w_given_x(dgp, x, integ, n_sim)
    derivs = cond_deriv_batch(dgp, model, x, nodes.points, integ)
    return nodes.expect(derivs)


def joint_lar_oracle(dgp: TriangularDGP, model: UtilityModel, x, integ: IntegrationSpec,
                     n_sim: int = 400_000, max_keep: int = 4000):
    """Brute-force E[d_x P_j(x, w) | X = x] from joint simulation and binning."""
    x = model.check_x(x)
    _, w, xs, _ = dgp.simulate(n_sim, integ.seed + 1)
    half = 1.06 * xs.std(axis=0, ddof=1) * n_sim ** (-0.2)
    keep = np.all(np.abs(xs - x.ravel()) <= half, axis=1)
    kept = w[keep][:max_keep]
    derivs = cond_deriv_batch(dgp, model, x, kept, integ)
    return derivs.mean(axis=0), derivs.std(axis=0, ddof=1) / np.sqrt(len(kept))


# ------------------------------------------------------------- witness
def independence_witness(dgp: TriangularDGP, n: int = 100_000, seed: int = 0,
                         w_bins: int = 20, level: float = 0.05) -> dict:
    """Two-sample KS tests of eta across X halves within quantile bins of w.

    Bins use the first coordinate of w; within each bin the draws are split
    at the median of the first coordinate of m(Z).  Every eta coordinate is
    tested and the smallest p-value is compared with ``level`` divided by the
    number of tests.
    """
    z, w, _, eta = dgp.simulate(n, seed)
    mz = dgp.first_stage_mean(z)[:, 0]
    edges = np.quantile(w[:, 0], np.linspace(0, 1, w_bins + 1))
    which = np.clip(np.searchsorted(edges, w[:, 0], side="right") - 1, 0, w_bins - 1)
    pvals = []
    for b in range(w_bins):
        idx = np.flatnonzero(which == b)
        hi = mz[idx] > np.median(mz[idx])
        for k in range(eta.shape[1]):
            pvals.append(float(stats.ks_2samp(eta[idx[hi], k], eta[idx[~hi], k]).pvalue))
    threshold = level / len(pvals)
    return {"min_pvalue": min(pvals), "threshold": threshold, "n_tests": len(pvals),
            "pass": min(pvals) > threshold}


def dgp_from_dict(doc: dict) -> TriangularDGP:
    from .distributions import eta_from_dict, noise_from_dict

    try:
        return TriangularDGP(
            z_law=eta_from_dict(doc["z_law"]),
            Pi=doc["Pi"],
            w_law=eta_from_dict(doc["w_law"]),
            mu=doc["mu"],
            Gamma=doc["Gamma"],
            Sigma=doc["Sigma"],
            noise=noise_from_dict(doc["noise"]),
            first_stage=doc.get("first_stage", LINEAR),
            v_shift_w=doc.get("v_shift_w"),
        )
    except KeyError as exc:
        raise ConfigurationError(f"triangular DGP: missing field {exc}") from exc
