"""Bootstrap tests: proxy-projection rank, conditional relevance, nesting.

The rank test asks how many latent dimensions link instruments and proxies
(the dimension the control T must have).  The relevance test asks whether
the instruments still predict the treatment once T is held fixed.  The
specification test compares the adjusted-IV estimate under two nested
controls; a gap indicates the smaller control does not restore exogeneity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .data import Dataset, DegenerateControlError, RelevanceError, SeedSpec
from .control import ControlFunction, build_control, estimate_gamma_tilde
from .estimators import estimate

__all__ = [
    "RankTestResult",
    "RelevanceTestResult",
    "SpecificationTestResult",
    "rank_test",
    "relevance_test",
    "specification_test",
]


@dataclass(frozen=True)
class RankTestResult:
    """Bootstrap test of H0: the proxy projection has rank ≤ r_tested."""

    r_tested: int
    statistic: float
    bootstrap_draws: np.ndarray
    p_value: float
    B: int
    seed: SeedSpec
    variant: str
    logit_converged: list


@dataclass(frozen=True)
class RelevanceTestResult:
    """Bootstrap test of H0: Z predicts A only through (T, X)."""

    r2_unrestricted: float
    r2_restricted: float
    delta: float
    null_delta_draws: np.ndarray
    p_value: float
    B: int
    seed: SeedSpec
    r: int
    n_failed: int


@dataclass(frozen=True)
class SpecificationTestResult:
    """Bootstrap comparison of the adjusted IV under two nested controls."""

    theta1: float
    theta2: float
    delta: float
    bootstrap_deltas: np.ndarray
    p_value: float
    B: int
    seed: SeedSpec
    r1: int
    r2: int
    n_failed: int


def _sigmoid(eta):
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _fit_logit_scalar(index: np.ndarray, w: np.ndarray):
    """ML fit of P(w=1) = sigmoid(alpha + beta * index); returns (alpha, beta, ok)."""
    n = w.shape[0]
    pbar = float(np.clip(w.mean(), 0.5 / n, 1 - 0.5 / n))
    alpha0 = float(np.log(pbar / (1 - pbar)))
    if index.std() <= 1e-12:
        return alpha0, 0.0, False

    def nll_grad(par):
        eta = par[0] + par[1] * index
        p = _sigmoid(eta)
        nll = float(np.sum(np.logaddexp(0.0, eta)) - w @ eta)
        diff = p - w
        return nll, np.array([diff.sum(), diff @ index])

    res = scipy.optimize.minimize(nll_grad, np.array([alpha0, 0.0]), jac=True, method="BFGS")
    if not res.success or not np.all(np.isfinite(res.x)):
        return alpha0, 0.0, False
    return float(res.x[0]), float(res.x[1]), True


def _null_indices(data: Dataset, gt, r: int) -> np.ndarray:
    """Per-proxy rank-r fitted index: the retained part of the projection."""
    z_s = (data.z - gt.mean_z) / gt.sd_z
    fit = (z_s @ (gt.p0[:, :r] * gt.singular_values[:r])) @ gt.q0[:, :r].T
    if data.d_x:
        fit = fit + data.x @ gt.x_coef
    return fit


def rank_test(data: Dataset, r: int, B: int, seed: SeedSpec,
              variant: str = "auto") -> RankTestResult:
    """Bootstrap rank test on the proxy projection's singular values.

    The statistic is n times the sum of squared singular values of the
    standardized Z-coefficient block beyond the r-th.  Proxies are redrawn
    under the rank-r null around the fitted rank-r index: a two-parameter
    logistic fit per binary proxy, or a Gaussian residual redraw for
    continuous proxies.
    """
    r = int(r)
    if not 0 <= r < min(data.d_z, data.d_w):
        raise ValueError(f"r must be in [0, {min(data.d_z, data.d_w)}), got {r}")
    B = int(B)
    if B <= 0:
        raise ValueError("B must be positive")
    if variant not in ("auto", "logit", "gaussian"):
        raise ValueError(f"unknown variant {variant!r}")
    if variant == "auto":
        variant = "logit" if np.isin(data.w, (0.0, 1.0)).all() else "gaussian"

    gt = estimate_gamma_tilde(data)
    statistic = gt.rank_stat(r)
    n, d_w = data.n, data.d_w
    idx = _null_indices(data, gt, r)

    converged = []
    if variant == "logit":
        probs = np.empty((n, d_w))
        for j in range(d_w):
            a, b, ok = _fit_logit_scalar(idx[:, j], data.w[:, j])
            probs[:, j] = _sigmoid(a + b * idx[:, j])
            converged.append(ok)
    else:
        # per-proxy mean recalibration on the rank-r index; residuals are
        # redrawn jointly, since cross-proxy residual correlation (the shared
        # confounder) is part of the null model and drives the trailing
        # singular values
        means = np.empty((n, d_w))
        for j in range(d_w):
            design = np.column_stack([np.ones(n), idx[:, j]])
            coef, _, _, _ = np.linalg.lstsq(design, data.w[:, j], rcond=None)
            means[:, j] = design @ coef
            converged.append(True)
        resid = data.w - means
        sigma_resid = np.atleast_2d(np.cov(resid, rowvar=False, ddof=2))
        chol = np.linalg.cholesky(sigma_resid + 1e-12 * np.trace(sigma_resid) * np.eye(d_w))

    # coefficient map: bootstrap proxies -> standardized Z-block coefficients
    design = np.column_stack([data.z - data.z.mean(axis=0),
                              data.x - data.x.mean(axis=0) if data.d_x else np.empty((n, 0))])
    hat = np.linalg.pinv(design)[: data.d_z]
    hat_std = gt.sd_z[:, None] * hat

    draws = np.empty(B)
    chunk = 128
    buf = np.empty((chunk, data.d_z, d_w))
    filled = 0
    for b in range(B):
        rng = seed.replicate(b).rng()
        if variant == "logit":
            w_b = (rng.random((n, d_w)) < probs).astype(float)
        else:
            w_b = means + rng.standard_normal((n, d_w)) @ chol.T
        buf[filled] = hat_std @ w_b
        filled += 1
        if filled == chunk or b == B - 1:
            sv = np.linalg.svd(buf[:filled], compute_uv=False)
            draws[b - filled + 1:b + 1] = n * np.sum(sv[:, r:] ** 2, axis=1)
            filled = 0
    p_value = 1.0 - float(np.count_nonzero(draws < statistic)) / B
    return RankTestResult(r_tested=r, statistic=statistic, bootstrap_draws=draws,
                          p_value=p_value, B=B, seed=seed, variant=variant,
                          logit_converged=converged)


def _r_squared(y: np.ndarray, design: np.ndarray) -> float:
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst <= 0:
        raise ValueError("constant response: R² undefined")
    return 1.0 - float(resid @ resid) / sst


def relevance_test(data: Dataset, cf: ControlFunction, B: int,
                   seed: SeedSpec) -> RelevanceTestResult:
    """Test whether instruments predict treatment beyond the control.

    The statistic is the R² gain of A on (1, Z, X) over A on (1, T, X).
    Null draws regenerate the treatment from the restricted fit plus
    resampled centered residuals and recompute the same gain.  Because
    span(1, T, X) sits inside span(1, Z, X), the regenerated fitted part
    cancels from each draw's gain, leaving exactly the mechanical gain the
    extra instrument columns extract from exchangeable noise; observed and
    null statistics are then compared on equal degrees of freedom.  A
    small p-value means Z predicts A beyond the control.
    """
    if data.d_a != 1:
        raise ValueError("relevance test requires a one-dimensional treatment")
    B = int(B)
    n = data.n
    a = data.a[:, 0]
    design_ur = np.column_stack([np.ones(n), data.z, data.x])
    design_r = np.column_stack([np.ones(n), cf.apply(data.z, data.x), data.x])
    r2_ur = _r_squared(a, design_ur)
    r2_r = _r_squared(a, design_r)
    delta = r2_ur - r2_r

    coef, _, _, _ = np.linalg.lstsq(design_r, a, rcond=None)
    fitted = design_r @ coef
    resid = a - fitted
    resid = resid - resid.mean()

    draws = np.full(B, np.nan)
    failed = 0
    for b in range(B):
        rng = seed.replicate(b).rng()
        a_star = fitted + resid[rng.integers(0, n, size=n)]
        try:
            draws[b] = _r_squared(a_star, design_ur) - _r_squared(a_star, design_r)
        except ValueError:
            failed += 1
    kept = draws[np.isfinite(draws)]
    if kept.size < max(10, B // 2):
        raise RelevanceError(f"relevance bootstrap failed in {failed}/{B} replicates")
    p_value = float(np.mean(kept >= delta))
    return RelevanceTestResult(r2_unrestricted=r2_ur, r2_restricted=r2_r,
                               delta=delta, null_delta_draws=draws,
                               p_value=p_value, B=B, seed=seed, r=cf.r,
                               n_failed=failed)


def _check_nested(cf1: ControlFunction, cf2: ControlFunction):
    t1, t2 = cf1.z_loadings, cf2.z_loadings
    if t1.shape[1] == 0:
        return
    if t2.shape[1] < t1.shape[1]:
        raise ValueError("controls are not nested: cf1 must be the lower-rank control")
    proj, _, _, _ = np.linalg.lstsq(t2, t1, rcond=None)
    resid = t1 - t2 @ proj
    if np.linalg.norm(resid) > 1e-8 * max(np.linalg.norm(t1), 1.0):
        raise ValueError("controls are not nested: span(T1) ⊄ span(T2)")


def specification_test(data: Dataset, cf1: ControlFunction, cf2: ControlFunction,
                       B: int, seed: SeedSpec) -> SpecificationTestResult:
    """Bootstrap test that two nested controls give the same estimand.

    Under the null the smaller control already restores instrument
    exogeneity, so the two adjusted-IV estimates share a probability limit
    and their difference is centered at zero.
    """
    if data.d_a != 1:
        raise ValueError("specification test requires a one-dimensional treatment")
    _check_nested(cf1, cf2)
    theta1 = float(estimate(data, "icc", cf1).beta[0])
    try:
        theta2 = float(estimate(data, "icc", cf2).beta[0])
    except RelevanceError as e:
        raise RelevanceError(f"comparison infeasible: {e}") from e
    delta = theta1 - theta2

    B = int(B)
    n = data.n
    deltas = np.full(B, np.nan)
    failed = 0
    for b in range(B):
        idx = seed.replicate(b).rng().integers(0, n, size=n)
        bs = data.take(idx)
        try:
            gt_b = estimate_gamma_tilde(bs)
            t1 = float(estimate(bs, "icc", build_control(bs, gt_b, cf1.r)).beta[0])
            t2 = float(estimate(bs, "icc", build_control(bs, gt_b, cf2.r)).beta[0])
            deltas[b] = t1 - t2
        except (RelevanceError, DegenerateControlError):
            failed += 1
    kept = deltas[np.isfinite(deltas)]
    if kept.size < max(10, B // 2):
        raise RelevanceError(f"specification bootstrap failed in {failed}/{B} replicates")
    p_value = float(np.mean(np.abs(kept - delta) >= abs(delta)))
    return SpecificationTestResult(theta1=theta1, theta2=theta2, delta=delta,
                                   bootstrap_deltas=deltas, p_value=p_value,
                                   B=B, seed=seed, r1=cf1.r, r2=cf2.r,
                                   n_failed=failed)
