"""Point estimators for the linear outcome model, plus the rank sweep.

All methods regress an outcome on the treatment block with an intercept and
heteroskedasticity-robust (HC1) sandwich standard errors:

  ols   Y on (1, A, W, X)
  iv    2SLS of Y on (1, A, W, X), instruments (1, Z, W, X)
  icc   2SLS of Y on (1, A, T, X), instruments (1, Z, T, X); equals
        (Aᵀ P M A)⁻¹ (Aᵀ P M Y) with P the projection on (1, Z, X) and M
        the annihilator of (1, T, X)
  pl    OLS of Y on (1, A, T_pl, X) with T_pl the rank-r part of the
        projection of W on (Z, A, X); a linear negative-control-style
        comparator, not a full proximal estimator

The reported control coefficient is per standard deviation of the control
column; rescaling a regressor block leaves the treatment coefficient
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, DegenerateControlError, IccError, RelevanceError, SeedSpec
from .control import ControlFunction, build_control, estimate_gamma_tilde
from .lineardgp import LinearDGPSpec, sample_linear

__all__ = [
    "EstimateResult",
    "SweepResult",
    "estimate",
    "icc_matrix_beta",
    "bias_variance_sweep",
]

METHODS = ("ols", "iv", "pl", "icc")
_COND_LIMIT = 1e10


def _ols_fit(y, design):
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise DegenerateControlError("regression design is rank deficient")
    return coef


def _hc1(design_hat, resid, n, p):
    bread = np.linalg.inv(design_hat.T @ design_hat)
    meat = design_hat.T @ (design_hat * resid[:, None] ** 2)
    return bread @ meat @ bread * (n / (n - p))


def _tsls(y, regressors, instruments):
    """2SLS coefficients with HC1 vcov; returns (coef, vcov, fitted_regressors)."""
    n, p = regressors.shape
    if instruments.shape[1] < p:
        raise ValueError(f"underidentified: {instruments.shape[1]} instruments for {p} regressors")
    first, _, _, _ = np.linalg.lstsq(instruments, regressors, rcond=None)
    rhat = instruments @ first
    coef, _, rank, _ = np.linalg.lstsq(rhat, y, rcond=None)
    if rank < p:
        raise RelevanceError("conditional relevance failure: projected design rank deficient")
    resid = y - regressors @ coef
    return coef, _hc1(rhat, resid, n, p), rhat


def _residualize(mat, controls):
    coef, _, _, _ = np.linalg.lstsq(controls, mat, rcond=None)
    return mat - controls @ coef


def _standardize_columns(t):
    sd = t.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise DegenerateControlError("control column is constant")
    return (t - t.mean(axis=0)) / sd


def _first_stage_condition(data: Dataset, t: np.ndarray) -> float:
    """Scale of Aᵀ A against the instrumented moment Aᵀ P M A.

    Values above 1e10 mean the instruments carry essentially no variation
    for A once the control and covariates are held fixed.
    """
    n = data.n
    ctrl = np.column_stack([np.ones(n), t, data.x])
    a_res = _residualize(data.a, ctrl)
    z_res = _residualize(data.z, ctrl)
    first, _, _, _ = np.linalg.lstsq(z_res, a_res, rcond=None)
    k = (a_res.T @ (z_res @ first)) / n
    k = 0.5 * (k + k.T)
    scale = float(np.linalg.eigvalsh(a_res.T @ a_res / n).max())
    lam_min = float(np.linalg.eigvalsh(k).min())
    if lam_min <= 0:
        return np.inf
    return scale / lam_min


@dataclass(frozen=True)
class EstimateResult:
    method: str
    beta: np.ndarray
    se: np.ndarray
    t_coef: np.ndarray
    t_se: np.ndarray
    vcov: np.ndarray
    coef_names: list
    n: int
    r_used: int
    first_stage_cond: float | None = None
    se_boot: np.ndarray | None = None


def _names(d_a, middle_label, middle_count, d_x):
    return (["const"] + [f"a{j + 1}" for j in range(d_a)]
            + [f"{middle_label}{j + 1}" for j in range(middle_count)]
            + [f"x{j + 1}" for j in range(d_x)])


def _pack(method, coef, vcov, names, n, r_used, d_a, t_count, cond=None, se_boot=None):
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))
    sl_a = slice(1, 1 + d_a)
    sl_t = slice(1 + d_a, 1 + d_a + t_count)
    return EstimateResult(method=method, beta=coef[sl_a], se=se[sl_a],
                          t_coef=coef[sl_t], t_se=se[sl_t], vcov=vcov,
                          coef_names=names, n=n, r_used=r_used,
                          first_stage_cond=cond, se_boot=se_boot)


def icc_matrix_beta(data: Dataset, cf: ControlFunction) -> np.ndarray:
    """Direct evaluation of (Aᵀ P M A)⁻¹ (Aᵀ P M Y).

    P projects on (1, Z, X); M annihilates (1, T, X).  Used to cross-check
    the two-stage implementation; the two agree by the partialling-out
    identity.
    """
    n = data.n
    t = cf.values if cf.values is not None else cf.apply(data.z, data.x)
    inst = np.column_stack([np.ones(n), data.z, data.x])
    ctrl = np.column_stack([np.ones(n), t, data.x])
    proj = lambda m: inst @ np.linalg.lstsq(inst, m, rcond=None)[0]
    annih = lambda m: m - ctrl @ np.linalg.lstsq(ctrl, m, rcond=None)[0]
    apm = data.a.T @ proj(annih(data.a))
    apy = data.a.T @ proj(annih(data.y))
    return np.linalg.solve(apm, apy).reshape(-1)


def _estimate_icc(data: Dataset, cf: ControlFunction):
    n = data.n
    t = cf.values if cf.values is not None else cf.apply(data.z, data.x)
    cond = _first_stage_condition(data, t)
    if cond > _COND_LIMIT:
        raise RelevanceError(
            f"conditional relevance failure: first-stage condition {cond:.3g} > {_COND_LIMIT:.0e}")
    t_std = _standardize_columns(t) if cf.r else t
    regs = np.column_stack([np.ones(n), data.a, t_std, data.x])
    inst = np.column_stack([np.ones(n), data.z, t_std, data.x])
    coef, vcov, _ = _tsls(data.y, regs, inst)

    # cross-check against the residualize-then-2SLS path
    ctrl = np.column_stack([np.ones(n), t, data.x])
    y_res = _residualize(data.y, ctrl)
    a_res = _residualize(data.a, ctrl)
    z_res = _residualize(data.z, ctrl)
    coef_res, _, _, _ = np.linalg.lstsq(z_res @ np.linalg.lstsq(z_res, a_res, rcond=None)[0],
                                        y_res, rcond=None)
    beta = coef[1:1 + data.d_a]
    scale = max(1.0, float(np.abs(beta).max()))
    if np.abs(beta - coef_res).max() > 1e-6 * scale:
        raise IccError("internal inconsistency: two-stage and residualized paths disagree")
    names = _names(data.d_a, "t", t_std.shape[1] if cf.r else 0, data.d_x)
    return _pack("icc", coef, vcov, names, n, cf.r, data.d_a, cf.r, cond=cond)


def _build_pl_control(data: Dataset, r: int) -> np.ndarray:
    """Rank-r index of the projection of W on (Z, A, X): the comparator's T."""
    n = data.n
    za = np.column_stack([data.z, data.a])
    design = np.column_stack([np.ones(n), za, data.x])
    coefs, _, rank, _ = np.linalg.lstsq(design, data.w, rcond=None)
    if rank < design.shape[1]:
        raise DegenerateControlError("proxy-on-(Z,A,X) design is rank deficient")
    blk = coefs[1:1 + za.shape[1]]
    sd = za.std(axis=0, ddof=1)
    p0, sv, _ = np.linalg.svd(sd[:, None] * blk, full_matrices=False)
    if r > 0 and sv[r - 1] <= 1e-14 * max(sv[0], 1.0):
        raise DegenerateControlError(f"(Z,A) proxy projection rank < {r}")
    load = (p0[:, :r] * sv[:r]) / sd[:, None]
    return za @ load


def estimate(data: Dataset, method: str, cf: ControlFunction | None = None,
             bootstrap_se: int = 0, seed: SeedSpec | None = None) -> EstimateResult:
    """Fit one estimator; icc and pl require a fitted control function.

    bootstrap_se > 0 adds pairs-bootstrap standard errors (re-estimating
    the control per replicate for icc/pl, so the two-step uncertainty is
    reflected); HC1 errors are always reported.
    """
    method = method.lower()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if method in ("icc", "pl") and cf is None:
        raise ValueError(f"method {method!r} requires a control function")
    n = data.n

    if method == "ols":
        design = np.column_stack([np.ones(n), data.a, data.w, data.x])
        coef = _ols_fit(data.y, design)
        vcov = _hc1(design, data.y - design @ coef, n, design.shape[1])
        res = _pack("ols", coef, vcov, _names(data.d_a, "w", data.d_w, data.d_x),
                    n, 0, data.d_a, 0)
    elif method == "iv":
        regs = np.column_stack([np.ones(n), data.a, data.w, data.x])
        inst = np.column_stack([np.ones(n), data.z, data.w, data.x])
        coef, vcov, _ = _tsls(data.y, regs, inst)
        res = _pack("iv", coef, vcov, _names(data.d_a, "w", data.d_w, data.d_x),
                    n, 0, data.d_a, 0)
    elif method == "pl":
        t_pl = _build_pl_control(data, cf.r)
        t_std = _standardize_columns(t_pl) if cf.r else t_pl
        design = np.column_stack([np.ones(n), data.a, t_std, data.x])
        coef = _ols_fit(data.y, design)
        vcov = _hc1(design, data.y - design @ coef, n, design.shape[1])
        res = _pack("pl", coef, vcov, _names(data.d_a, "t", cf.r, data.d_x),
                    n, cf.r, data.d_a, cf.r)
    else:
        res = _estimate_icc(data, cf)

    if bootstrap_se:
        if seed is None:
            raise ValueError("bootstrap_se requires a seed")
        draws = np.empty((int(bootstrap_se), data.d_a))
        ok = np.zeros(int(bootstrap_se), dtype=bool)
        for b in range(int(bootstrap_se)):
            idx = seed.replicate(b).rng().integers(0, n, size=n)
            bs = data.take(idx)
            try:
                if method in ("icc", "pl"):
                    gt_b = estimate_gamma_tilde(bs)
                    cf_b = build_control(bs, gt_b, cf.r)
                    draws[b] = estimate(bs, method, cf_b).beta
                else:
                    draws[b] = estimate(bs, method).beta
                ok[b] = True
            except (RelevanceError, DegenerateControlError):
                pass
        if ok.sum() < max(10, 0.5 * bootstrap_se):
            raise RelevanceError(
                f"conditional relevance failure in {int((~ok).sum())}/{int(bootstrap_se)} bootstrap replicates")
        res = EstimateResult(**{**res.__dict__, "se_boot": draws[ok].std(axis=0, ddof=1)})
    return res


@dataclass(frozen=True)
class SweepResult:
    """Monte Carlo bias/sd/rmse of the confounder-adjusted IV across ranks."""

    rows: list
    n: int
    reps: int
    beta_true: float
    seed: SeedSpec = field(default=None)

    def as_csv(self) -> str:
        lines = ["r,bias,sd,rmse,failures,converged"]
        for row in self.rows:
            lines.append("{r},{bias!r},{sd!r},{rmse!r},{failures},{converged}".format(**row))
        return "\n".join(lines) + "\n"


def bias_variance_sweep(spec: LinearDGPSpec, n: int, reps: int, r_max: int,
                        seed: SeedSpec) -> SweepResult:
    """Estimate at every control rank r = 0..r_max on shared replicate draws.

    Low ranks leave confounded instrument directions in use (bias); high
    ranks absorb instrument variation into the control (variance, and
    certain relevance failure once the control spans Z).
    """
    r_max = int(r_max)
    if r_max > min(spec.d_z, spec.d_w):
        raise ValueError(f"r_max must be ≤ {min(spec.d_z, spec.d_w)}")
    beta_true = float(spec.beta[0])
    estimates = np.full((r_max + 1, reps), np.nan)
    for b in range(reps):
        ds = sample_linear(spec, n, seed.replicate(b))
        gt = estimate_gamma_tilde(ds)
        for r in range(r_max + 1):
            try:
                cf = build_control(ds, gt, r)
                estimates[r, b] = estimate(ds, "icc", cf).beta[0]
            except (RelevanceError, DegenerateControlError):
                pass
    rows = []
    for r in range(r_max + 1):
        vals = estimates[r][np.isfinite(estimates[r])]
        conv = vals.size
        rows.append({
            "r": r,
            "bias": float(vals.mean() - beta_true) if conv else float("nan"),
            "sd": float(vals.std(ddof=1)) if conv > 1 else float("nan"),
            "rmse": float(np.sqrt(np.mean((vals - beta_true) ** 2))) if conv else float("nan"),
            "failures": int(reps - conv),
            "converged": int(conv),
        })
    return SweepResult(rows=rows, n=int(n), reps=int(reps), beta_true=beta_true, seed=seed)
