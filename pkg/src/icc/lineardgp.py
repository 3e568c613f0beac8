"""Linear-Gaussian structural models: exact second moments and samplers.

The model has latent confounders U, instruments Z, confounder proxies W,
treatments A, outcome Y and optional exogenous covariates X:

    U = X Cxu + eps_U
    Z = U Gz + eps_Z
    W = U Gw + eps_W
    A = Z zeta + U Ga + W Ua + X Ea + eps_A
    Y = A beta + U Gy + W Uy + X Ey + eps_Y

All shocks are mean zero and jointly independent, so every covariance of
observables is available in closed form.  Estimators can then be checked
against their exact population limits instead of Monte Carlo noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, DegenerateControlError, RelevanceError, SeedSpec

__all__ = [
    "LinearDGPSpec",
    "PopulationMoments",
    "implied_covariances",
    "sample_linear",
    "population_tsls",
    "population_icc_beta",
    "population_icc_beta_at_rank",
    "population_control_loadings",
    "sigma_zw_factor",
    "spec_s1",
]


def _mat(x, shape, name) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
    return a


def _noise_diag(v, d, name) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.size == 1:
        a = np.full(d, float(a[0]))
    if a.shape != (d,):
        raise ValueError(f"{name} must be a scalar or length-{d}, got {a.shape}")
    if np.any(a < 0):
        raise ValueError(f"{name} must be nonnegative")
    return a


@dataclass(frozen=True)
class LinearDGPSpec:
    """Coefficients and shock variances of one linear structural model.

    Matrices map row vectors left to right, e.g. gamma_z has shape
    (d_u, d_z) so that Z = U @ gamma_z + noise.  beta is the causal
    coefficient of A in Y, length d_a.
    """

    gamma_z: np.ndarray
    gamma_w: np.ndarray
    zeta: np.ndarray
    gamma_a: np.ndarray
    gamma_y: np.ndarray
    beta: np.ndarray
    ups_a: np.ndarray | None = None
    ups_y: np.ndarray | None = None
    sigma_u: np.ndarray | float = 1.0
    sigma2_z: np.ndarray | float = 1.0
    sigma2_w: np.ndarray | float = 1.0
    sigma2_a: np.ndarray | float = 1.0
    sigma2_y: float = 1.0
    # optional exogenous covariates
    eta_a: np.ndarray | None = None
    eta_y: np.ndarray | None = None
    x_u_coef: np.ndarray | None = None
    sigma_x: np.ndarray | float = 1.0
    d_x: int = 0

    def __post_init__(self):
        gz = np.atleast_2d(np.asarray(self.gamma_z, dtype=float))
        d_u, d_z = gz.shape
        gw = _mat(np.atleast_2d(self.gamma_w), (d_u, np.atleast_2d(self.gamma_w).shape[1]), "gamma_w")
        d_w = gw.shape[1]
        zeta = np.asarray(self.zeta, dtype=float)
        if zeta.ndim == 1:
            zeta = zeta[:, None]
        if zeta.shape[0] != d_z:
            raise ValueError(f"zeta must have {d_z} rows, got {zeta.shape}")
        d_a = zeta.shape[1]
        ga = np.asarray(self.gamma_a, dtype=float).reshape(d_u, d_a)
        gy = np.asarray(self.gamma_y, dtype=float).reshape(d_u)
        beta = np.asarray(self.beta, dtype=float).reshape(d_a)
        ua = np.zeros((d_w, d_a)) if self.ups_a is None else np.asarray(self.ups_a, dtype=float).reshape(d_w, d_a)
        uy = np.zeros(d_w) if self.ups_y is None else np.asarray(self.ups_y, dtype=float).reshape(d_w)
        su = np.asarray(self.sigma_u, dtype=float)
        if su.ndim == 0:
            su = float(su) * np.eye(d_u)
        su = _mat(su, (d_u, d_u), "sigma_u")
        if not np.allclose(su, su.T):
            raise ValueError("sigma_u must be symmetric")
        d_x = int(self.d_x)
        ea = np.zeros((d_x, d_a)) if self.eta_a is None else np.asarray(self.eta_a, dtype=float).reshape(d_x, d_a)
        ey = np.zeros(d_x) if self.eta_y is None else np.asarray(self.eta_y, dtype=float).reshape(d_x)
        cxu = np.zeros((d_x, d_u)) if self.x_u_coef is None else np.asarray(self.x_u_coef, dtype=float).reshape(d_x, d_u)
        sx = np.asarray(self.sigma_x, dtype=float)
        if sx.ndim == 0:
            sx = float(sx) * np.eye(d_x)
        if sx.size == 0:
            # an empty covariance loses its 2-d shape through JSON
            sx = sx.reshape(d_x, d_x)
        sx = _mat(sx, (d_x, d_x), "sigma_x")
        upd = dict(
            gamma_z=gz, gamma_w=gw, zeta=zeta, gamma_a=ga, gamma_y=gy, beta=beta,
            ups_a=ua, ups_y=uy, sigma_u=su,
            sigma2_z=_noise_diag(self.sigma2_z, d_z, "sigma2_z"),
            sigma2_w=_noise_diag(self.sigma2_w, d_w, "sigma2_w"),
            sigma2_a=_noise_diag(self.sigma2_a, d_a, "sigma2_a"),
            sigma2_y=float(np.asarray(self.sigma2_y).reshape(())),
            eta_a=ea, eta_y=ey, x_u_coef=cxu, sigma_x=sx, d_x=d_x,
        )
        for k, v in upd.items():
            if isinstance(v, np.ndarray):
                v.setflags(write=False)
            object.__setattr__(self, k, v)

    @property
    def d_u(self) -> int:
        return self.gamma_z.shape[0]

    @property
    def d_z(self) -> int:
        return self.gamma_z.shape[1]

    @property
    def d_w(self) -> int:
        return self.gamma_w.shape[1]

    @property
    def d_a(self) -> int:
        return self.zeta.shape[1]

    def to_dict(self) -> dict:
        out = {}
        for f in ("gamma_z", "gamma_w", "zeta", "gamma_a", "gamma_y", "beta",
                  "ups_a", "ups_y", "sigma_u", "sigma2_z", "sigma2_w",
                  "sigma2_a", "eta_a", "eta_y", "x_u_coef", "sigma_x"):
            out[f] = np.asarray(getattr(self, f)).tolist()
        out["sigma2_y"] = self.sigma2_y
        out["d_x"] = self.d_x
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "LinearDGPSpec":
        return cls(**d)


_BLOCKS = ("u", "x", "z", "w", "a", "y")


@dataclass(frozen=True)
class PopulationMoments:
    """Exact joint covariance of (U, X, Z, W, A, Y), all mean zero."""

    sigma: np.ndarray
    slices: dict = field(repr=False)

    def cov(self, row: str, col: str) -> np.ndarray:
        return self.sigma[self.slices[row], self.slices[col]]

    def var(self, block: str) -> np.ndarray:
        s = self.slices[block]
        return self.sigma[s, s]

    def block(self, names) -> np.ndarray:
        """Joint covariance of the concatenation of the named blocks."""
        idx = np.concatenate([np.arange(self.slices[n].start, self.slices[n].stop) for n in names])
        return self.sigma[np.ix_(idx, idx)]


def implied_covariances(spec: LinearDGPSpec) -> PopulationMoments:
    """Propagate shock covariances through the structural equations.

    Builds the linear map Phi from the stacked shock vector
    (eps_X, eps_U, eps_Z, eps_W, eps_A, eps_Y) to (U, X, Z, W, A, Y) and
    returns Phi Sigma_s Phi'.
    """
    d_u, d_z, d_w, d_a, d_x = spec.d_u, spec.d_z, spec.d_w, spec.d_a, spec.d_x
    dims_s = [d_x, d_u, d_z, d_w, d_a, 1]
    n_s = sum(dims_s)
    offs = np.cumsum([0] + dims_s)

    def sel(i):
        m = np.zeros((dims_s[i], n_s))
        m[:, offs[i]:offs[i + 1]] = np.eye(dims_s[i])
        return m

    phi_x = sel(0)
    phi_u = spec.x_u_coef.T @ phi_x + sel(1)
    phi_z = spec.gamma_z.T @ phi_u + sel(2)
    phi_w = spec.gamma_w.T @ phi_u + sel(3)
    phi_a = (spec.zeta.T @ phi_z + spec.gamma_a.T @ phi_u
             + spec.ups_a.T @ phi_w + spec.eta_a.T @ phi_x + sel(4))
    phi_y = (spec.beta[None, :] @ phi_a + spec.gamma_y[None, :] @ phi_u
             + spec.ups_y[None, :] @ phi_w + spec.eta_y[None, :] @ phi_x + sel(5))

    sigma_s = np.zeros((n_s, n_s))
    sigma_s[offs[0]:offs[1], offs[0]:offs[1]] = spec.sigma_x
    sigma_s[offs[1]:offs[2], offs[1]:offs[2]] = spec.sigma_u
    sigma_s[offs[2]:offs[3], offs[2]:offs[3]] = np.diag(spec.sigma2_z)
    sigma_s[offs[3]:offs[4], offs[3]:offs[4]] = np.diag(spec.sigma2_w)
    sigma_s[offs[4]:offs[5], offs[4]:offs[5]] = np.diag(spec.sigma2_a)
    sigma_s[offs[5], offs[5]] = spec.sigma2_y

    phi = np.vstack([phi_u, phi_x, phi_z, phi_w, phi_a, phi_y])
    sigma = phi @ sigma_s @ phi.T
    sigma = 0.5 * (sigma + sigma.T)

    dims_v = [d_u, d_x, d_z, d_w, d_a, 1]
    off_v = np.cumsum([0] + dims_v)
    slices = {name: slice(int(off_v[i]), int(off_v[i + 1])) for i, name in enumerate(_BLOCKS)}
    return PopulationMoments(sigma=sigma, slices=slices)


def sample_linear(spec: LinearDGPSpec, n: int, seed: SeedSpec,
                  return_latents: bool = False):
    """Draw n iid observations from the structural model."""
    rng = seed.rng()
    d_u, d_z, d_w, d_a, d_x = spec.d_u, spec.d_z, spec.d_w, spec.d_a, spec.d_x
    x = rng.multivariate_normal(np.zeros(d_x), spec.sigma_x, size=n) if d_x else np.empty((n, 0))
    u = x @ spec.x_u_coef + rng.multivariate_normal(np.zeros(d_u), spec.sigma_u, size=n)
    z = u @ spec.gamma_z + rng.normal(size=(n, d_z)) * np.sqrt(spec.sigma2_z)
    w = u @ spec.gamma_w + rng.normal(size=(n, d_w)) * np.sqrt(spec.sigma2_w)
    a = (z @ spec.zeta + u @ spec.gamma_a + w @ spec.ups_a + x @ spec.eta_a
         + rng.normal(size=(n, d_a)) * np.sqrt(spec.sigma2_a))
    y = (a @ spec.beta + u @ spec.gamma_y + w @ spec.ups_y + x @ spec.eta_y
         + rng.normal(size=n) * np.sqrt(spec.sigma2_y))
    ds = Dataset(y=y, a=a, z=z, w=w, x=x)
    if return_latents:
        return ds, {"u": u}
    return ds


def _partial_out(sigma: np.ndarray, keep: np.ndarray, drop: np.ndarray) -> np.ndarray:
    """Schur complement: covariance of keep-coordinates given drop-coordinates."""
    if drop.size == 0:
        return sigma[np.ix_(keep, keep)]
    s_kk = sigma[np.ix_(keep, keep)]
    s_kd = sigma[np.ix_(keep, drop)]
    s_dd = sigma[np.ix_(drop, drop)]
    return s_kk - s_kd @ np.linalg.solve(s_dd, s_kd.T)


def _indices(mom: PopulationMoments, names) -> np.ndarray:
    out = []
    for n in names:
        s = mom.slices[n]
        out.extend(range(s.start, s.stop))
    return np.asarray(out, dtype=int)


def population_tsls(mom: PopulationMoments, regressors, instruments,
                    controls=()) -> np.ndarray:
    """Population two-stage least squares coefficient vector.

    regressors / instruments / controls are block-name sequences over
    u/x/z/w/a.  Controls are partialled out of everything first, which is
    what including them (plus an intercept) in both stages converges to.
    """
    regressors = list(regressors)
    instruments = list(instruments)
    controls = list(controls)
    idx_r = _indices(mom, regressors)
    idx_s = _indices(mom, instruments)
    idx_y = _indices(mom, ["y"])
    idx_c = _indices(mom, controls) if controls else np.empty(0, dtype=int)
    all_idx = np.concatenate([idx_r, idx_s, idx_y])
    sig = _partial_out(mom.sigma, all_idx, idx_c)
    nr, ns = idx_r.size, idx_s.size
    s_rs = sig[:nr, nr:nr + ns]
    s_ss = sig[nr:nr + ns, nr:nr + ns]
    s_sy = sig[nr:nr + ns, nr + ns:]
    proj = s_rs @ np.linalg.solve(s_ss, np.concatenate([s_rs.T, s_sy], axis=1))
    return np.linalg.solve(proj[:, :nr], proj[:, nr:]).reshape(-1)


def population_control_loadings(mom: PopulationMoments, r: int) -> np.ndarray:
    """Population limit of the reduced-rank proxy regression loadings.

    Returns the d_z x r matrix whose columns map raw Z to the control
    T = Z @ loadings: the regression coefficient of W on Z is rescaled to
    unit-variance Z coordinates, truncated to its top r singular directions,
    and mapped back to raw coordinates.
    """
    s_z = mom.var("z")
    s_zw = mom.cov("z", "w")
    d_z = s_z.shape[0]
    r = int(r)
    if r < 0 or r > min(d_z, s_zw.shape[1]):
        raise ValueError(f"rank must be in [0, {min(d_z, s_zw.shape[1])}], got {r}")
    if r == 0:
        return np.zeros((d_z, 0))
    coef = np.linalg.solve(s_z, s_zw)
    sd = np.sqrt(np.diag(s_z))
    p, sv, _ = np.linalg.svd(sd[:, None] * coef, full_matrices=False)
    if sv[r - 1] <= 1e-12 * max(sv[0], 1.0):
        raise DegenerateControlError(
            f"proxy regression has rank < {r}: singular values {sv}")
    return (p[:, :r] * sv[:r]) / sd[:, None]


def sigma_zw_factor(mom: PopulationMoments, r: int | None = None) -> np.ndarray:
    """Left factor C_Z of the instrument/proxy cross covariance.

    Returns a d_Z x r matrix with C_Z C_Wᵀ = Σ_ZW (SVD factorization);
    r defaults to the numerical rank of Σ_ZW.  Only the column span matters
    downstream, and the span is basis-invariant.
    """
    s_zw = mom.cov("z", "w")
    p, sv, _ = np.linalg.svd(s_zw, full_matrices=False)
    if r is None:
        tol = max(s_zw.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
        r = int(np.sum(sv > max(tol, 1e-12)))
    r = int(r)
    if r > sv.size or (r > 0 and sv[r - 1] <= 1e-12 * max(sv[0], 1.0)):
        raise DegenerateControlError(f"sigma_zw has rank < {r}: singular values {sv}")
    return p[:, :r] * sv[:r]


def population_icc_beta(mom: PopulationMoments, c_z: np.ndarray | None,
                        d_dirs: np.ndarray | None = None,
                        controls=()) -> np.ndarray:
    """Exact limit of the confounder-adjusted IV estimator.

    c_z spans the confounded instrument directions (columns of a
    factorization C_Z C_Wᵀ = Σ_ZW, or any matrix with the same span); those
    directions are projected out of Z and the remaining directions
    instrument A.  With c_z empty or None this is plain IV with instruments
    Z.  d_dirs optionally selects the surviving directions; the default is
    an orthonormal basis of the orthogonal complement.  The result is
    invariant to the basis of either span.
    """
    controls = list(controls)
    idx = _indices(mom, ["z", "w", "a", "y"])
    idx_c = _indices(mom, controls) if controls else np.empty(0, dtype=int)
    sig = _partial_out(mom.sigma, idx, idx_c)
    d_z = mom.slices["z"].stop - mom.slices["z"].start
    d_w = mom.slices["w"].stop - mom.slices["w"].start
    d_a = mom.slices["a"].stop - mom.slices["a"].start
    sl_z = slice(0, d_z)
    sl_a = slice(d_z + d_w, d_z + d_w + d_a)
    sl_y = slice(d_z + d_w + d_a, d_z + d_w + d_a + 1)
    s_z = sig[sl_z, sl_z]
    s_az = sig[sl_a, sl_z]
    s_zy = sig[sl_z, sl_y]

    if c_z is None:
        c = np.zeros((d_z, 0))
    else:
        c = np.asarray(c_z, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        if c.shape[0] != d_z:
            raise ValueError(f"c_z must have {d_z} rows, got {c.shape}")
        c = c[:, np.linalg.norm(c, axis=0) > 0]
    r = c.shape[1]
    if r == 0:
        m = np.eye(d_z)
    else:
        gram = c.T @ np.linalg.solve(s_z, c)
        if np.linalg.cond(gram) > 1e12:
            raise DegenerateControlError("degenerate control: C_Zᵀ Σ_Z⁻¹ C_Z singular")
        m = np.eye(d_z) - np.linalg.solve(s_z, c) @ np.linalg.solve(gram, c.T)
    if d_dirs is None:
        # orthonormal basis of the surviving instrument span
        uu, sv, _ = np.linalg.svd(m)
        d = uu[:, : d_z - r]
    else:
        d = np.asarray(d_dirs, dtype=float)
        if d.ndim == 1:
            d = d[:, None]
        if d.shape[0] != d_z:
            raise ValueError(f"d_dirs must have {d_z} rows, got {d.shape}")
    s_azt = s_az @ m @ d
    s_zt = d.T @ m.T @ s_z @ m @ d
    s_zty = d.T @ m.T @ s_zy
    lhs = s_azt @ np.linalg.solve(s_zt, s_azt.T)
    if np.linalg.cond(lhs) > 1e10:
        raise RelevanceError("conditional relevance failure: E[Aᵀ P_Z̃ A] singular")
    rhs = s_azt @ np.linalg.solve(s_zt, s_zty)
    return np.linalg.solve(lhs, rhs).reshape(-1)


def population_icc_beta_at_rank(mom: PopulationMoments, r: int,
                                controls=()) -> np.ndarray:
    """population_icc_beta with c_z set to the rank-r proxy-projection span.

    Matches the estimator's construction of T: the span projected out is
    that of Cov(Z, T) with T the top-r reduced-rank regression control.
    """
    if int(r) == 0:
        return population_icc_beta(mom, None, controls=controls)
    if controls:
        idx = _indices(mom, ["z", "w"])
        idx_c = _indices(mom, list(controls))
        sig = _partial_out(mom.sigma, idx, idx_c)
        d_z = mom.slices["z"].stop - mom.slices["z"].start
        sub = PopulationMoments(sigma=sig, slices={"z": slice(0, d_z), "w": slice(d_z, sig.shape[0])})
    else:
        sub = mom
    load = population_control_loadings(sub, r)
    c_z = sub.var("z") @ load
    return population_icc_beta(mom, c_z, controls=controls)


def spec_s1() -> LinearDGPSpec:
    """Small benchmark model with one confounder and a known bias pattern.

    One latent U drives the first two of three instruments and both proxies;
    the treatment loads on the first (confounded) instrument.  Unit shock
    variances throughout, causal coefficient 2.
    """
    return LinearDGPSpec(
        gamma_z=[[1.0, 1.0, 0.0]],
        gamma_w=[[1.0, 1.0]],
        zeta=[1.0, 0.0, 0.0],
        gamma_a=[1.0],
        gamma_y=[1.0],
        beta=[2.0],
    )
