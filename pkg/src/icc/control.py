"""Reduced-rank proxy projection and instrument orthogonalization.

The control variable T is the rank-r part of the linear projection of the
proxies W on the instruments Z (and covariates X): regress W on (1, Z, X),
take the SVD of the Z-coefficient block in unit-variance Z coordinates, and
keep the top r singular directions.  Conditioning on T holds fixed exactly
the instrument variation that covaries with the proxies, which is the
variation attributable to the latent confounders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data import Dataset, DegenerateControlError
from .lineardgp import PopulationMoments, population_control_loadings

__all__ = [
    "GammaTilde",
    "ControlFunction",
    "estimate_gamma_tilde",
    "build_control",
    "orthogonalize_instruments",
    "population_control",
]


def _design_labels(d_z: int, d_x: int):
    return ["const"] + [f"z{j + 1}" for j in range(d_z)] + [f"x{j + 1}" for j in range(d_x)]


def _check_full_rank(design: np.ndarray, labels):
    _, rdiag, piv = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rdiag))
    tol = design.shape[0] * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    bad = diag <= tol
    if bad.any():
        names = [labels[piv[i]] for i in np.nonzero(bad)[0]]
        raise DegenerateControlError(f"design matrix rank deficient; collinear columns: {names}")


@dataclass(frozen=True)
class GammaTilde:
    """OLS projection of each proxy column on (intercept, Z, X).

    coef is the Z-block in original units; singular_values, p0 and q0 come
    from the SVD of the Z-block rescaled to unit-standard-deviation
    instrument coordinates (coef_std = diag(sd_z) @ coef).
    """

    coef: np.ndarray
    x_coef: np.ndarray
    intercept: np.ndarray
    singular_values: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    mean_z: np.ndarray
    sd_z: np.ndarray
    mean_x: np.ndarray
    n: int

    @property
    def coef_std(self) -> np.ndarray:
        return self.sd_z[:, None] * self.coef

    def rank_stat(self, r: int) -> float:
        """n times the sum of squared singular values past the r-th."""
        return float(self.n * np.sum(self.singular_values[int(r):] ** 2))


def estimate_gamma_tilde(data: Dataset) -> GammaTilde:
    """Project the proxy block on (intercept, instruments, covariates)."""
    n, d_z, d_x = data.n, data.d_z, data.d_x
    if n <= d_z + d_x + 1:
        raise ValueError(f"need n > {d_z + d_x + 1} rows for the proxy projection")
    design = np.column_stack([np.ones(n), data.z, data.x])
    _check_full_rank(design, _design_labels(d_z, d_x))
    coefs, _, _, _ = np.linalg.lstsq(design, data.w, rcond=None)
    intercept = coefs[0]
    coef = coefs[1:1 + d_z]
    x_coef = coefs[1 + d_z:]
    sd_z = data.z.std(axis=0, ddof=1)
    p0, sv, q0t = np.linalg.svd(sd_z[:, None] * coef, full_matrices=False)
    return GammaTilde(coef=coef, x_coef=x_coef, intercept=intercept,
                      singular_values=sv, p0=p0, q0=q0t.T,
                      mean_z=data.z.mean(axis=0), sd_z=sd_z,
                      mean_x=data.x.mean(axis=0) if d_x else np.empty(0), n=n)


@dataclass(frozen=True)
class ControlFunction:
    """Linear control T = Z @ z_loadings (+ X @ x_loadings when used).

    z_loadings maps raw instruments to the top-r singular directions of the
    proxy projection, so the realized values are recomputable from the
    loadings alone.  values is None for population-level controls.
    """

    r: int
    z_loadings: np.ndarray
    x_loadings: np.ndarray | None = None
    values: np.ndarray | None = None

    def apply(self, z: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
        t = np.asarray(z, dtype=float) @ self.z_loadings
        if self.x_loadings is not None and self.x_loadings.size:
            t = t + np.asarray(x, dtype=float) @ self.x_loadings
        return t

    def to_dict(self) -> dict:
        return {"r": int(self.r),
                "z_loadings": self.z_loadings.tolist(),
                "x_loadings": None if self.x_loadings is None else self.x_loadings.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ControlFunction":
        xl = d.get("x_loadings")
        return cls(r=int(d["r"]), z_loadings=np.asarray(d["z_loadings"], dtype=float),
                   x_loadings=None if xl is None else np.asarray(xl, dtype=float))


def build_control(data: Dataset, gt: GammaTilde, r: int,
                  include_x: bool = False) -> ControlFunction:
    """Rank-r control from a fitted proxy projection.

    z_loadings = diag(1/sd_z) @ p0[:, :r] @ diag(singular values), i.e. the
    standardized-scale directions mapped back to raw instrument units.
    r = 0 yields an empty (n, 0) control.
    """
    r = int(r)
    r_max = min(data.d_z, data.d_w)
    if r < 0 or r > r_max:
        raise ValueError(f"rank must be in [0, {r_max}], got {r}")
    if r > 0 and gt.singular_values[r - 1] <= 1e-14 * max(gt.singular_values[0], 1.0):
        raise DegenerateControlError(
            f"proxy projection rank < {r}: singular values {gt.singular_values}")
    load = (gt.p0[:, :r] * gt.singular_values[:r]) / gt.sd_z[:, None]
    x_load = None
    values = data.z @ load
    if include_x and data.d_x:
        x_load = gt.x_coef @ gt.q0[:, :r]
        values = values + data.x @ x_load
    return ControlFunction(r=r, z_loadings=load, x_loadings=x_load, values=values)


def _orthogonal_map(sigma_z: np.ndarray, loadings: np.ndarray) -> np.ndarray:
    """The d_Z x (d_Z - r) map sending Z to orthogonalized instruments.

    Right-multiplying Z by I - L (Lᵀ Σ_Z L)⁻¹ Lᵀ Σ_Z annihilates covariance
    with T = Z L; the surviving column space is rotated onto an orthonormal
    basis.
    """
    d_z = sigma_z.shape[0]
    r = loadings.shape[1]
    if r == 0:
        return np.eye(d_z)
    gram = loadings.T @ sigma_z @ loadings
    if np.linalg.cond(gram) > 1e12:
        raise DegenerateControlError("degenerate control: Cov(T) singular")
    m = np.eye(d_z) - loadings @ np.linalg.solve(gram, loadings.T @ sigma_z)
    uu, sv, _ = np.linalg.svd(m)
    keep = sv > max(d_z * np.finfo(float).eps * sv[0], 1e-12)
    d = uu[:, keep]
    if d.shape[1] != d_z - r:
        raise DegenerateControlError(
            f"orthogonal complement has dimension {d.shape[1]}, expected {d_z - r}")
    return m @ d


def orthogonalize_instruments(data_or_moments, cf: ControlFunction):
    """Project the confounded directions out of the instruments.

    For a Dataset, returns the n x (d_Z - r) matrix Z̃ with sample
    Cov(Z̃, T) = 0; with r = 0 this is Z itself.  For PopulationMoments,
    returns the d_Z x (d_Z - r) linear map, so e.g. Cov(W, Z̃) equals
    Σ_WZ @ map.
    """
    if isinstance(data_or_moments, PopulationMoments):
        return _orthogonal_map(data_or_moments.var("z"), cf.z_loadings)
    data = data_or_moments
    if cf.r == 0:
        return data.z.copy()
    sigma_z = np.cov(data.z, rowvar=False, ddof=1).reshape(data.d_z, data.d_z)
    return data.z @ _orthogonal_map(sigma_z, cf.z_loadings)


def population_control(mom: PopulationMoments, r: int) -> ControlFunction:
    """Population analog of estimate_gamma_tilde + build_control."""
    return ControlFunction(r=int(r), z_loadings=population_control_loadings(mom, r))
