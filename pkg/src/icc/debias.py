"""Debiased moment construction for finite-support models.

The target is a treatment contrast theta = k0(a1) - k0(a0), where k0 solves
a chain of conditional-moment equations: g0 is the outcome regression on
the instruments, tau0 is the proxy-confounded part of g0, and k0ure solves
E[k(A)|Z] = g0(Z) - tau0(Z).  Each stage has a companion debiasing
function, and the fully debiased moment m3 is insensitive to first-order
estimation error in every nuisance.  On finite supports everything reduces
to small weighted linear algebra, so the identities can be verified to
machine precision; the cross-fitted estimator at the end runs the same
construction on empirical tables.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import SeedSpec, StrongRelevanceError
from .discrete import JointTable, cond_expect

__all__ = [
    "SieveSpace",
    "DebiasSystem",
    "NuisanceSet",
    "DmlResult",
    "build_system",
    "solve_nuisances",
    "compute_nuisances_exact",
    "population_m3",
    "moment_m3",
    "perturb_nuisances",
    "verify_error_decomposition",
    "error_bound",
    "check_neyman_orthogonality",
    "solve_q_tau",
    "solve_alpha_g",
    "dml_estimate",
]

_CUT = 1e-10


@dataclass(frozen=True)
class SieveSpace:
    """Finite basis for functions of one variable.

    The indicator basis is the identity on the support and spans every
    function of a discrete variable, so sieve error is exactly zero there.
    """

    name: str
    basis: np.ndarray

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.basis, dtype=float))
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def indicator(cls, name: str, size: int) -> "SieveSpace":
        return cls(name=name, basis=np.eye(size))

    @classmethod
    def polynomial(cls, name: str, values: np.ndarray, degree: int) -> "SieveSpace":
        v = np.asarray(values, dtype=float).reshape(-1)
        return cls(name=name, basis=np.vander(v, degree + 1, increasing=True))

    def gram(self, weights: np.ndarray) -> np.ndarray:
        w = np.asarray(weights, dtype=float).reshape(-1)
        return self.basis.T @ (w[:, None] * self.basis)


def _null_space(mat: np.ndarray) -> np.ndarray:
    u, sv, vh = np.linalg.svd(mat)
    rank = int((sv > _CUT * max(sv[0] if sv.size else 0.0, 1e-300)).sum())
    return vh[rank:].T


def _col_space(mat: np.ndarray) -> np.ndarray:
    u, sv, vh = np.linalg.svd(mat)
    rank = int((sv > _CUT * max(sv[0] if sv.size else 0.0, 1e-300)).sum())
    return u[:, :rank]


@dataclass(frozen=True)
class DebiasSystem:
    """Conditional-probability operators of a finite model, plus the
    restricted spaces the nuisance chain lives in.

    l maps functions of A to functions of Z (a-conditional mean given Z),
    m maps functions of Z to functions of W, n maps functions of W to
    functions of Z.  b_k spans the treatment functions whose Z-image is
    mean-zero given the proxies; b_t spans the proxy-explainable functions
    of Z.  pi holds the contrast functional and gy the outcome transform
    on the Y support.
    """

    p_z: np.ndarray
    p_w: np.ndarray
    p_a: np.ndarray
    l: np.ndarray
    m: np.ndarray
    n: np.ndarray
    b_k: np.ndarray
    b_t: np.ndarray
    g0: np.ndarray
    gy: np.ndarray
    pi: np.ndarray
    tau_mode: str

    def ip_z(self, f, g) -> float:
        return float(np.sum(self.p_z * np.asarray(f) * np.asarray(g)))

    def ip_w(self, f, g) -> float:
        return float(np.sum(self.p_w * np.asarray(f) * np.asarray(g)))

    def ip_a(self, f, g) -> float:
        return float(np.sum(self.p_a * np.asarray(f) * np.asarray(g)))

    def norm_z(self, f) -> float:
        return float(np.sqrt(max(self.ip_z(f, f), 0.0)))

    def norm_w(self, f) -> float:
        return float(np.sqrt(max(self.ip_w(f, f), 0.0)))

    def norm_a(self, f) -> float:
        return float(np.sqrt(max(self.ip_a(f, f), 0.0)))

    def project_k(self, vec_a: np.ndarray) -> np.ndarray:
        """Projection onto the restricted treatment space, weighted by the
        treatment marginal."""
        bk = self.b_k
        if bk.shape[1] == 0:
            return np.zeros_like(vec_a)
        gram = bk.T @ (self.p_a[:, None] * bk)
        coef = np.linalg.solve(gram, bk.T @ (self.p_a * vec_a))
        return bk @ coef


def build_system(joint: JointTable, g_y=None, contrast=None,
                 tau_mode: str = "minimal") -> DebiasSystem:
    """Extract the operators and restricted spaces from an enumerated model.

    tau_mode "minimal" takes the proxy-explainable part of g0 as the
    control (the minimum-norm solution of the proxy moment equation);
    "extreme" takes the whole of g0, which forces the treatment nuisance
    to zero and is useful only as a degenerate reference point.
    """
    if tau_mode not in ("minimal", "extreme"):
        raise ValueError("tau_mode must be 'minimal' or 'extreme'")
    p_za = joint.marginal(("z", "a"))
    p_zw = joint.marginal(("z", "w"))
    p_z = p_za.sum(axis=1)
    p_w = p_zw.sum(axis=0)
    p_a = p_za.sum(axis=0)
    if (p_z <= 0).any() or (p_w <= 0).any() or (p_a <= 0).any():
        raise ValueError("debias system requires strictly positive marginals")
    l = p_za / p_z[:, None]
    n = p_zw / p_z[:, None]
    m = (p_zw / p_w[None, :]).T
    ml = m @ l
    if tau_mode == "extreme":
        b_k = _null_space(l)
        b_t = np.eye(p_z.size)
    else:
        b_k = _null_space(ml)
        b_t = _col_space(n)
    n_y = joint.size("y")
    y_vals = joint.supports["y"][:, 0]
    gy = np.asarray([g_y(v) for v in y_vals], dtype=float) if g_y is not None else y_vals.copy()
    g0 = cond_expect(joint, "y", (lambda y: g_y(y)) if g_y is not None else (lambda y: y),
                     "z").values
    n_a = p_a.size
    if contrast is None:
        contrast = (0, n_a - 1)
    i, j = contrast
    if not (0 <= i < n_a and 0 <= j < n_a) or i == j:
        raise ValueError("contrast must name two distinct treatment levels")
    pi = np.zeros(n_a)
    pi[j] = 1.0
    pi[i] = -1.0
    return DebiasSystem(p_z=p_z, p_w=p_w, p_a=p_a, l=l, m=m, n=n,
                        b_k=b_k, b_t=b_t, g0=g0, gy=gy, pi=pi, tau_mode=tau_mode)


@dataclass(frozen=True)
class NuisanceSet:
    """All six nuisance functions as vectors on the supports.

    residual_tau and residual_k report how well the two conditional-moment
    equations are satisfied; both vanish when the model admits exact
    solutions.
    """

    g: np.ndarray
    tau: np.ndarray
    k: np.ndarray
    q_k: np.ndarray
    q_tau: np.ndarray
    alpha_g: np.ndarray
    alpha_k: np.ndarray
    theta0: float
    residual_tau: float
    residual_k: float


def _solve_psd(gram: np.ndarray, rhs: np.ndarray, what: str):
    """Least-squares solve with a feasibility check on the normal system."""
    if gram.size == 0:
        if np.abs(rhs).max(initial=0.0) > 1e-8:
            raise StrongRelevanceError(
                f"alpha not in range: strong instrument relevance fails ({what}; "
                "the restricted space is trivial but the functional is not)")
        return np.zeros(0)
    coef, *_ = np.linalg.lstsq(gram, rhs, rcond=_CUT)
    gap = np.abs(gram @ coef - rhs).max(initial=0.0)
    scale = max(np.abs(rhs).max(initial=0.0), 1.0)
    if gap > 1e-8 * scale:
        raise StrongRelevanceError(
            f"alpha not in range: strong instrument relevance fails ({what}; "
            f"normal equations inconsistent, gap {gap:.2e})")
    return coef


def solve_q_tau(system: DebiasSystem, q_k: np.ndarray) -> np.ndarray:
    """Debiasing function for the control stage at a given q_k."""
    bt = system.b_t
    mbt = system.m @ bt
    gram = mbt.T @ (system.p_w[:, None] * mbt)
    rhs = bt.T @ (system.p_z * q_k)
    coef = _solve_psd(gram, rhs, "control stage")
    return mbt @ coef


def solve_alpha_g(system: DebiasSystem, q_k: np.ndarray, q_tau: np.ndarray) -> np.ndarray:
    """Debiasing function for the outcome stage at a given (q_k, q_tau)."""
    return q_k - system.n @ q_tau


def solve_nuisances(system: DebiasSystem) -> NuisanceSet:
    """Solve the nuisance chain exactly on the population operators."""
    g0 = system.g0
    if system.tau_mode == "extreme":
        tau0 = g0.copy()
    else:
        bt = system.b_t
        gram = bt.T @ (system.p_z[:, None] * bt)
        coef = np.linalg.solve(gram, bt.T @ (system.p_z * g0))
        tau0 = bt @ coef
    residual_tau = system.norm_w(system.m @ (tau0 - g0))
    rhs = g0 - tau0
    k0, *_ = np.linalg.lstsq(system.l, rhs, rcond=_CUT)
    residual_k = system.norm_z(system.l @ k0 - rhs)

    bk = system.b_k
    lbk = system.l @ bk
    gram_k = lbk.T @ (system.p_z[:, None] * lbk)
    xi_k = bk @ _solve_psd(gram_k, bk.T @ system.pi, "treatment stage")
    q_k = system.l @ xi_k
    q_tau = solve_q_tau(system, q_k)
    alpha_g = solve_alpha_g(system, q_k, q_tau)

    if bk.shape[1] > 0:
        gram_a = bk.T @ (system.p_a[:, None] * bk)
        alpha_k = bk @ np.linalg.solve(gram_a, bk.T @ system.pi)
    else:
        alpha_k = np.zeros(system.p_a.size)
    theta0 = float(system.pi @ k0)
    return NuisanceSet(g=g0, tau=tau0, k=k0, q_k=q_k, q_tau=q_tau,
                       alpha_g=alpha_g, alpha_k=alpha_k, theta0=theta0,
                       residual_tau=residual_tau, residual_k=residual_k)


def compute_nuisances_exact(joint: JointTable, g_y=None, contrast=None,
                            tau_mode: str = "minimal") -> NuisanceSet:
    """Convenience wrapper: operators plus exact nuisance solve."""
    return solve_nuisances(build_system(joint, g_y=g_y, contrast=contrast,
                                        tau_mode=tau_mode))


def population_m3(system: DebiasSystem, ns: NuisanceSet) -> float:
    """Exact expectation of the debiased moment under the model law."""
    m0 = float(system.pi @ ns.k)
    t_k = system.ip_z(ns.q_k, ns.g - ns.tau - system.l @ ns.k)
    t_tau = system.ip_w(ns.q_tau, system.m @ (ns.tau - ns.g))
    t_g = system.ip_z(ns.alpha_g, system.g0 - ns.g)
    return m0 + t_k + t_tau + t_g


def moment_m3(obs, ns: NuisanceSet, system: DebiasSystem):
    """Per-observation debiased moment; obs holds support indices (y,a,z,w)."""
    y, a, z, w = obs
    y = np.asarray(y, dtype=int)
    a = np.asarray(a, dtype=int)
    z = np.asarray(z, dtype=int)
    w = np.asarray(w, dtype=int)
    m0 = float(system.pi @ ns.k)
    return (m0
            + ns.q_k[z] * (ns.g[z] - ns.tau[z] - ns.k[a])
            + ns.q_tau[w] * (ns.tau[z] - ns.g[z])
            + ns.alpha_g[z] * (system.gy[y] - ns.g[z]))


def perturb_nuisances(system: DebiasSystem, ns: NuisanceSet, seed: SeedSpec,
                      scale: float = 0.1, link_g: bool = True) -> NuisanceSet:
    """Random perturbation that keeps each nuisance in its admissible set.

    The treatment perturbation stays in the restricted treatment space and
    the control perturbation in the proxy-explainable space.  With link_g
    the outcome regression moves consistently with both, so the perturbed
    treatment nuisance still solves its conditional-moment equation at the
    perturbed (tau, g); otherwise g moves freely.
    """
    rng = seed.rng()
    d_k = system.b_k.shape[1]
    d_t = system.b_t.shape[1]
    dk = system.b_k @ (scale * rng.standard_normal(d_k))
    dt = system.b_t @ (scale * rng.standard_normal(d_t))
    if link_g:
        dg = dt + system.l @ dk
    else:
        dg = scale * rng.standard_normal(system.p_z.size)
    dq_k = system.l @ (system.b_k @ (scale * rng.standard_normal(d_k)))
    dq_tau = system.m @ (system.b_t @ (scale * rng.standard_normal(d_t)))
    da = scale * rng.standard_normal(system.p_z.size)
    return replace(ns, k=ns.k + dk, tau=ns.tau + dt, g=ns.g + dg,
                   q_k=ns.q_k + dq_k, q_tau=ns.q_tau + dq_tau,
                   alpha_g=ns.alpha_g + da)


def verify_error_decomposition(system: DebiasSystem, ns_true: NuisanceSet,
                               ns_pert: NuisanceSet) -> dict:
    """Three-term error decomposition of the debiased moment.

    The reference debiasing functions for the later stages are re-solved at
    the perturbed earlier-stage inputs, matching the sequential structure
    of the chain.  Returns both sides and their gap.
    """
    lhs = population_m3(system, ns_pert) - ns_true.theta0
    q_tau_ref = solve_q_tau(system, ns_pert.q_k)
    alpha_g_ref = solve_alpha_g(system, ns_pert.q_k, ns_pert.q_tau)
    t1 = system.ip_z(ns_true.q_k - ns_pert.q_k,
                     system.l @ (ns_pert.k - ns_true.k))
    t2 = system.ip_w(q_tau_ref - ns_pert.q_tau,
                     system.m @ (ns_true.tau - ns_pert.tau))
    t3 = system.ip_z(alpha_g_ref - ns_pert.alpha_g, ns_pert.g - ns_true.g)
    rhs = t1 + t2 + t3
    return {"lhs": lhs, "rhs": rhs, "gap": abs(lhs - rhs),
            "terms": (t1, t2, t3)}


def error_bound(system: DebiasSystem, ns_true: NuisanceSet,
                ns_pert: NuisanceSet) -> dict:
    """Product-form bound on the moment error of a perturbed nuisance set."""
    q_tau_ref = solve_q_tau(system, ns_pert.q_k)
    alpha_g_ref = solve_alpha_g(system, ns_pert.q_k, ns_pert.q_tau)
    dk = ns_pert.k - ns_true.k
    dqk = ns_true.q_k - ns_pert.q_k
    term1 = min(system.norm_z(system.l @ dk) * system.norm_z(dqk),
                system.norm_a(dk) * system.norm_a(
                    system.project_k(dqk * system.p_z @ system.l / system.p_a)))
    dtau = ns_true.tau - ns_pert.tau
    dqt = q_tau_ref - ns_pert.q_tau
    proj_t = system.b_t @ np.linalg.solve(
        system.b_t.T @ (system.p_z[:, None] * system.b_t),
        system.b_t.T @ (system.p_z * (system.n @ dqt)))
    term2 = min(system.norm_w(system.m @ dtau) * system.norm_w(dqt),
                system.norm_z(dtau) * system.norm_z(proj_t))
    term3 = system.norm_z(ns_pert.g - ns_true.g) * system.norm_z(
        alpha_g_ref - ns_pert.alpha_g)
    lhs = abs(population_m3(system, ns_pert) - ns_true.theta0)
    return {"lhs": lhs, "bound": term1 + term2 + term3,
            "terms": (term1, term2, term3)}


def _restricted_k_solve(system: DebiasSystem, rhs: np.ndarray,
                        weighted: bool = True) -> np.ndarray:
    """Least-squares solve of E[k(A)|Z] = rhs over the restricted treatment
    space.  Used when a perturbed (tau, g) makes the equation inconsistent;
    the solution stays in the space the identities need.

    The population-weighted fit is insensitive to control-space moves
    (their Z-image is orthogonal to everything the restricted space can
    produce), so a sensitivity check that re-solves k against tau must use
    a differently weighted rule; unweighted coordinates model an estimator
    whose treatment fit does respond to the control stage.
    """
    bk = system.b_k
    if bk.shape[1] == 0:
        return np.zeros(system.p_a.size)
    lbk = system.l @ bk
    w = system.p_z if weighted else np.ones_like(system.p_z)
    gram = lbk.T @ (w[:, None] * lbk)
    coef, *_ = np.linalg.lstsq(gram, lbk.T @ (w * rhs), rcond=_CUT)
    return bk @ coef


def check_neyman_orthogonality(system: DebiasSystem, ns: NuisanceSet,
                               slot: str, seed: SeedSpec, h: float = 1e-4,
                               wrong_q_k: bool = False,
                               wrong_q_tau: bool = False,
                               wrong_tau: bool = False,
                               resolve_k: bool = False,
                               resolve_tau: bool = False,
                               track_q_tau: bool = True,
                               track_alpha_g: bool = True,
                               scale: float = 0.3) -> float:
    """Central-difference directional derivative of E[m3] in one slot.

    Every nuisance other than the perturbed one is set to a deliberately
    wrong value wherever the orthogonality statement allows it, and to the
    exact (or exactly re-solved) value where a side condition requires it.
    Exactness of a downstream debiasing function means re-solving it along
    the perturbation path, matching the sequential fit order; the resolve
    flags make the earlier-stage nuisances respond to the perturbation the
    same way (a nonzero partial of one nuisance in another).  Passing
    wrong_* together with the matching resolve or track flag produces the
    documented negative controls.  The moment is linear along every path
    used here, so the central difference is the exact derivative up to
    roundoff.
    """
    rng = seed.rng()
    d_k = system.b_k.shape[1]
    d_t = system.b_t.shape[1]
    n_z = system.p_z.size

    # Wrong treatment and control nuisances stay in their admissible
    # spaces; wrong debiasing functions move freely, the way estimation
    # error from a misspecified fit would.  A wrong q_k restricted to the
    # representable set would be orthogonal to every control direction and
    # the negative controls below would silently vanish.
    k_w = ns.k + system.b_k @ (scale * rng.standard_normal(d_k))
    tau_w = ns.tau + system.b_t @ (scale * rng.standard_normal(d_t))
    g_w = ns.g + scale * rng.standard_normal(n_z)
    q_k_w = ns.q_k + scale * rng.standard_normal(n_z)
    q_tau_w = ns.q_tau + scale * rng.standard_normal(system.p_w.size)
    alpha_w = ns.alpha_g + scale * rng.standard_normal(n_z)
    q_k_used = q_k_w if wrong_q_k else ns.q_k

    def mean_m3(k, tau, g, q_k, q_tau, alpha_g):
        probe = replace(ns, k=k, tau=tau, g=g, q_k=q_k, q_tau=q_tau,
                        alpha_g=alpha_g)
        return population_m3(system, probe)

    if slot == "k":
        dk = system.b_k @ (scale * rng.standard_normal(d_k))
        q_tau_ref = solve_q_tau(system, q_k_used)

        def value(t):
            return mean_m3(ns.k + t * dk, tau_w, g_w, q_k_used, q_tau_ref,
                           alpha_w)
    elif slot == "tau":
        dt = system.b_t @ (scale * rng.standard_normal(d_t))
        q_tau_ref = solve_q_tau(system, q_k_used)

        def value(t):
            tau_t = ns.tau + t * dt
            k_t = _restricted_k_solve(system, g_w - tau_t, weighted=False) \
                if resolve_k else k_w
            return mean_m3(k_t, tau_t, g_w, q_k_used, q_tau_ref, alpha_w)
    elif slot == "g":
        if resolve_k and not resolve_tau:
            raise ValueError("re-solving k against g requires re-solving tau "
                             "first (sequential fit order)")
        dg = scale * rng.standard_normal(n_z)
        bt = system.b_t
        gram_t = bt.T @ (system.p_z[:, None] * bt)
        q_tau_used = q_tau_w if wrong_q_tau else solve_q_tau(system, q_k_used)
        alpha_ref = solve_alpha_g(system, q_k_used, q_tau_used)

        def value(t):
            g_t = ns.g + t * dg
            if resolve_tau:
                tau_t = bt @ np.linalg.solve(gram_t, bt.T @ (system.p_z * g_t))
            else:
                tau_t = tau_w
            k_t = _restricted_k_solve(system, g_t - tau_t, weighted=False) \
                if resolve_k else k_w
            return mean_m3(k_t, tau_t, g_t, q_k_used, q_tau_used, alpha_ref)
    elif slot == "q_k":
        dq = scale * rng.standard_normal(n_z)
        tau_used = tau_w if (track_q_tau or wrong_tau) else ns.tau
        g_used = g_w if track_alpha_g else ns.g

        def value(t):
            q_k_t = ns.q_k + t * dq
            q_tau_t = solve_q_tau(system, q_k_t) if track_q_tau else q_tau_w
            alpha_t = solve_alpha_g(system, q_k_t, q_tau_t) if track_alpha_g \
                else alpha_w
            return mean_m3(ns.k, tau_used, g_used, q_k_t, q_tau_t, alpha_t)
    elif slot == "q_tau":
        dq = scale * rng.standard_normal(system.p_w.size)
        g_used = g_w if track_alpha_g else ns.g
        base = solve_q_tau(system, q_k_used)

        def value(t):
            q_tau_t = base + t * dq
            alpha_t = solve_alpha_g(system, q_k_used, q_tau_t) if track_alpha_g \
                else alpha_w
            return mean_m3(k_w, ns.tau, g_used, q_k_used, q_tau_t, alpha_t)
    elif slot == "alpha_g":
        da = scale * rng.standard_normal(n_z)
        base = solve_alpha_g(system, q_k_used, q_tau_w)

        def value(t):
            return mean_m3(k_w, tau_w, ns.g, q_k_used, q_tau_w, base + t * da)
    else:
        raise ValueError(f"unknown slot {slot!r}")

    return (value(h) - value(-h)) / (2.0 * h)


@dataclass(frozen=True)
class DmlResult:
    """Cross-fitted estimate with its plug-in standard error."""

    theta_hat: float
    sigma_hat: float
    n: int
    folds: int
    fold_estimates: np.ndarray
    ci95: tuple

    def to_dict(self) -> dict:
        return {"theta_hat": self.theta_hat, "sigma_hat": self.sigma_hat,
                "n": self.n, "folds": self.folds,
                "fold_estimates": list(map(float, self.fold_estimates)),
                "ci95": list(self.ci95)}


def _empirical_system(z, w, a, gyv, sizes, pi, t_rank, k_dim, ridge_scale):
    """Tables and restricted spaces estimated from one training split."""
    n_z, n_w, n_a = sizes
    n = z.size
    c_z = np.bincount(z, minlength=n_z).astype(float)
    c_w = np.bincount(w, minlength=n_w).astype(float)
    c_a = np.bincount(a, minlength=n_a).astype(float)
    p_z = c_z / n
    p_w = c_w / n
    c_za = np.zeros((n_z, n_a))
    np.add.at(c_za, (z, a), 1.0)
    c_zw = np.zeros((n_z, n_w))
    np.add.at(c_zw, (z, w), 1.0)
    sz = np.maximum(c_z, 1.0)
    sw = np.maximum(c_w, 1.0)
    l = c_za / sz[:, None]
    nn = c_zw / sz[:, None]
    m = (c_zw / sw[None, :]).T
    g_hat = np.zeros(n_z)
    np.add.at(g_hat, z, gyv)
    g_hat = g_hat / sz

    ml = m @ l
    _, _, vh = np.linalg.svd(ml)
    b_k = vh[max(ml.shape[1] - k_dim, 0):].T
    u, sv, _ = np.linalg.svd(nn)
    b_t = u[:, :min(t_rank, u.shape[1])]

    def ridge_solve(gram, rhs):
        lam = ridge_scale * np.trace(gram) / max(gram.shape[0], 1)
        return np.linalg.solve(gram + lam * np.eye(gram.shape[0]), rhs)

    gram_t = b_t.T @ (p_z[:, None] * b_t)
    tau = b_t @ ridge_solve(gram_t, b_t.T @ (p_z * g_hat))
    lbk = l @ b_k
    gram_kfit = lbk.T @ (p_z[:, None] * lbk)
    k_hat = b_k @ ridge_solve(gram_kfit, lbk.T @ (p_z * (g_hat - tau)))
    xi_k = b_k @ ridge_solve(gram_kfit, b_k.T @ pi)
    q_k = l @ xi_k
    mbt = m @ b_t
    gram_tfit = mbt.T @ (p_w[:, None] * mbt)
    q_tau = mbt @ ridge_solve(gram_tfit, b_t.T @ (p_z * q_k))
    alpha_g = q_k - nn @ q_tau
    m0 = float(pi @ k_hat)
    return g_hat, tau, k_hat, q_k, q_tau, alpha_g, m0


def dml_estimate(obs: np.ndarray, sizes, y_values, folds: int, seed: SeedSpec,
                 contrast=None, g_y=None, t_rank=None, k_dim=None,
                 ridge_scale: float = 1e-6) -> DmlResult:
    """Cross-fitted debiased estimate from discrete observations.

    obs is an (n, 4) integer array of support indices in column order
    (z, w, a, y); sizes gives the three design support sizes (n_z, n_w,
    n_a) and y_values the outcome support.  Nuisances are fit on each
    fold's complement from empirical tables with a small ridge, and the
    debiased moment is averaged over the held-out fold.
    """
    obs = np.asarray(obs, dtype=int)
    if obs.ndim != 2 or obs.shape[1] != 4:
        raise ValueError("obs must be an (n, 4) array of (z, w, a, y) indices")
    if folds < 2:
        raise ValueError("cross-fitting requires at least 2 folds")
    n = obs.shape[0]
    n_z, n_w, n_a = sizes
    t_rank = min(n_w, n_z) if t_rank is None else t_rank
    k_dim = n_a - min(n_w, n_a) if k_dim is None else k_dim
    if k_dim < 1:
        raise ValueError("restricted treatment space is empty; reduce t_rank "
                         "or supply k_dim >= 1")
    need = 5 * (n_z + n_w + n_a)
    if n - n // folds < need:
        raise ValueError(f"fold complement too small for the sieve; need at "
                         f"least n = {need * folds // (folds - 1)}")
    y_values = np.asarray(y_values, dtype=float).reshape(-1)
    gy_all = np.asarray([g_y(v) for v in y_values]) if g_y is not None else y_values
    if contrast is None:
        contrast = (0, n_a - 1)
    pi = np.zeros(n_a)
    pi[contrast[1]] = 1.0
    pi[contrast[0]] = -1.0

    perm = seed.rng().permutation(n)
    fold_id = np.empty(n, dtype=int)
    fold_id[perm] = np.arange(n) % folds
    z, w, a, y = obs[:, 0], obs[:, 1], obs[:, 2], obs[:, 3]
    gyv = gy_all[y]

    fold_means = np.zeros(folds)
    all_m3 = np.empty(n)
    for j in range(folds):
        tr = fold_id != j
        te = ~tr
        g_hat, tau, k_hat, q_k, q_tau, alpha_g, m0 = _empirical_system(
            z[tr], w[tr], a[tr], gyv[tr], sizes, pi, t_rank, k_dim, ridge_scale)
        vals = (m0
                + q_k[z[te]] * (g_hat[z[te]] - tau[z[te]] - k_hat[a[te]])
                + q_tau[w[te]] * (tau[z[te]] - g_hat[z[te]])
                + alpha_g[z[te]] * (gyv[te] - g_hat[z[te]]))
        fold_means[j] = vals.mean()
        all_m3[te] = vals
    theta_hat = float(fold_means.mean())
    sigma_hat = float(np.sqrt(np.mean((all_m3 - theta_hat) ** 2)))
    half = 1.96 * sigma_hat / np.sqrt(n)
    return DmlResult(theta_hat=theta_hat, sigma_hat=sigma_hat, n=n,
                     folds=folds, fold_estimates=fold_means,
                     ci95=(theta_hat - half, theta_hat + half))
