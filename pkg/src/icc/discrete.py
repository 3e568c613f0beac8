"""Exact enumeration over finite-support models.

Everything here is closed-form summation over small tensors: the joint law
of (U, Z, W, A, Y) is a product of conditional tables, so conditional
expectations, conditional-independence checks and the linear bridge system
can all be evaluated to machine precision.  These exact answers serve as
the oracle against which the sampling-based machinery is tested.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CompletenessError, SeedSpec

__all__ = [
    "DiscreteModel",
    "JointTable",
    "CondExpect",
    "CompletenessReport",
    "BridgeSolution",
    "MeanDeviation",
    "enumerate_joint",
    "cond_expect",
    "minimal_discrete_control",
    "check_completeness",
    "solve_ls_bridge",
    "counterfactual_mean_deviation",
    "sample_from_joint",
    "random_discrete_model",
    "random_class_model",
    "separable_class_model",
    "sharp_discrete_model",
]

AXES = ("u", "z", "w", "a", "y")

_ATOL = 1e-12


def _support(arr, name: str) -> np.ndarray:
    s = np.asarray(arr, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.ndim != 2 or s.shape[0] == 0:
        raise ValueError(f"support {name} must be a nonempty 1-d or 2-d grid")
    return s


def _check_pmf(table: np.ndarray, axis: int, name: str):
    if (table < -_ATOL).any():
        raise ValueError(f"{name} has negative entries")
    sums = table.sum(axis=axis)
    if not np.allclose(sums, 1.0, atol=1e-9):
        raise ValueError(f"{name} slices do not sum to one (max dev {np.abs(sums - 1).max():.2e})")


@dataclass(frozen=True)
class DiscreteModel:
    """Finite structural model factored per the exclusion restrictions.

    The treatment table may depend on (Z, U, W) and the outcome table on
    (A, U, W) but not Z, and Z and W are drawn independently given U; the
    factorization itself encodes the conditional exclusion and the
    common-confounder structure.
    """

    support_u: np.ndarray
    support_z: np.ndarray
    support_w: np.ndarray
    support_a: np.ndarray
    support_y: np.ndarray
    p_u: np.ndarray
    p_z_u: np.ndarray
    p_w_u: np.ndarray
    p_a_zuw: np.ndarray
    p_y_auw: np.ndarray

    def __post_init__(self):
        sup = {n: _support(getattr(self, f"support_{n}"), n) for n in AXES}
        n_u, n_z, n_w, n_a, n_y = (sup[n].shape[0] for n in AXES)
        p_u = np.asarray(self.p_u, dtype=float).reshape(n_u)
        p_z_u = np.asarray(self.p_z_u, dtype=float).reshape(n_u, n_z)
        p_w_u = np.asarray(self.p_w_u, dtype=float).reshape(n_u, n_w)
        p_a_zuw = np.asarray(self.p_a_zuw, dtype=float).reshape(n_z, n_u, n_w, n_a)
        p_y_auw = np.asarray(self.p_y_auw, dtype=float).reshape(n_a, n_u, n_w, n_y)
        _check_pmf(p_u, 0, "p_u")
        _check_pmf(p_z_u, 1, "p_z_u")
        _check_pmf(p_w_u, 1, "p_w_u")
        _check_pmf(p_a_zuw, 3, "p_a_zuw")
        _check_pmf(p_y_auw, 3, "p_y_auw")
        for name, arr in (("p_u", p_u), ("p_z_u", p_z_u), ("p_w_u", p_w_u),
                          ("p_a_zuw", p_a_zuw), ("p_y_auw", p_y_auw)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for n in AXES:
            sup[n].setflags(write=False)
            object.__setattr__(self, f"support_{n}", sup[n])

    def sizes(self) -> dict:
        return {n: getattr(self, f"support_{n}").shape[0] for n in AXES}

    def to_dict(self) -> dict:
        d = {f"support_{n}": getattr(self, f"support_{n}").tolist() for n in AXES}
        for name in ("p_u", "p_z_u", "p_w_u", "p_a_zuw", "p_y_auw"):
            d[name] = getattr(self, name).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteModel":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in d.items()})


@dataclass(frozen=True)
class JointTable:
    """Flat joint pmf over U x Z x W x A x Y with the supports attached."""

    probs: np.ndarray
    supports: dict

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 5:
            raise ValueError("joint table must have five axes (u, z, w, a, y)")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"joint pmf sums to {p.sum():.12f}, not 1")
        if (p < -_ATOL).any():
            raise ValueError("joint pmf has negative entries")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def axis(self, name: str) -> int:
        return AXES.index(name)

    def size(self, name: str) -> int:
        return self.probs.shape[self.axis(name)]

    def marginal(self, names) -> np.ndarray:
        """Marginal pmf over the named axes, in AXES order."""
        names = (names,) if isinstance(names, str) else tuple(names)
        drop = tuple(i for i, n in enumerate(AXES) if n not in names)
        return self.probs.sum(axis=drop)


def enumerate_joint(model: DiscreteModel) -> JointTable:
    """Multiply out the factored tables into the exact joint pmf."""
    probs = np.einsum("u,uz,uw,zuwa,auwy->uzway",
                      model.p_u, model.p_z_u, model.p_w_u,
                      model.p_a_zuw, model.p_y_auw)
    sup = {n: getattr(model, f"support_{n}") for n in AXES}
    return JointTable(probs=probs, supports=sup)


@dataclass(frozen=True)
class CondExpect:
    """Conditional means on the grid of the conditioning variables.

    values has one axis per conditioning variable (AXES order); cells whose
    conditioning event has zero probability are NaN with defined=False.
    """

    values: np.ndarray
    defined: np.ndarray
    given: tuple

    @property
    def n_undefined(self) -> int:
        return int((~self.defined).sum())


def _mesh_values(joint: JointTable, names):
    """Support values of the named axes broadcast over the full joint shape."""
    out = []
    for n in names:
        sup = joint.supports[n]
        vals = sup[:, 0] if sup.shape[1] == 1 else sup
        shape = [1] * 5
        shape[joint.axis(n)] = joint.size(n)
        if vals.ndim == 1:
            out.append(vals.reshape(shape))
        else:
            out.append(vals.reshape(shape + [vals.shape[1]]))
    return out


def cond_expect(joint: JointTable, f_vars, f, given=()) -> CondExpect:
    """E[f(f_vars) | given] evaluated by exact summation.

    f is applied to broadcastable arrays of support values, one per name in
    f_vars.  The result is a table over the conditioning variables; with
    given=() it is the scalar unconditional mean (shape ()).
    """
    f_vars = (f_vars,) if isinstance(f_vars, str) else tuple(f_vars)
    given = (given,) if isinstance(given, str) else tuple(given)
    vals = np.asarray(f(*_mesh_values(joint, f_vars)), dtype=float)
    weighted = np.broadcast_to(vals, joint.probs.shape) * joint.probs
    keep = tuple(sorted(joint.axis(n) for n in given))
    drop = tuple(i for i in range(5) if i not in keep)
    num = weighted.sum(axis=drop)
    den = joint.probs.sum(axis=drop)
    defined = den > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(defined, num / np.where(defined, den, 1.0), np.nan)
    order = tuple(n for n in AXES if n in given)
    return CondExpect(values=out, defined=defined, given=order)


def minimal_discrete_control(joint: JointTable, tol: float = 1e-10) -> np.ndarray:
    """Coarsest labeling of the instrument support with W independent of Z
    inside every class.

    Instrument values are grouped by equality of their proxy conditional
    P(W = . | Z = z); zero-probability instrument values carry no constraint
    and are lumped into class 0.
    """
    p_zw = joint.marginal(("z", "w"))
    p_z = p_zw.sum(axis=1)
    n_z = p_z.shape[0]
    labels = np.full(n_z, -1, dtype=int)
    rows = np.full((n_z, p_zw.shape[1]), np.nan)
    live = p_z > 0
    rows[live] = p_zw[live] / p_z[live, None]
    next_label = 1 if (~live).any() else 0
    labels[~live] = 0
    for z in range(n_z):
        if labels[z] >= 0:
            continue
        labels[z] = next_label
        for z2 in range(z + 1, n_z):
            if labels[z2] < 0 and np.abs(rows[z2] - rows[z]).max() <= tol:
                labels[z2] = next_label
        next_label += 1
    return labels


@dataclass(frozen=True)
class CompletenessReport:
    """Rank diagnosis of the conditional-probability operator."""

    passed: bool
    ranks: list
    required: list
    of: str
    given: str

    def __bool__(self) -> bool:
        return self.passed


def _rank(mat: np.ndarray) -> int:
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    return int((sv > 1e-10 * max(sv[0], 1e-300)).sum())


def check_completeness(joint: JointTable, of: str, given: str,
                       conditional_on=None) -> CompletenessReport:
    """Full-column-rank test of the map f(of) -> E[f(of) | given].

    Completeness of `of` for `given` in the finite world is exactly the
    statement that the matrix P(of | given), rows indexed by the observed
    variable, has full column rank over the positive-mass values of `of`.
    conditional_on may name a third variable, or provide an integer
    labeling of the `given` support; the rank condition must then hold in
    every conditioning cell.
    """
    if conditional_on is None:
        cells = [None]
    elif isinstance(conditional_on, str):
        cells = [(conditional_on, v) for v in range(joint.size(conditional_on))]
    else:
        lab = np.asarray(conditional_on, dtype=int)
        if lab.shape != (joint.size(given),):
            raise ValueError("labeling length must match the conditioning support")
        cells = [("__labels__", lab, v) for v in np.unique(lab)]

    def pair_matrix():
        # marginal axes follow AXES order; orient with `given` on rows
        pair = joint.marginal((of, given))
        return pair.T if AXES.index(of) < AXES.index(given) else pair

    ranks, required = [], []
    for cell in cells:
        if cell is None:
            pair = pair_matrix()
        elif cell[0] == "__labels__":
            _, lab, v = cell
            pair = pair_matrix()[np.asarray(lab == v).nonzero()[0]]
        else:
            name, v = cell
            tri = joint.marginal((of, given, name))
            order = tuple(n for n in AXES if n in (of, given, name))
            tri = np.moveaxis(tri, order.index(name), 0)[v]
            rest = tuple(n for n in order if n != name)
            pair = tri if rest.index(given) == 0 else tri.T
        rows = pair.sum(axis=1) > 0
        cols = pair.sum(axis=0) > 0
        sub = pair[np.ix_(rows, cols)]
        cond = sub / sub.sum(axis=1, keepdims=True)
        ranks.append(_rank(cond))
        required.append(int(cols.sum()))
    passed = all(r == q for r, q in zip(ranks, required))
    return CompletenessReport(passed=passed, ranks=ranks, required=required,
                              of=of, given=given)


@dataclass(frozen=True)
class BridgeSolution:
    """Minimum-norm solution of E[h(A,T)|Z] = E[Y|Z], stored per class."""

    h: np.ndarray
    labels: np.ndarray
    p_t: np.ndarray
    p_a: np.ndarray
    residual: float

    def theta(self, pi: np.ndarray) -> float:
        """Weighted treatment contrast sum_t P(t) sum_a h(a,t) pi(a)."""
        pi = np.asarray(pi, dtype=float).reshape(self.h.shape[0])
        return float(self.p_t @ (self.h.T @ pi))


def solve_ls_bridge(joint: JointTable, labels: np.ndarray) -> BridgeSolution:
    """Solve the outcome bridge system on each control class.

    The control is a function of Z alone, so the linear system decouples
    into one block per class: P(A=a|Z=z) h(a,t) = E[Y|Z=z] over the class's
    instrument values.  Each block must have full column rank over the
    reachable treatments; the minimum-norm solve guards roundoff only.
    """
    labels = np.asarray(labels, dtype=int)
    n_z, n_a = joint.size("z"), joint.size("a")
    if labels.shape != (n_z,):
        raise ValueError("labels must assign a class to every instrument value")
    p_za = joint.marginal(("z", "a"))
    p_z = p_za.sum(axis=1)
    e_y_z = cond_expect(joint, "y", lambda y: y, "z")
    uniq = np.unique(labels)
    h = np.zeros((n_a, uniq.size))
    p_t = np.zeros(uniq.size)
    resid = 0.0
    for j, t in enumerate(uniq):
        zs = np.nonzero((labels == t) & (p_z > 0))[0]
        p_t[j] = p_z[zs].sum()
        if zs.size == 0:
            continue
        m = p_za[zs] / p_z[zs, None]
        cols = m.sum(axis=0) > 0
        if _rank(m[:, cols]) < int(cols.sum()):
            rep = check_completeness(joint, "a", "z", conditional_on=labels)
            raise CompletenessError(
                f"completeness failure: bridge system rank {_rank(m[:, cols])} < "
                f"{int(cols.sum())} reachable treatments in class {int(t)}; "
                f"rank report {rep.ranks} vs required {rep.required}")
        rhs = e_y_z.values[zs]
        sol, *_ = np.linalg.lstsq(m[:, cols], rhs, rcond=1e-10)
        h[cols, j] = sol
        resid = max(resid, float(np.abs(m[:, cols] @ sol - rhs).max(initial=0.0)))
    return BridgeSolution(h=h, labels=labels, p_t=p_t,
                          p_a=joint.marginal("a"), residual=resid)


@dataclass(frozen=True)
class MeanDeviation:
    """Counterfactual mean deviation k0 with its Fredholm residual."""

    k0: np.ndarray
    fredholm_residual: float
    n_empty_cells: int


def counterfactual_mean_deviation(joint: JointTable, labels: np.ndarray) -> MeanDeviation:
    """Average within-(T,U) outcome deviation of each treatment level.

    k0(a) integrates E[Y|A=a, T=t, U=u] - E[Y|T=t, U=u] over the (T, U)
    law; (t, u) cells that cannot realize treatment a are excluded and the
    remaining mass renormalized, with the exclusion counted.  The Fredholm
    residual reports max_z |E[k0(A)|Z=z] - (E[Y|Z=z] - E[Y|T=t(z)])|, which
    is zero when the deviation solves the bridge equation for this model.
    """
    labels = np.asarray(labels, dtype=int)
    uniq, t_of_z = np.unique(labels, return_inverse=True)
    n_t = uniq.size
    n_u, n_z, n_w, n_a, n_y = joint.probs.shape
    y_vals = joint.supports["y"][:, 0]

    # p(u, t, a, y) by collapsing z onto classes
    p_uzay = joint.probs.sum(axis=2)
    p_utay = np.zeros((n_u, n_t, n_a, n_y))
    for z in range(n_z):
        p_utay[:, t_of_z[z]] += p_uzay[:, z]

    p_uta = p_utay.sum(axis=3)
    p_ut = p_uta.sum(axis=2)
    ey_uta = np.full((n_u, n_t, n_a), np.nan)
    live_uta = p_uta > 0
    ey_uta[live_uta] = (p_utay @ y_vals)[live_uta] / p_uta[live_uta]
    ey_ut = np.zeros((n_u, n_t))
    live_ut = p_ut > 0
    ey_ut[live_ut] = (p_utay.sum(axis=2) @ y_vals)[live_ut] / p_ut[live_ut]

    k0 = np.zeros(n_a)
    empty = 0
    for a in range(n_a):
        cell = live_uta[:, :, a] & live_ut
        mass = p_ut[cell].sum()
        empty += int((live_ut & ~cell).sum())
        if mass <= 0:
            continue
        dev = ey_uta[:, :, a][cell] - ey_ut[cell]
        k0[a] = float((p_ut[cell] * dev).sum() / mass)

    # residual of the bridge display under this model's law
    p_za = joint.marginal(("z", "a"))
    p_z = p_za.sum(axis=1)
    live_z = p_z > 0
    e_k0_z = (p_za[live_z] / p_z[live_z, None]) @ k0
    g0 = cond_expect(joint, "y", lambda y: y, "z").values[live_z]
    ey_t = np.zeros(n_t)
    p_t = np.zeros(n_t)
    for z in np.nonzero(live_z)[0]:
        p_t[t_of_z[z]] += p_z[z]
    p_ty = np.zeros((n_t, n_y))
    p_zy = joint.marginal(("z", "y"))
    for z in np.nonzero(live_z)[0]:
        p_ty[t_of_z[z]] += p_zy[z]
    live_t = p_t > 0
    ey_t[live_t] = (p_ty @ y_vals)[live_t] / p_t[live_t]
    tau0 = ey_t[t_of_z[live_z]]
    residual = float(np.abs(e_k0_z - (g0 - tau0)).max(initial=0.0))
    return MeanDeviation(k0=k0, fredholm_residual=residual, n_empty_cells=empty)


def sample_from_joint(joint: JointTable, n: int, seed: SeedSpec):
    """Draw n iid index tuples from the joint pmf.

    Returns an (n, 5) integer array of support indices in AXES order; the
    caller maps indices to support values as needed.
    """
    flat = np.clip(joint.probs.reshape(-1), 0.0, None)
    rng = seed.rng()
    idx = rng.choice(flat.size, size=n, p=flat / flat.sum())
    return np.column_stack(np.unravel_index(idx, joint.probs.shape))


def _dirichlet_rows(rng, shape, floor=0.05):
    """Strictly positive stochastic rows; the floor keeps cells well away
    from zero so rank checks are not borderline."""
    raw = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1]) if len(shape) > 1 \
        else rng.dirichlet(np.ones(shape[-1]))
    raw = np.asarray(raw)
    raw = raw + floor
    return raw / raw.sum(axis=-1, keepdims=True)


def random_discrete_model(seed: SeedSpec, n_u=2, n_z=3, n_w=2, n_a=2, n_y=3) -> DiscreteModel:
    """Fully random tables on integer supports."""
    rng = seed.rng()
    return DiscreteModel(
        support_u=np.arange(n_u, dtype=float),
        support_z=np.arange(n_z, dtype=float),
        support_w=np.arange(n_w, dtype=float),
        support_a=np.arange(n_a, dtype=float),
        support_y=np.arange(n_y, dtype=float),
        p_u=_dirichlet_rows(rng, (n_u,)),
        p_z_u=_dirichlet_rows(rng, (n_u, n_z)),
        p_w_u=_dirichlet_rows(rng, (n_u, n_w)),
        p_a_zuw=_dirichlet_rows(rng, (n_z, n_u, n_w, n_a)),
        p_y_auw=_dirichlet_rows(rng, (n_a, n_u, n_w, n_y)),
    )


def sharp_discrete_model(seed: SeedSpec, n_u=2, n_z=4, n_w=2, n_y=3,
                         sharp=0.7, floor=0.05) -> DiscreteModel:
    """Random confounded model with strong instrument relevance.

    The treatment table mixes a diagonal map (level z is pushed toward
    treatment z) with random rows, and the proxy table mixes the identity
    with random rows, so the conditional-moment systems of the debiasing
    chain are well conditioned and the debiasing weights stay small.  The
    treatment support is tied to the instrument support (n_a = n_z), which
    keeps the treatment-stage equation square and solvable for generic
    tables.  Confounding runs through U into Z, A, and Y.
    """
    rng = seed.rng()
    n_a = n_z
    p_w_u = ((1 - sharp) * _dirichlet_rows(rng, (n_u, n_w), floor)
             + sharp * np.eye(n_u, n_w))
    p_w_u = p_w_u / p_w_u.sum(axis=1, keepdims=True)
    peak = np.zeros((n_z, n_u, n_w, n_a))
    for z in range(n_z):
        peak[z, :, :, z % n_a] = 1.0
    p_a_zuw = ((1 - sharp) * _dirichlet_rows(rng, (n_z, n_u, n_w, n_a), floor)
               + sharp * peak)
    p_a_zuw = p_a_zuw / p_a_zuw.sum(axis=-1, keepdims=True)
    return DiscreteModel(
        support_u=np.arange(n_u, dtype=float),
        support_z=np.arange(n_z, dtype=float),
        support_w=np.arange(n_w, dtype=float),
        support_a=np.arange(n_a, dtype=float),
        support_y=np.arange(n_y, dtype=float),
        p_u=np.full(n_u, 1.0 / n_u),
        p_z_u=_dirichlet_rows(rng, (n_u, n_z), floor),
        p_w_u=p_w_u,
        p_a_zuw=p_a_zuw,
        p_y_auw=_dirichlet_rows(rng, (n_a, n_u, n_w, n_y), floor),
    )


def random_class_model(seed: SeedSpec, n_u=2, n_classes=2, per_class=2,
                       n_w=None, n_a=2, n_y=3) -> tuple:
    """Random model whose instrument support has built-in control classes.

    Z is a (class, within) pair and the within-class distribution does not
    depend on U, so P(U | Z) is constant on each class; the class labeling
    is the exact minimal control.  Proxy tables are redrawn until the proxy
    completeness gate passes, so the Lemma premises hold by construction.
    Returns (model, class_labels).
    """
    rng = seed.rng()
    n_w = n_u if n_w is None else n_w
    if n_w < n_u:
        raise ValueError("completeness needs at least as many proxy values as confounder values")
    n_z = n_classes * per_class
    p_c_u = _dirichlet_rows(rng, (n_u, n_classes))
    q_e_c = _dirichlet_rows(rng, (n_classes, per_class))
    p_z_u = np.einsum("uc,ce->uce", p_c_u, q_e_c).reshape(n_u, n_z)
    labels = np.repeat(np.arange(n_classes), per_class)
    for _ in range(64):
        p_w_u = _dirichlet_rows(rng, (n_u, n_w))
        sv = np.linalg.svd(p_w_u, compute_uv=False)
        if sv[min(n_u, n_w) - 1] > 1e-3:
            break
    model = DiscreteModel(
        support_u=np.arange(n_u, dtype=float),
        support_z=np.arange(n_z, dtype=float),
        support_w=np.arange(n_w, dtype=float),
        support_a=np.arange(n_a, dtype=float),
        support_y=np.arange(n_y, dtype=float),
        p_u=_dirichlet_rows(rng, (n_u,)),
        p_z_u=p_z_u,
        p_w_u=p_w_u,
        p_a_zuw=_dirichlet_rows(rng, (n_z, n_u, n_w, n_a)),
        p_y_auw=_dirichlet_rows(rng, (n_a, n_u, n_w, n_y)),
    )
    return model, labels


def separable_class_model(seed: SeedSpec, n_u=2, n_classes=2, per_class=None,
                          n_w=None, n_a=2, balanced=False) -> tuple:
    """Class-structured model with an additively separable outcome.

    Y is deterministic given (A, U): y = k0(a) + e(u), so every
    counterfactual mean is known in closed form.  The within-class
    instrument count is at least the number of treatments, which makes the
    per-class bridge system full rank almost surely.

    With balanced=True the within-class coordinate is distributed
    identically across classes and the treatment responds to it alone, so
    the treatment distribution is constant across control classes.  That
    removes the class-predictive treatment variation which would otherwise
    shift the mean-deviation representation by a class-dependent constant;
    only the balanced family satisfies the bridge display exactly.
    Returns (model, class_labels, k0, e).
    """
    rng = seed.rng()
    n_w = n_u if n_w is None else n_w
    per_class = max(n_a, 2) if per_class is None else per_class
    if per_class < n_a:
        raise ValueError("bridge identification needs per_class >= n_a")
    base, labels = random_class_model(SeedSpec(seed.master_seed, seed.stream_id),
                                      n_u=n_u, n_classes=n_classes,
                                      per_class=per_class, n_w=n_w, n_a=n_a, n_y=2)
    n_z = n_classes * per_class
    p_z_u, p_a_zuw = base.p_z_u, base.p_a_zuw
    if balanced:
        p_c_u = _dirichlet_rows(rng, (n_u, n_classes))
        q_e = _dirichlet_rows(rng, (per_class,))
        p_z_u = np.einsum("uc,e->uce", p_c_u, q_e).reshape(n_u, n_z)
        for _ in range(64):
            p_a_e = _dirichlet_rows(rng, (per_class, n_a))
            if _rank(p_a_e) == n_a:
                break
        p_a_zuw = np.broadcast_to(
            np.tile(p_a_e, (n_classes, 1))[:, None, None, :],
            (n_z, n_u, n_w, n_a)).copy()
    k0 = np.round(rng.uniform(-2.0, 2.0, size=n_a), 3)
    e = np.round(rng.uniform(-1.0, 1.0, size=n_u), 3)
    y_grid = np.unique(np.add.outer(k0, e).reshape(-1))
    n_y = y_grid.size
    p_y_auw = np.zeros((n_a, n_u, n_w, n_y))
    for a in range(n_a):
        for u in range(n_u):
            yi = int(np.nonzero(np.isclose(y_grid, k0[a] + e[u]))[0][0])
            p_y_auw[a, u, :, yi] = 1.0
    model = DiscreteModel(
        support_u=base.support_u,
        support_z=base.support_z,
        support_w=base.support_w,
        support_a=base.support_a,
        support_y=y_grid,
        p_u=base.p_u,
        p_z_u=p_z_u,
        p_w_u=base.p_w_u,
        p_a_zuw=p_a_zuw,
        p_y_auw=p_y_auw,
    )
    return model, labels, k0, e
