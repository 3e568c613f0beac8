"""Exact identity and estimator tests for the debiased moment chain."""

from dataclasses import replace

import numpy as np
import pytest

from icc import SeedSpec
from icc.data import StrongRelevanceError
from icc.debias import (
    DebiasSystem,
    SieveSpace,
    build_system,
    check_neyman_orthogonality,
    compute_nuisances_exact,
    dml_estimate,
    error_bound,
    moment_m3,
    perturb_nuisances,
    population_m3,
    solve_alpha_g,
    solve_nuisances,
    solve_q_tau,
    verify_error_decomposition,
)
from icc.discrete import (
    DiscreteModel,
    enumerate_joint,
    random_discrete_model,
    sample_from_joint,
    sharp_discrete_model,
)


def square_system(seed, **kw):
    """Random model with a square, generically solvable treatment stage."""
    model = random_discrete_model(seed=SeedSpec(seed), n_u=2, n_z=4, n_w=2,
                                  n_a=4, n_y=3, **kw)
    joint = enumerate_joint(model)
    system = build_system(joint)
    return system, solve_nuisances(system)


def independent_proxy_model(seed=5):
    """W carries no information about U or Z."""
    rng = SeedSpec(seed).rng()
    p_z = rng.dirichlet(np.ones(4))
    p_w = rng.dirichlet(np.ones(2))
    return DiscreteModel(
        support_u=np.arange(2), support_z=np.arange(4), support_w=np.arange(2),
        support_a=np.arange(4), support_y=np.arange(3.0),
        p_u=np.array([0.5, 0.5]), p_z_u=np.tile(p_z, (2, 1)),
        p_w_u=np.tile(p_w, (2, 1)),
        p_a_zuw=rng.dirichlet(np.ones(4), size=(4, 2, 2)),
        p_y_auw=rng.dirichlet(np.ones(3), size=(4, 2, 2)))


def duplicate_treatment_model(seed=43):
    """Treatment levels 0 and 1 have identical conditional laws given Z."""
    model = random_discrete_model(seed=SeedSpec(seed), n_u=2, n_z=4, n_w=2,
                                  n_a=4)
    pa = model.p_a_zuw.copy()
    pa[..., 1] = pa[..., 0]
    pa = pa / pa.sum(axis=-1, keepdims=True)
    return DiscreteModel(
        support_u=model.support_u, support_z=model.support_z,
        support_w=model.support_w, support_a=model.support_a,
        support_y=model.support_y, p_u=model.p_u, p_z_u=model.p_z_u,
        p_w_u=model.p_w_u, p_a_zuw=pa, p_y_auw=model.p_y_auw)


class TestSieveSpace:
    def test_indicator_identity(self):
        s = SieveSpace.indicator("z", 5)
        assert s.dim == 5
        assert np.array_equal(s.basis, np.eye(5))

    def test_gram_psd(self):
        s = SieveSpace.polynomial("y", np.linspace(-1, 1, 7), degree=3)
        g = s.gram(np.full(7, 1 / 7))
        ev = np.linalg.eigvalsh(g)
        assert ev.min() > -1e-12

    def test_polynomial_dim(self):
        s = SieveSpace.polynomial("y", np.arange(4.0), degree=2)
        assert s.dim == 3


class TestBuildSystem:
    def test_operator_shapes_and_stochasticity(self):
        system, _ = square_system(1)
        assert system.l.shape == (4, 4) and system.m.shape == (2, 4)
        np.testing.assert_allclose(system.l.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(system.m.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(system.n.sum(axis=1), 1.0, atol=1e-12)

    def test_adjointness(self):
        # <Nq, f> under the Z law equals <q, Mf> under the W law
        system, _ = square_system(2)
        rng = np.random.default_rng(0)
        for _ in range(5):
            q = rng.standard_normal(2)
            f = rng.standard_normal(4)
            lhs = system.ip_z(system.n @ q, f)
            rhs = system.ip_w(q, system.m @ f)
            assert abs(lhs - rhs) < 1e-12

    def test_spaces(self):
        system, _ = square_system(3)
        # restricted treatment space maps into the proxy-orthogonal part
        img = system.m @ (system.l @ system.b_k)
        assert np.abs(img).max() < 1e-10
        # control space is spanned by proxy conditional expectations
        proj = system.b_t @ (system.b_t.T @ system.n)
        assert np.abs(proj - system.n).max() < 1e-10

    def test_contrast_validation(self):
        model = random_discrete_model(seed=SeedSpec(4), n_u=2, n_z=4, n_w=2,
                                      n_a=4)
        joint = enumerate_joint(model)
        with pytest.raises(ValueError, match="distinct treatment levels"):
            build_system(joint, contrast=(1, 1))
        with pytest.raises(ValueError, match="tau_mode"):
            build_system(joint, tau_mode="other")

    def test_outcome_transform(self):
        model = random_discrete_model(seed=SeedSpec(5), n_u=2, n_z=4, n_w=2,
                                      n_a=4)
        joint = enumerate_joint(model)
        sq = build_system(joint, g_y=lambda y: y ** 2)
        assert np.array_equal(sq.gy, joint.supports["y"][:, 0] ** 2)


class TestExactNuisances:
    def test_residuals_vanish_on_square_models(self):
        for s in range(20):
            _, ns = square_system(100 + s)
            assert ns.residual_tau < 1e-10
            assert ns.residual_k < 1e-10

    def test_tau_solves_proxy_equation(self):
        system, ns = square_system(6)
        assert system.norm_w(system.m @ (ns.tau - ns.g)) < 1e-12
        # and lies in the control space
        coef = system.b_t.T @ ns.tau
        assert np.abs(system.b_t @ coef - ns.tau).max() < 1e-10

    def test_population_moment_equals_theta0(self):
        for s in range(10):
            system, ns = square_system(200 + s)
            assert abs(population_m3(system, ns) - ns.theta0) < 1e-10

    def test_riesz_representation(self):
        # pi'k = <alpha_k, k> under the treatment law, for k in the space
        system, ns = square_system(7)
        rng = np.random.default_rng(1)
        for _ in range(20):
            k = system.b_k @ rng.standard_normal(system.b_k.shape[1])
            lhs = float(system.pi @ k)
            assert abs(lhs - system.ip_a(ns.alpha_k, k)) < 1e-10

    def test_projected_balance_identity(self):
        # the projection of E[q_k(Z)|A] onto the restricted space is alpha_k
        for s in range(10):
            system, ns = square_system(300 + s)
            eqa = (system.p_z * ns.q_k) @ system.l / system.p_a
            assert np.abs(system.project_k(eqa) - ns.alpha_k).max() < 1e-10

    def test_theta_via_debias_weight(self):
        # theta0 = E[q_k(Z) k0(A)] because k0 lies in the restricted space
        system, ns = square_system(8)
        val = system.ip_z(ns.q_k, system.l @ ns.k)
        assert abs(val - ns.theta0) < 1e-12

    def test_independent_proxies_give_constant_control(self):
        joint = enumerate_joint(independent_proxy_model())
        system = build_system(joint)
        ns = solve_nuisances(system)
        mean_g = float(np.sum(system.p_z * ns.g))
        assert np.abs(ns.tau - mean_g).max() < 1e-10

    def test_extreme_mode_trivializes(self):
        model = random_discrete_model(seed=SeedSpec(42), n_u=2, n_z=4, n_w=2,
                                      n_a=4)
        ns = compute_nuisances_exact(enumerate_joint(model), tau_mode="extreme")
        assert np.abs(ns.k).max() < 1e-12
        assert ns.theta0 == 0.0
        assert np.abs(ns.alpha_k).max() < 1e-12

    def test_indistinguishable_contrast_fails_relevance(self):
        joint = enumerate_joint(duplicate_treatment_model())
        with pytest.raises(StrongRelevanceError, match="alpha not in range"):
            compute_nuisances_exact(joint, contrast=(0, 1))

    def test_solver_branch_invariance(self):
        # with a rank-deficient treatment stage any least-squares branch
        # gives the same debias weight and the same theta
        joint = enumerate_joint(duplicate_treatment_model())
        system = build_system(joint, contrast=(2, 3))
        ns = solve_nuisances(system)
        bk = system.b_k
        lbk = system.l @ bk
        gram = lbk.T @ (system.p_z[:, None] * lbk)
        xi2 = bk @ (np.linalg.pinv(gram, rcond=1e-10) @ (bk.T @ system.pi))
        q2 = system.l @ xi2
        assert np.abs(q2 - ns.q_k).max() < 1e-8
        # the weight is pinned down even though xi itself is not unique
        assert abs(system.ip_z(q2, system.l @ ns.k)
                   - system.ip_z(ns.q_k, system.l @ ns.k)) < 1e-10


class TestMomentFunction:
    def test_zero_debias_reduces_to_contrast(self):
        system, ns = square_system(9)
        bare = replace(ns, q_k=np.zeros_like(ns.q_k),
                       q_tau=np.zeros_like(ns.q_tau),
                       alpha_g=np.zeros_like(ns.alpha_g))
        vals = moment_m3((np.arange(3), np.arange(3), np.arange(3),
                          np.zeros(3, dtype=int)), bare, system)
        assert np.abs(vals - float(system.pi @ ns.k)).max() < 1e-14

    def test_sample_mean_matches_population(self):
        model = sharp_discrete_model(SeedSpec(6))
        joint = enumerate_joint(model)
        system = build_system(joint)
        ns = solve_nuisances(system)
        idx = sample_from_joint(joint, 100000, SeedSpec(77))
        vals = moment_m3((idx[:, 4], idx[:, 3], idx[:, 1], idx[:, 2]), ns,
                         system)
        se = vals.std() / np.sqrt(vals.size)
        assert abs(vals.mean() - population_m3(system, ns)) < 5 * se

    def test_wrong_g_with_exact_alpha_still_theta0(self):
        system, ns = square_system(10)
        rng = np.random.default_rng(3)
        wrong = replace(ns, g=ns.g + 0.4 * rng.standard_normal(4))
        assert abs(population_m3(system, wrong) - ns.theta0) < 1e-10


class TestErrorDecomposition:
    def test_identity_gap_linked(self):
        for s in range(50):
            system, ns = square_system(400 + s)
            pert = perturb_nuisances(system, ns, SeedSpec(800 + s), scale=0.1)
            rep = verify_error_decomposition(system, ns, pert)
            assert rep["gap"] < 1e-10

    def test_identity_gap_free_g(self):
        for s in range(10):
            system, ns = square_system(500 + s)
            pert = perturb_nuisances(system, ns, SeedSpec(900 + s), scale=0.1,
                                     link_g=False)
            rep = verify_error_decomposition(system, ns, pert)
            assert rep["gap"] < 1e-10

    def test_identical_sets_give_zero(self):
        system, ns = square_system(11)
        rep = verify_error_decomposition(system, ns, ns)
        assert abs(rep["lhs"]) < 1e-12 and abs(rep["rhs"]) < 1e-12

    def test_treatment_only_perturbation_isolates_first_term(self):
        system, ns = square_system(12)
        rng = np.random.default_rng(5)
        pert = replace(
            ns,
            k=ns.k + system.b_k @ (0.3 * rng.standard_normal(system.b_k.shape[1])),
            q_k=ns.q_k + system.l @ (
                system.b_k @ (0.3 * rng.standard_normal(system.b_k.shape[1]))))
        rep = verify_error_decomposition(system, ns, pert)
        t1, t2, t3 = rep["terms"]
        assert abs(rep["lhs"] - t1) < 1e-12
        assert abs(t2) < 1e-12 and abs(t3) < 1e-12
        assert abs(t1) > 1e-4

    def test_error_bound_holds(self):
        checked = 0
        for s in range(50):
            try:
                system, ns = square_system(600 + s)
            except StrongRelevanceError:
                # a degenerate random draw is legitimately rejected
                continue
            pert = perturb_nuisances(system, ns, SeedSpec(1000 + s), scale=0.1)
            rep = error_bound(system, ns, pert)
            assert rep["lhs"] <= rep["bound"] + 1e-12
            checked += 1
        assert checked >= 45


SATISFIED = [
    ("k", {}),
    ("tau", {}),
    ("tau", {"wrong_q_k": True}),
    ("tau", {"resolve_k": True}),
    ("g", {}),
    ("g", {"wrong_q_k": True, "wrong_q_tau": True}),
    ("g", {"resolve_tau": True}),
    ("g", {"resolve_tau": True, "resolve_k": True}),
    ("q_k", {}),
    ("q_k", {"track_q_tau": False, "track_alpha_g": False}),
    ("q_tau", {}),
    ("q_tau", {"track_alpha_g": False}),
    ("alpha_g", {}),
]

NEGATIVE = [
    ("tau", {"resolve_k": True, "wrong_q_k": True}, 1e-4),
    ("k", {"wrong_q_k": True}, 1e-5),
    ("g", {"resolve_tau": True, "wrong_q_tau": True}, 1e-5),
    ("q_k", {"track_q_tau": False, "wrong_tau": True, "track_alpha_g": False},
     1e-5),
]


class TestOrthogonality:
    @pytest.mark.parametrize("slot,kw", SATISFIED,
                             ids=[f"{s}-{i}" for i, (s, _) in enumerate(SATISFIED)])
    def test_satisfied_directions_vanish(self, slot, kw):
        for s in (13, 14):
            system, ns = square_system(s)
            d = check_neyman_orthogonality(system, ns, slot, SeedSpec(23), **kw)
            assert abs(d) < 1e-6

    @pytest.mark.parametrize("slot,kw,floor", NEGATIVE,
                             ids=[f"{s}-neg{i}" for i, (s, _, _) in enumerate(NEGATIVE)])
    def test_negative_controls_move(self, slot, kw, floor):
        system, ns = square_system(13)
        d = check_neyman_orthogonality(system, ns, slot, SeedSpec(23), **kw)
        assert abs(d) > floor

    def test_resolve_k_requires_resolve_tau(self):
        system, ns = square_system(13)
        with pytest.raises(ValueError, match="sequential fit order"):
            check_neyman_orthogonality(system, ns, "g", SeedSpec(1),
                                       resolve_k=True)

    def test_unknown_slot(self):
        system, ns = square_system(13)
        with pytest.raises(ValueError, match="unknown slot"):
            check_neyman_orthogonality(system, ns, "zeta", SeedSpec(1))


class TestDoubleRobustness:
    def test_all_eight_configurations(self):
        system, ns = square_system(15)
        rng = np.random.default_rng(9)
        d_k, d_t = system.b_k.shape[1], system.b_t.shape[1]
        n_z = system.p_z.size
        for cfg in range(8):
            k_exact = bool(cfg & 4)
            tau_exact = bool(cfg & 2)
            g_exact = bool(cfg & 1)
            k_u = ns.k if k_exact else \
                ns.k + system.b_k @ (0.3 * rng.standard_normal(d_k))
            q_k_u = ns.q_k if not k_exact else \
                ns.q_k + system.l @ (system.b_k @ (0.3 * rng.standard_normal(d_k)))
            tau_u = ns.tau if tau_exact else \
                ns.tau + system.b_t @ (0.3 * rng.standard_normal(d_t))
            q_tau_u = solve_q_tau(system, q_k_u)
            if tau_exact:
                q_tau_u = q_tau_u + system.m @ (
                    system.b_t @ (0.3 * rng.standard_normal(d_t)))
            g_u = ns.g if g_exact else ns.g + 0.3 * rng.standard_normal(n_z)
            alpha_u = solve_alpha_g(system, q_k_u, q_tau_u)
            if g_exact:
                alpha_u = alpha_u + 0.3 * rng.standard_normal(n_z)
            probe = replace(ns, k=k_u, tau=tau_u, g=g_u, q_k=q_k_u,
                            q_tau=q_tau_u, alpha_g=alpha_u)
            assert abs(population_m3(system, probe) - ns.theta0) < 1e-10, cfg

    def test_all_wrong_breaks(self):
        system, ns = square_system(15)
        rng = np.random.default_rng(10)
        probe = replace(ns,
                        k=ns.k + system.b_k @ (0.3 * rng.standard_normal(
                            system.b_k.shape[1])),
                        q_k=ns.q_k + 0.3 * rng.standard_normal(4),
                        tau=ns.tau + system.b_t @ (0.3 * rng.standard_normal(2)),
                        q_tau=ns.q_tau + 0.3 * rng.standard_normal(2),
                        g=ns.g + 0.3 * rng.standard_normal(4),
                        alpha_g=ns.alpha_g + 0.3 * rng.standard_normal(4))
        assert abs(population_m3(system, probe) - ns.theta0) > 1e-3


class TestDmlEstimate:
    def make_obs(self, joint, n, seed):
        idx = sample_from_joint(joint, n, seed)
        return np.column_stack([idx[:, 1], idx[:, 2], idx[:, 3], idx[:, 4]])

    def test_recovers_theta_on_sharp_model(self):
        model = sharp_discrete_model(SeedSpec(6))
        joint = enumerate_joint(model)
        ns = solve_nuisances(build_system(joint))
        obs = self.make_obs(joint, 8000, SeedSpec(31))
        res = dml_estimate(obs, (4, 2, 4), joint.supports["y"][:, 0], folds=5,
                           seed=SeedSpec(32))
        se = res.sigma_hat / np.sqrt(res.n)
        assert abs(res.theta_hat - ns.theta0) < 5 * se

    def test_fold_counts_and_reproducibility(self):
        model = sharp_discrete_model(SeedSpec(6))
        joint = enumerate_joint(model)
        obs = self.make_obs(joint, 4000, SeedSpec(33))
        r1 = dml_estimate(obs, (4, 2, 4), joint.supports["y"][:, 0], folds=4,
                          seed=SeedSpec(34))
        r2 = dml_estimate(obs, (4, 2, 4), joint.supports["y"][:, 0], folds=4,
                          seed=SeedSpec(34))
        assert r1.theta_hat == r2.theta_hat
        assert r1.fold_estimates.shape == (4,)
        assert r1.ci95[0] < r1.theta_hat < r1.ci95[1]

    def test_two_vs_five_folds_agree(self):
        model = sharp_discrete_model(SeedSpec(6))
        joint = enumerate_joint(model)
        ns = solve_nuisances(build_system(joint))
        obs = self.make_obs(joint, 8000, SeedSpec(35))
        r2 = dml_estimate(obs, (4, 2, 4), joint.supports["y"][:, 0], folds=2,
                          seed=SeedSpec(36))
        r5 = dml_estimate(obs, (4, 2, 4), joint.supports["y"][:, 0], folds=5,
                          seed=SeedSpec(36))
        tol = 5 * (r2.sigma_hat + r5.sigma_hat) / np.sqrt(r2.n)
        assert abs(r2.theta_hat - r5.theta_hat) < tol
        assert abs(r2.theta_hat - ns.theta0) < tol

    def test_degenerate_model_is_exact(self):
        n_z = n_a = 3
        p_a_det = np.zeros((n_z, 1, 1, n_a))
        p_y_det = np.zeros((n_a, 1, 1, 3))
        for z in range(n_z):
            p_a_det[z, 0, 0, z] = 1.0
        for a in range(n_a):
            p_y_det[a, 0, 0, a] = 1.0
        y_vals = np.array([0.0, 1.5, 4.0])
        deg = DiscreteModel(
            support_u=np.zeros(1), support_z=np.arange(n_z),
            support_w=np.zeros(1), support_a=np.arange(n_a),
            support_y=y_vals, p_u=np.ones(1),
            p_z_u=np.full((1, n_z), 1 / 3), p_w_u=np.ones((1, 1)),
            p_a_zuw=p_a_det, p_y_auw=p_y_det)
        joint = enumerate_joint(deg)
        ns = compute_nuisances_exact(joint)
        assert abs(ns.theta0 - 4.0) < 1e-12
        obs = self.make_obs(joint, 2000, SeedSpec(37))
        res = dml_estimate(obs, (n_z, 1, n_a), y_vals, folds=5,
                           seed=SeedSpec(38))
        assert abs(res.theta_hat - 4.0) < 1e-5
        assert res.sigma_hat < 1e-5

    def test_fold_size_guard(self):
        model = sharp_discrete_model(SeedSpec(6))
        joint = enumerate_joint(model)
        obs = self.make_obs(joint, 60, SeedSpec(39))
        with pytest.raises(ValueError, match="need at least n"):
            dml_estimate(obs, (4, 2, 4), joint.supports["y"][:, 0], folds=5,
                         seed=SeedSpec(40))

    def test_input_validation(self):
        model = sharp_discrete_model(SeedSpec(6))
        joint = enumerate_joint(model)
        obs = self.make_obs(joint, 1000, SeedSpec(41))
        with pytest.raises(ValueError, match=r"\(n, 4\)"):
            dml_estimate(obs[:, :3], (4, 2, 4), joint.supports["y"][:, 0],
                         folds=5, seed=SeedSpec(42))
        with pytest.raises(ValueError, match="at least 2 folds"):
            dml_estimate(obs, (4, 2, 4), joint.supports["y"][:, 0], folds=1,
                         seed=SeedSpec(42))
        with pytest.raises(ValueError, match="k_dim"):
            dml_estimate(obs, (4, 2, 4), joint.supports["y"][:, 0], folds=5,
                         seed=SeedSpec(42), k_dim=0)

    def test_result_dict_roundtrip(self):
        model = sharp_discrete_model(SeedSpec(6))
        joint = enumerate_joint(model)
        obs = self.make_obs(joint, 2000, SeedSpec(43))
        res = dml_estimate(obs, (4, 2, 4), joint.supports["y"][:, 0], folds=5,
                           seed=SeedSpec(44))
        d = res.to_dict()
        assert d["n"] == 2000 and d["folds"] == 5
        assert len(d["fold_estimates"]) == 5
