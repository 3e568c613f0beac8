from fractions import Fraction

import numpy as np
import pytest

from icc import (
    DegenerateControlError,
    LinearDGPSpec,
    RelevanceError,
    SeedSpec,
    implied_covariances,
    population_icc_beta,
    population_icc_beta_at_rank,
    population_tsls,
    sample_linear,
    sigma_zw_factor,
    spec_s1,
)


def random_spec(rng, d_u=None, d_z=None, d_w=None, d_a=1, d_x=0):
    """Random coefficients with latent rank d_u and nontrivial confounding."""
    d_u = d_u or rng.integers(1, 3)
    d_z = d_z or rng.integers(d_u + 1, d_u + 3)
    d_w = d_w or rng.integers(d_u, d_u + 2)
    gamma_z = rng.normal(size=(d_u, d_z))
    gamma_w = rng.normal(size=(d_u, d_w))
    # keep a treatment direction clear of the confounded span so the
    # orthogonalized instruments retain first-stage power
    zeta = rng.normal(size=(d_z, d_a))
    return LinearDGPSpec(
        gamma_z=gamma_z,
        gamma_w=gamma_w,
        zeta=zeta,
        gamma_a=rng.normal(size=(d_u, d_a)),
        gamma_y=rng.normal(size=(d_u, 1)),
        beta=rng.normal(size=(d_a, 1)),
        ups_a=0.3 * rng.normal(size=(d_w, d_a)),
        ups_y=0.3 * rng.normal(size=(d_w, 1)),
        sigma2_y=0.5 + rng.random(),
        eta_a=rng.normal(size=(d_x, d_a)) if d_x else None,
        eta_y=rng.normal(size=(d_x, 1)) if d_x else None,
        sigma_x=1.0 if d_x else None,
        d_x=d_x,
    )


class TestImpliedCovariances:
    def test_matches_sample_moments(self):
        spec = spec_s1()
        mom = implied_covariances(spec)
        n = 200_000
        ds = sample_linear(spec, n, SeedSpec(42, 0))
        blocks = np.column_stack([ds.z, ds.w, ds.a, ds.y[:, None]])
        emp = np.cov(blocks, rowvar=False)
        # scale-aware tolerance: 5 sd of a sample covariance entry
        pop = np.zeros((7, 7))
        order = [("z", 0), ("z", 1), ("z", 2), ("w", 0), ("w", 1), ("a", 0), ("y", 0)]
        for i, (bi, oi) in enumerate(order):
            for j, (bj, oj) in enumerate(order):
                pop[i, j] = mom.cov(bi, bj)[oi, oj]
        tol = 5.0 * np.sqrt(np.outer(np.diag(pop), np.diag(pop))) / np.sqrt(n)
        assert np.all(np.abs(emp - pop) < tol)

    def test_x_block_hooks(self):
        rng = np.random.default_rng(5)
        spec = random_spec(rng, d_u=1, d_z=2, d_w=1, d_x=2)
        mom = implied_covariances(spec)
        assert mom.cov("x", "x").shape == (2, 2)
        ds = sample_linear(spec, 60_000, SeedSpec(5, 1))
        emp = np.cov(np.column_stack([ds.x, ds.y[:, None]]), rowvar=False)
        assert abs(emp[0, 2] - mom.cov("x", "y")[0, 0]) < 0.1

    def test_sigma_psd(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            mom = implied_covariances(random_spec(rng))
            ev = np.linalg.eigvalsh(mom.sigma)
            assert ev.min() > -1e-10


class TestS1Oracles:
    """Closed-form values for the single-confounder spec, derived by hand
    from the path coefficients and frozen here as exact fractions."""

    def test_iv_with_proxies_included(self):
        mom = implied_covariances(spec_s1())
        beta_iv = population_tsls(mom, regressors=("a", "w"), instruments=("z", "w"))
        assert abs(beta_iv[0] - float(Fraction(71, 32))) < 1e-12

    def test_icc_rank_zero(self):
        mom = implied_covariances(spec_s1())
        beta0 = population_icc_beta(mom, None)
        assert abs(beta0[0] - float(Fraction(33, 14))) < 1e-12

    def test_icc_with_true_factor_exact(self):
        mom = implied_covariances(spec_s1())
        c_z = sigma_zw_factor(mom)
        beta = population_icc_beta(mom, c_z)
        assert abs(beta[0] - 2.0) < 1e-12

    def test_icc_at_rank_one_matches_factor_route(self):
        mom = implied_covariances(spec_s1())
        b_rank = population_icc_beta_at_rank(mom, 1)
        assert abs(b_rank[0] - 2.0) < 1e-10


class TestPopulationExactness:
    def test_random_specs_recover_beta(self):
        rng = np.random.default_rng(1234)
        done = 0
        while done < 15:
            spec = random_spec(rng)
            mom = implied_covariances(spec)
            try:
                c_z = sigma_zw_factor(mom)
                beta = population_icc_beta(mom, c_z)
            except (RelevanceError, DegenerateControlError):
                continue
            np.testing.assert_allclose(beta, spec.beta, atol=1e-8)
            done += 1

    def test_factor_span_invariance(self):
        # any factorization C_Z C_W' = Sigma_ZW with the same column span
        # gives the same estimand
        mom = implied_covariances(spec_s1())
        c_z = sigma_zw_factor(mom)
        mixed = c_z @ np.array([[-2.5]])
        b1 = population_icc_beta(mom, c_z)
        b2 = population_icc_beta(mom, mixed)
        np.testing.assert_allclose(b1, b2, atol=1e-12)


class TestSampling:
    def test_deterministic(self):
        spec = spec_s1()
        d1 = sample_linear(spec, 500, SeedSpec(3, 1))
        d2 = sample_linear(spec, 500, SeedSpec(3, 1))
        np.testing.assert_array_equal(d1.y, d2.y)
        np.testing.assert_array_equal(d1.w, d2.w)

    def test_seed_changes_draw(self):
        spec = spec_s1()
        d1 = sample_linear(spec, 500, SeedSpec(3, 1))
        d2 = sample_linear(spec, 500, SeedSpec(3, 2))
        assert not np.array_equal(d1.y, d2.y)

    def test_latents_returned_on_request(self):
        spec = spec_s1()
        ds, lat = sample_linear(spec, 500, SeedSpec(3, 1), return_latents=True)
        assert lat["u"].shape == (500, 1)
        # structural check: y minus its parts is the independent noise
        resid = ds.y - ds.a[:, 0] * 2.0 - lat["u"][:, 0]
        assert abs(np.corrcoef(resid, lat["u"][:, 0])[0, 1]) < 0.1


class TestDegenerateCases:
    def test_unconfounded_instruments_make_iv_equal_icc(self):
        spec = LinearDGPSpec(
            gamma_z=np.zeros((1, 3)),
            gamma_w=np.array([[1.0, 1.0]]),
            zeta=np.array([[1.0], [0.5], [0.0]]),
            gamma_a=np.array([[1.0]]),
            gamma_y=np.array([[1.0]]),
            beta=np.array([[2.0]]),
        )
        mom = implied_covariances(spec)
        beta_iv = population_tsls(mom, regressors=("a", "w"), instruments=("z", "w"))
        beta_icc = population_icc_beta(mom, None)
        assert abs(beta_iv[0] - beta_icc[0]) < 1e-10
        assert abs(beta_icc[0] - 2.0) < 1e-10

    def test_rank_beyond_true_rank_degenerate(self):
        mom = implied_covariances(spec_s1())
        with pytest.raises(DegenerateControlError):
            population_icc_beta_at_rank(mom, 2)

    def test_full_rank_control_kills_relevance(self):
        spec = LinearDGPSpec(
            gamma_z=np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.5], [0.5, 0.0, 1.0]]),
            gamma_w=np.eye(3),
            zeta=np.array([[1.0], [0.0], [0.0]]),
            gamma_a=np.ones((3, 1)),
            gamma_y=np.ones((3, 1)),
            beta=np.array([[2.0]]),
        )
        mom = implied_covariances(spec)
        with pytest.raises(RelevanceError, match="relevance"):
            population_icc_beta_at_rank(mom, 3)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            LinearDGPSpec(
                gamma_z=np.ones((1, 2)),
                gamma_w=np.ones((1, 2)),
                zeta=np.ones((3, 1)),  # wrong leading dim
                gamma_a=np.ones((1, 1)),
                gamma_y=np.ones((1, 1)),
                beta=np.ones((1, 1)),
            )
