"""Potential, conjugate posterior, exceedance estimators and their agreement."""

import math

import numpy as np
import pytest
from scipy.stats import norm

import contraction_lab as cl
from contraction_lab.errors import ParameterError


def scalar_problem(rho=1.0, lam=1.0, zeta=1.0):
    return cl.InverseProblem(
        cl.make_spectrum(np.array([rho]), 1),
        cl.make_coupling(cl.IdentityCoupling(), 1),
        cl.explicit_prior([lam], 1),
        cl.diagonal_noise([zeta], 1), 1)


def random_problem(seed, n_dim=None):
    rng = np.random.default_rng(seed)
    n = n_dim or int(rng.integers(1, 5))
    rho = np.sort(rng.uniform(0.2, 1.5, n))[::-1]
    lam = rng.uniform(0.2, 2.0, n)
    zeta = rng.uniform(0.5, 1.5, n)
    q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    return cl.InverseProblem(
        cl.make_spectrum(rho, n),
        cl.make_coupling(cl.ExplicitCoupling(q), n),
        cl.explicit_prior(lam, n),
        cl.diagonal_noise(zeta, n), n)


class TestPotential:
    def test_zero_input_vanishes(self):
        prob = scalar_problem()
        assert cl.potential_phi(prob, np.array([1.3]), np.array([0.0]), 5.0) == 0.0

    def test_hand_computed_scalar_value(self):
        """n = 2, u = y = 1 with unit operator and noise: (2/2) - 2 = -1."""
        prob = scalar_problem()
        assert cl.potential_phi(prob, np.array([1.0]), np.array([1.0]), 2.0) == -1.0

    @pytest.mark.parametrize("seed", range(5))
    def test_noiseless_data_gives_negative_half_energy(self, seed):
        """Substituting y = Gu leaves -(n/2) ||Gu||^2 in the noise norm."""
        prob = random_problem(seed)
        rng = np.random.default_rng(seed + 100)
        u = rng.standard_normal(prob.n_dim)
        y = cl.forward_apply(prob, u, "phi")
        n = 3.5
        expected = -0.5 * n * prob.whitened_norm(y) ** 2
        got = cl.potential_phi(prob, y, u, n)
        assert got <= 1e-12
        assert math.isclose(got, expected, rel_tol=1e-10)


class TestConjugatePosterior:
    def test_scalar_conjugate_oracle(self):
        """Unit prior, operator, noise and n = y = 1: N(1/2, 1/2)."""
        prob = scalar_problem()
        data = cl.DataSample(np.array([1.0]), 1.0, np.array([0.0]), "phi", 0)
        post = cl.conjugate_posterior(prob, data)
        assert math.isclose(post.mean[0], 0.5, rel_tol=1e-14)
        assert math.isclose(post.covariance()[0, 0], 0.5, rel_tol=1e-14)

    def test_noiseless_limit_inverts_operator(self):
        """At n = 1e10 the mean approaches T^-1 diag(1/rho) y."""
        prob = random_problem(3, n_dim=2)
        y = np.array([0.7, -0.4])
        data = cl.DataSample(y, 1e10, np.zeros(2), "phi", 0)
        post = cl.conjugate_posterior(prob, data)
        exact = prob.coupling.t_matrix.T @ (y / prob.operator.rho)
        assert np.linalg.norm(post.mean - exact) < 1e-4

    def test_zero_data_zero_mean(self):
        prob = random_problem(8)
        data = cl.DataSample(np.zeros(prob.n_dim), 10.0, np.zeros(prob.n_dim), "phi", 0)
        post = cl.conjugate_posterior(prob, data)
        assert np.all(post.mean == 0.0)

    @pytest.mark.parametrize("seed", range(6))
    def test_precision_reconstruction(self, seed):
        """Covariance factor reproduces prior precision + n * M'M to 1e-8."""
        prob = random_problem(seed)
        data = cl.simulate_data(prob, np.zeros(prob.n_dim), 20.0, seed=seed)
        post = cl.conjugate_posterior(prob, data)
        rebuilt = np.linalg.inv(post.covariance())
        target = cl.posterior_precision(prob, data.n_level)
        assert np.linalg.norm(rebuilt - target) <= 1e-8 * np.linalg.norm(target)


class TestExceedance:
    def test_zero_radius_full_mass(self):
        post = cl.PosteriorGaussian(np.zeros(1), np.eye(1), 1.0)
        est = cl.posterior_exceedance(post, np.zeros(1), 0.0, 500, seed=4)
        assert est.value == 1.0

    def test_standard_normal_oracle(self):
        """P(|Z| > 1) = 2(1 - Phi(1)) ~ 0.3173, within 3 binomial SE."""
        post = cl.PosteriorGaussian(np.zeros(1), np.eye(1), 1.0)
        est = cl.posterior_exceedance(post, np.zeros(1), 1.0, 40_000, seed=4)
        target = 2 * norm.sf(1.0)
        assert abs(est.value - target) <= 3 * max(est.std_error, 1e-6)

    def test_huge_radius_negligible_mass(self):
        """Radius 1e3 (||mean - u0|| + trace) bounds the mass below 1% by
        Chebyshev with room to spare."""
        prob = random_problem(10, n_dim=3)
        data = cl.simulate_data(prob, np.zeros(3), 4.0, seed=2)
        post = cl.conjugate_posterior(prob, data)
        u0 = np.full(3, 0.1)
        xi = 1e3 * (np.linalg.norm(post.mean - u0) + np.trace(post.covariance()))
        est = cl.posterior_exceedance(post, u0, xi, 2000, seed=6)
        assert est.value < 0.01

    def test_monotone_in_radius_on_shared_batch(self):
        prob = random_problem(11, n_dim=3)
        data = cl.simulate_data(prob, np.zeros(3), 4.0, seed=2)
        post = cl.conjugate_posterior(prob, data)
        xis = np.linspace(0.0, 3.0, 13)
        values = [e.value for e in cl.posterior_exceedance_grid(post, np.zeros(3), xis, 500, seed=1)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_shift_covariance_bit_identical(self):
        """Translating u0 and the mean by one lattice vector changes nothing.

        All coordinates are multiples of 2^-20 below 2^11 so every addition
        and subtraction is exact in double precision.
        """
        rng = np.random.default_rng(12)
        scale = 2.0**-20
        mean = np.round(rng.uniform(-1, 1, 3) / scale) * scale
        u0 = np.round(rng.uniform(-1, 1, 3) / scale) * scale
        shift = np.round(rng.uniform(-1000, 1000, 3) / scale) * scale
        factor = np.linalg.cholesky(np.eye(3) * 0.25)
        a = cl.posterior_exceedance(cl.PosteriorGaussian(mean, factor, 1.0), u0, 0.5, 500, seed=3)
        b = cl.posterior_exceedance(cl.PosteriorGaussian(mean + shift, factor, 1.0),
                                    u0 + shift, 0.5, 500, seed=3)
        assert a.value == b.value

    def test_mc_floor(self):
        post = cl.PosteriorGaussian(np.zeros(1), np.eye(1), 1.0)
        with pytest.raises(ParameterError):
            cl.posterior_exceedance(post, np.zeros(1), 1.0, 50, seed=0)


class TestWeightedExceedance:
    def test_zero_radius_is_one(self):
        prob = random_problem(20, n_dim=2)
        data = cl.simulate_data(prob, np.zeros(2), 5.0, seed=1)
        est = cl.weighted_posterior_exceedance(prob, data, np.zeros(2), 0.0, mc=2000, seed=2)
        assert est.value == 1.0
        assert est.log_normalizer is not None and math.isfinite(est.log_normalizer)

    def test_huge_radius_is_zero(self):
        prob = random_problem(21, n_dim=2)
        data = cl.DataSample(np.zeros(2), 1.0, np.zeros(2), "phi", 0)
        est = cl.weighted_posterior_exceedance(prob, data, np.zeros(2), 1e6, mc=2000, seed=2)
        assert est.value == 0.0

    @pytest.mark.parametrize("seed", range(4))
    def test_agrees_with_conjugate_route(self, seed):
        """Prior-weighted estimator matches the closed form within 4 SE
        at radius equal to the mean posterior standard deviation."""
        prob = random_problem(seed + 30, n_dim=2)
        u0 = np.array([0.3, -0.2])
        data = cl.simulate_data(prob, u0, 10.0, seed=seed)
        post = cl.conjugate_posterior(prob, data)
        xi = float(np.sqrt(np.trace(post.covariance()) / 2))
        conj = cl.posterior_exceedance(post, u0, xi, 20_000, seed=seed + 1)
        weighted = cl.weighted_posterior_exceedance(prob, data, u0, xi, mc=40_000, seed=seed + 2)
        combined = math.hypot(conj.std_error, weighted.std_error)
        assert abs(conj.value - weighted.value) <= 4 * combined

    def test_normalizer_positive_finite_and_ess_reported(self):
        prob = random_problem(40, n_dim=3)
        data = cl.simulate_data(prob, cl.power_law_truth(1.0, 3), 50.0, seed=3)
        est = cl.weighted_posterior_exceedance(prob, data, np.zeros(3), 0.5, mc=4000, seed=4)
        assert math.isfinite(est.log_normalizer)
        assert est.ess is not None and 1.0 <= est.ess <= est.mc_count + 1e-9

    def test_degeneracy_flagged_at_extreme_noise_level(self):
        """At n = 1e8 nearly all prior draws carry negligible weight."""
        prob = random_problem(41, n_dim=2)
        data = cl.simulate_data(prob, np.array([0.5, 0.1]), 1e8, seed=5)
        est = cl.weighted_posterior_exceedance(prob, data, np.zeros(2), 0.1, mc=1000, seed=6)
        assert est.degenerate

    def test_custom_sampler_shape_checked(self):
        prob = random_problem(42, n_dim=2)
        data = cl.simulate_data(prob, np.zeros(2), 5.0, seed=1)
        with pytest.raises(ParameterError):
            cl.weighted_posterior_exceedance(prob, data, np.zeros(2), 1.0,
                                             prior_sampler=lambda rng, m: rng.standard_normal((m, 3)),
                                             mc=1000, seed=2)

    def test_mc_floor(self):
        prob = random_problem(43, n_dim=2)
        data = cl.simulate_data(prob, np.zeros(2), 5.0, seed=1)
        with pytest.raises(ParameterError):
            cl.weighted_posterior_exceedance(prob, data, np.zeros(2), 1.0, mc=500, seed=2)


class TestJitteredCholesky:
    def test_recovers_nearly_singular(self):
        mat = np.diag([1.0, 1e-18])
        mat[0, 1] = mat[1, 0] = 1e-9 - 1e-25
        factor = cl.cholesky_with_jitter(mat)
        assert np.all(np.diag(factor) > 0)

    def test_fails_on_indefinite(self):
        from contraction_lab.errors import NumericalError

        with pytest.raises(NumericalError):
            cl.cholesky_with_jitter(np.diag([1.0, -1.0]))
