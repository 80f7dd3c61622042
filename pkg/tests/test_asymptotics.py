import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import (
    expected_abs_normal,
    lyapunov_ct_integral,
    lyapunov_dt_series,
    random_discrete_chain,
    random_generator_chain,
)
from strongnoise import asymptotics as asy
from strongnoise.markov import NotErgodicError, stationary_distribution
from strongnoise.model import ModelError, cauchy, gaussian, gamma_matrix, validate_chain

G = gaussian()


def gen(L, h=(0.0, 1.0), a=None):
    d = len(L)
    return validate_chain("continuous", L, np.arange(d) if a is None else a, h, np.full(d, 1.0 / d))


def oracle_q(chain, fisher=1.0):
    mu = stationary_distribution(chain)
    Gm = gamma_matrix(mu)
    return fisher * Gm @ np.outer(chain.h, chain.h) @ Gm


class TestLyapunovDT:
    def test_symmetric_binary(self):
        sol = asy.lyapunov_dt(asy.example_chain(0.5, 0.5))
        assert sol.P[0, 0] == pytest.approx(0.0625, abs=1e-14)
        assert sol.P[0, 1] == pytest.approx(-0.0625, abs=1e-14)

    def test_asymmetric_binary(self):
        sol = asy.lyapunov_dt(asy.example_chain(0.9, 0.8, h=(1.0, -1.0)))
        # (4/9)(1/9) * 4 / (1.7 * 0.3) = 0.38731542...
        assert sol.P[0, 0] == pytest.approx(16 / 81 / 0.51, abs=1e-14)

    def test_constant_h(self):
        sol = asy.lyapunov_dt(asy.example_chain(0.3, 0.6, h=(2.0, 2.0)))
        assert not sol.P.any()

    def test_fisher_scales(self):
        c = asy.example_chain(0.7, 0.4)
        assert np.allclose(asy.lyapunov_dt(c, 0.5).P, 0.5 * asy.lyapunov_dt(c).P, atol=1e-15)

    def test_random_chains(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            c = random_discrete_chain(rng, int(rng.integers(2, 9)))
            sol = asy.lyapunov_dt(c)
            P = sol.P
            assert sol.residual <= 1e-10
            assert np.array_equal(P, P.T)
            assert np.abs(P.sum(axis=1)).max() <= 1e-10
            assert np.linalg.eigvalsh(P).min() >= -1e-12
            # independent references: truncated series and the subspace solve
            assert np.allclose(P, lyapunov_dt_series(c.Lambda, oracle_q(c)), atol=1e-12)
            assert np.allclose(P, asy.lyapunov_subspace(c, oracle_q(c)), atol=1e-11)

    def test_geometric_iteration_count(self):
        # iterations track log(tol) / log(rho^2) for the subdominant modulus rho
        for lam in (0.5, 0.8, 0.95):
            c = asy.example_chain(lam, lam)
            rho = abs(2 * lam - 1)
            sol = asy.lyapunov_dt(c)
            bound = math.log(1e-16) / math.log(rho**2) + 60 if rho > 0 else 60
            assert sol.iterations <= bound

    def test_non_ergodic(self):
        c = validate_chain("discrete", [[0.0, 1.0], [1.0, 0.0]], (0, 1), (0, 1), (0.5, 0.5))
        with pytest.raises(NotErgodicError):
            asy.lyapunov_dt(c)


class TestLyapunovCT:
    def test_binary(self):
        sol = asy.lyapunov_ct(gen([[-1.0, 1.0], [1.0, -1.0]]))
        assert sol.P[0, 0] == pytest.approx(1 / 64, abs=1e-15)
        assert sol.P[0, 1] == pytest.approx(-1 / 64, abs=1e-15)

    def test_constant_h(self):
        assert not asy.lyapunov_ct(gen([[-1.0, 1.0], [2.0, -2.0]], h=(3.0, 3.0))).P.any()

    def test_integral_oracle_d4(self):
        rng = np.random.default_rng(1)
        c = random_generator_chain(rng, 4)
        sol = asy.lyapunov_ct(c)
        assert sol.residual <= 1e-10
        assert np.allclose(sol.P, lyapunov_ct_integral(c.Lambda, oracle_q(c)), atol=1e-8)

    def test_random_chains(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            c = random_generator_chain(rng, int(rng.integers(2, 9)))
            P = asy.lyapunov_ct(c).P
            assert asy.lyapunov_ct_residual(c, P, oracle_q(c)) <= 1e-10
            assert np.array_equal(P, P.T)
            assert np.abs(P.sum(axis=1)).max() <= 1e-10
            assert np.linalg.eigvalsh(P).min() >= -1e-12


class TestBinaryClosedForm:
    def test_examples(self):
        assert asy.binary_closed_form(0.5, 0.5, (0, 1)) == pytest.approx(0.0625, abs=1e-16)
        assert asy.binary_closed_form(0.3, 0.6, (1, 1)) == 0.0

    def test_grid_against_solver(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            lam, gam = rng.uniform(0.05, 0.95, size=2)
            h = tuple(rng.normal(size=2))
            P = asy.lyapunov_dt(asy.example_chain(lam, gam, h=h)).P[0, 0]
            assert abs(P - asy.binary_closed_form(lam, gam, h)) <= 1e-12
            assert abs(P - asy.binary_closed_form_alt(lam, gam, h)) <= 1e-12

    @pytest.mark.parametrize("lam, gam", [(0.0, 0.5), (0.5, 1.0), (1.2, 0.3)])
    def test_range(self, lam, gam):
        with pytest.raises(ModelError):
            asy.binary_closed_form(lam, gam, (0, 1))


class TestMaxGaussian:
    def test_singleton(self):
        assert asy.expected_max_gaussian(np.eye(3), [1]).value == 0.0

    def test_binary_symmetric(self):
        P = asy.lyapunov_dt(asy.example_chain(0.5, 0.5))
        v = asy.expected_max_gaussian(P, (0, 1)).value
        assert v == pytest.approx(expected_abs_normal(0.25), abs=1e-15)
        assert v == pytest.approx(0.1994711, abs=1e-7)

    def test_zero_covariance(self):
        assert asy.expected_max_gaussian(np.zeros((4, 4)), range(4), n_mc=1000).value == 0.0

    def test_mc_agrees_with_closed_form(self):
        # three coordinates, the third a copy of the second: max over 3 = max over 2
        rng = np.random.default_rng(4)
        A = rng.normal(size=(2, 2))
        S2 = A @ A.T
        E = np.array([[1, 0], [0, 1], [0, 1]], float)
        S3 = E @ S2 @ E.T
        exact = asy.expected_max_gaussian(S2, (0, 1)).value
        mc = asy.expected_max_gaussian(S3, (0, 1, 2), n_mc=2 * 10**5, seed=5)
        assert mc.stderr > 0 and abs(mc.value - exact) <= 3 * mc.stderr

    def test_not_psd(self):
        with pytest.raises(ModelError):
            asy.expected_max_gaussian(np.array([[1.0, 2.0], [2.0, 1.0]]), (0, 1))

    def test_empty(self):
        with pytest.raises(ModelError):
            asy.expected_max_gaussian(np.eye(2), ())


def test_argmax_set():
    assert asy.argmax_set([0.5, 0.5]) == (0, 1)
    assert asy.argmax_set([2 / 3, 1 / 3]) == (0,)
    assert asy.argmax_set([0.4, 0.4 + 1e-12, 0.2 - 1e-12]) == (0, 1)


class TestMseGap:
    def test_examples(self):
        P = asy.lyapunov_dt(asy.example_chain(0.5, 0.5))
        assert asy.predicted_mse_gap(P, (0, 1)) == pytest.approx(0.0625, abs=1e-15)
        assert asy.predicted_mse_gap(P, (3, 3)) == pytest.approx(0.0, abs=1e-15)
        assert asy.predicted_mse_gap(np.zeros((2, 2)), (0, 1)) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 2**32 - 1), st.floats(-100, 100))
    def test_shift_invariance(self, d, seed, c):
        rng = np.random.default_rng(seed)
        chain = random_discrete_chain(rng, d)
        P = asy.lyapunov_dt(chain)
        a = rng.normal(size=d)
        base = asy.predicted_mse_gap(P, a)
        assert asy.predicted_mse_gap(P, a + c) == pytest.approx(base, rel=1e-8, abs=1e-10 * (1 + c * c))


class TestWeakNoise:
    def test_map_coefficient(self):
        c = gen([[-1.0, 1.0], [1.0, -1.0]], a=(0.0, 1.0))
        assert asy.weak_noise_map_error(c, G, 1.0) == pytest.approx(2.0, abs=1e-14)
        assert asy.weak_noise_map_error(c, G, 2.0) == pytest.approx(8.0, abs=1e-13)

    def test_discrete_uses_divergence(self):
        c = asy.example_chain(0.5, 0.5)
        # mu = (1/2, 1/2), off-diagonal 1/2, divergence 1/2 each way
        assert asy.weak_noise_map_error(c, G, 1.0) == pytest.approx(1.0, rel=1e-12)
        # Cauchy divergence log(1 + 1/4)
        assert asy.weak_noise_map_error(c, cauchy(), 1.0) == pytest.approx(0.5 / math.log(1.25), rel=1e-7)

    def test_indistinguishable(self):
        c = gen([[-1.0, 1.0], [1.0, -1.0]], h=(0.5, 0.5))
        with pytest.raises(ModelError, match="distinguishable"):
            asy.weak_noise_map_error(c, G, 1.0)

    def test_mse_coefficient(self):
        c = gen([[-1.0, 1.0], [1.0, -1.0]], a=(0.0, 1.0))
        assert asy.weak_noise_mse(c, G, 1.0) == pytest.approx(2.0, abs=1e-14)
        assert asy.weak_noise_mse(c, G, 1.0, a=(4.0, 4.0)) == 0.0
        assert asy.weak_noise_mse(c, G, 1.0, a=(0.0, 2.0)) == pytest.approx(8.0, abs=1e-13)


class TestZDT:
    def test_empty(self):
        z = asy.simulate_z_dt(asy.example_chain(0.5, 0.5), G, 0, seed=0)
        assert z.shape == (1, 2) and not z.any()

    def test_one_step_by_hand(self):
        c = asy.example_chain(0.5, 0.5)
        z = asy.z_recursion(c, G.score(np.array([1.0])))
        assert np.allclose(z[1], [-0.25, 0.25], atol=1e-16)

    def test_zero_sum(self):
        rng = np.random.default_rng(6)
        c = random_discrete_chain(rng, 5)
        for start in ("nu", "mu"):
            z = asy.simulate_z_dt(c, G, 2000, seed=7, start=start, n_paths=4)
            assert np.abs(z.sum(axis=-1)).max() <= 1e-10

    def test_stationary_covariance(self):
        c = asy.example_chain(0.7, 0.6)
        z = asy.simulate_z_dt(c, G, 110000, seed=8, start="mu")[10001:]
        C = z.T @ z / z.shape[0]
        P = asy.lyapunov_dt(c).P
        assert np.linalg.norm(C - P) / np.linalg.norm(P) <= 0.02

    def test_bad_start(self):
        with pytest.raises(ModelError):
            asy.simulate_z_dt(asy.example_chain(0.5, 0.5), G, 3, start="x")


class TestPredict:
    def test_symmetric(self):
        p = asy.predict(asy.example_chain(0.5, 0.5), G)
        assert p.e_infinity == pytest.approx(0.25, abs=1e-15)
        assert p.mse_gap_limit == pytest.approx(0.0625, abs=1e-15)
        assert p.p_infinity == pytest.approx(0.5, abs=1e-15)
        assert p.map_gap_limit == pytest.approx(0.1994711, abs=1e-7)
        assert not p.degenerate_map and p.argmax_set == (0, 1)

    def test_degenerate(self):
        p = asy.predict(asy.example_chain(0.9, 0.8), G)
        assert p.degenerate_map and p.map_gap_limit == 0.0 and p.argmax_set == (0,)

    def test_constant_h(self):
        p = asy.predict(asy.example_chain(0.5, 0.5, h=(1.0, 1.0)), G)
        assert p.mse_gap_limit == 0.0 and p.map_gap_limit == 0.0

    def test_non_gaussian_map_unavailable(self):
        p = asy.predict(asy.example_chain(0.5, 0.5), cauchy())
        assert math.isnan(p.map_gap_limit)
        assert p.mse_gap_limit == pytest.approx(0.5 * 0.0625, abs=1e-12)

    def test_continuous(self):
        p = asy.predict(gen([[-1.0, 1.0], [1.0, -1.0]], a=(0.0, 1.0)))
        assert p.mse_gap_limit == pytest.approx(1 / 64, abs=1e-15)
        assert p.map_gap_limit == pytest.approx(math.sqrt(4 / 64 / (2 * math.pi)), abs=1e-14)
