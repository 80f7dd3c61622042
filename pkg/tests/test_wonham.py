import numpy as np
import pytest

from oracles import random_generator_chain
from strongnoise.filtering import filter_batch
from strongnoise.markov import PathCT, simulate_path_ct, stationary_distribution
from strongnoise.model import ModelError, gaussian, validate_chain
from strongnoise.wonham import (
    ObservationCT,
    generate_observations_ct,
    simulate_z_ct,
    wonham_batch,
    wonham_run,
    wonham_step,
)


def gen(L=((-1.0, 1.0), (2.0, -2.0)), h=(0.0, 1.0), nu=(0.5, 0.5)):
    return validate_chain("continuous", L, (0.0, 1.0), h, nu)


class TestStep:
    def test_pure_innovation_example(self):
        c = gen(L=((0.0, 0.0), (0.0, 0.0)))
        out = wonham_step(c, [0.5, 0.5], 0.1, 0.01, 1.0)
        # 0.5 -/+ 0.25 * (0.1 - 0.005)
        assert np.allclose(out, [0.47625, 0.52375], atol=1e-15)

    def test_constant_h_is_pure_drift(self):
        c = gen(h=(1.0, 1.0))
        pi = np.array([0.3, 0.7])
        expect = pi + (c.Lambda.T @ pi) * 0.01
        for dy in (-5.0, 0.0, 3.0):
            assert np.allclose(wonham_step(c, pi, dy, 0.01, 0.5), expect, atol=1e-15)

    def test_stationary_zero_innovation(self):
        c = gen()
        mu = stationary_distribution(c)
        out = wonham_step(c, mu, float(mu @ c.h) * 1e-3, 1e-3, 1.0)
        assert np.allclose(out, mu, atol=1e-15)

    def test_projection(self):
        c = gen()
        out = wonham_step(c, [0.01, 0.99], -5.0, 1e-3, 0.1)
        assert np.all(out >= 0) and abs(out.sum() - 1) <= 1e-12

    def test_rejects_discrete(self):
        d = validate_chain("discrete", [[0.5, 0.5], [0.5, 0.5]], (0, 1), (0, 1), (0.5, 0.5))
        with pytest.raises(ModelError):
            wonham_step(d, [0.5, 0.5], 0.0, 1e-3, 1.0)


class TestObservations:
    def test_deterministic_drift(self):
        c = gen()
        path = PathCT(1, np.empty(0), np.empty(0, dtype=int), 1.0)
        obs = generate_observations_ct(c, path, 1e-300, 1e-2, seed=0)
        assert obs.dys.shape == (100,)
        assert np.allclose(obs.dys, 1e-2, rtol=1e-12)

    def test_variance(self):
        c = gen(h=(0.0, 0.0))
        path = simulate_path_ct(c, 1000.0, seed=1)
        obs = generate_observations_ct(c, path, 2.0, 1e-3, seed=2)
        assert obs.dys.size == 10**6
        assert np.var(obs.dys) == pytest.approx(4.0 * 1e-3, rel=0.01)

    def test_seeded(self):
        c = gen()
        path = simulate_path_ct(c, 5.0, seed=1)
        a = generate_observations_ct(c, path, 1.0, 1e-3, seed=3)
        b = generate_observations_ct(c, path, 1.0, 1e-3, seed=3)
        assert np.array_equal(a.dys, b.dys)

    def test_exact_time_integral(self):
        c = gen(h=(2.0, -1.0))
        path = PathCT(0, np.array([0.0125]), np.array([1]), 0.02)
        obs = generate_observations_ct(c, path, 1e-300, 0.01, seed=0)
        assert np.allclose(obs.dys, [0.02, 2 * 0.0025 - 0.0075], atol=1e-15)


class TestRun:
    def test_constant_h_follows_euler_flow(self):
        c = gen(h=(0.5, 0.5), nu=(1.0, 0.0))
        dys = np.random.default_rng(0).normal(size=200)
        tr = wonham_run(c, ObservationCT(0.01, dys, 1.0))
        pi = np.array(c.nu)
        for k in range(200):
            pi = pi + (c.Lambda.T @ pi) * 0.01
        assert np.allclose(tr.pis[-1], pi, atol=1e-13)
        assert tr.clipped_steps == 0

    def test_simplex(self):
        rng = np.random.default_rng(3)
        c = random_generator_chain(rng, 4)
        path = simulate_path_ct(c, 10.0, seed=4)
        tr = wonham_run(c, generate_observations_ct(c, path, 1.0, 1e-3, seed=5))
        assert np.abs(tr.pis.sum(axis=1) - 1).max() <= 1e-12 and tr.pis.min() >= 0

    def test_self_convergence(self):
        c = gen(L=((-2.0, 2.0), (3.0, -3.0)), h=(0.0, 2.0))
        rng = np.random.default_rng(7)
        T, fine, k = 1.0, 1e-5, 32
        n = int(round(T / fine))
        path = [simulate_path_ct(c, T, seed=100 + j) for j in range(k)]
        grid = fine * np.arange(n + 1)
        drift = np.stack([np.diff(p.occupation(grid, c.h)) for p in path], axis=1)
        noise = rng.standard_normal((n, k)) * np.sqrt(fine)
        dys = drift + 1.0 * noise

        def terminal(dt):
            m = int(round(dt / fine))
            coarse = dys.reshape(n // m, m, k).sum(axis=1)
            out, _ = wonham_batch(c, coarse, dt, 1.0, np.tile(c.nu, (k, 1)))
            return out[-1]

        ref = terminal(fine)
        errs = [np.sqrt(np.mean((terminal(dt) - ref) ** 2)) for dt in (1e-2, 1e-3, 1e-4)]
        assert errs[0] > errs[1] > errs[2]

    def test_agrees_with_discretized_model(self):
        c = gen(L=((-1.0, 1.0), (0.5, -0.5)), h=(0.0, 1.0))
        dt, T, sigma, k = 1e-4, 1.0, 1.0, 8
        n = int(round(T / dt))
        dtm = validate_chain("discrete", np.eye(2) + c.Lambda * dt, c.a, c.h, c.nu)
        rng = np.random.default_rng(11)
        grid = dt * np.arange(n + 1)
        drift = np.stack([np.diff(simulate_path_ct(c, T, seed=j).occupation(grid, c.h)) for j in range(k)], axis=1)
        dys = drift + sigma * np.sqrt(dt) * rng.standard_normal((n, k))
        ct, _ = wonham_batch(c, dys, dt, sigma, np.tile(c.nu, (k, 1)))
        # y = dY/dt observed with noise level sigma / sqrt(dt)
        dtout = filter_batch(dtm, gaussian(), sigma / np.sqrt(dt), dys / dt, np.tile(c.nu, (k, 1)))
        assert np.abs(ct[-1] - dtout[-1]).max() <= 1e-2

    def test_clipping_is_rare(self):
        rng = np.random.default_rng(13)
        total = clipped = 0
        for _ in range(6):
            c = random_generator_chain(rng, int(rng.integers(2, 5)))
            path = simulate_path_ct(c, 20.0, seed=int(rng.integers(1 << 30)))
            tr = wonham_run(c, generate_observations_ct(c, path, 1.0, 1e-3, seed=int(rng.integers(1 << 30))))
            total += len(tr) - 1
            clipped += tr.clipped_steps
        frac = clipped / total
        print(f"clipped fraction {frac:.2e}")
        assert frac < 0.01


class TestZ:
    def test_zero_horizon(self):
        z = simulate_z_ct(gen(), 0.0, 1e-3, seed=0, n_paths=3)
        assert z.shape == (1, 3, 2) and not z.any()

    def test_constant_h(self):
        z = simulate_z_ct(gen(h=(1.0, 1.0)), 1.0, 1e-3, seed=0, n_paths=4)
        assert not z.any()

    def test_zero_sum(self):
        rng = np.random.default_rng(2)
        c = random_generator_chain(rng, 4)
        z = simulate_z_ct(c, 5.0, 1e-3, seed=1, n_paths=50)
        assert np.abs(z.sum(axis=-1)).max() <= 1e-12

    def test_seeded(self):
        c = gen()
        a = simulate_z_ct(c, 1.0, 1e-3, seed=5, n_paths=4)
        b = simulate_z_ct(c, 1.0, 1e-3, seed=5, n_paths=4)
        assert np.array_equal(a, b)
