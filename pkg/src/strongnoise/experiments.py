"""Monte Carlo estimates of the steady-state filtering errors.

Every trial simulates a signal path and its observations from its own
generator, seeded by ``(seed, trial_index)``, and runs the exact filter
(discrete time) or the Wonham integrator (continuous time).  The first
``burn_in`` steps are discarded and the rest are time-averaged; standard
errors come from batch means over trials.

The a priori errors ``E_inf`` and ``P_inf`` are computed from the stationary
law, never estimated.  The scaled MAP gap is measured through the
concentrated functional ``max_i pi(i) - mean_{j in J} pi(j)`` whose mean equals
``P_inf - P_sigma`` for a stationary filter, rather than by differencing two
noisy error rates.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import asymptotics
from .filtering import filter_batch
from .markov import require_ergodic, simulate_path_ct, simulate_path_dt, slow_chain, stationary_distribution
from .model import ChainSpec, ModelError, NoiseModel, gaussian
from .wonham import generate_observations_ct, simulate_z_ct, wonham_batch

TRIAL_GROUP = 32  # trials filtered side by side; fixed so results ignore thread count
CHUNK = 4096  # time steps held in memory at once
WITHIN_TRIAL_BATCHES = 10  # batch count used when there is a single trial


class BudgetError(ModelError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    chain: ChainSpec
    noise: NoiseModel = field(default_factory=gaussian)
    sigmas: tuple[float, ...] = ()
    epsilons: tuple[float, ...] = ()
    horizon: float | None = None
    burn_in: float | None = None
    trials: int = 20
    dt: float = 1e-3
    seed: int = 0
    min_budget: int = 1000

    def __post_init__(self):
        # defaults depend on the time mode
        if self.horizon is None:
            object.__setattr__(self, "horizon", 10**5 if self.chain.discrete else 100.0)
        if self.burn_in is None:
            b = self.horizon // 10 if self.chain.discrete else 0.1 * self.horizon
            object.__setattr__(self, "burn_in", b)
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        if self.chain.discrete and int(self.horizon) != self.horizon:
            raise ModelError("discrete horizon must be an integer number of steps")
        if not 0 <= self.burn_in < self.horizon:
            raise ModelError(f"burn_in ({self.burn_in}) must lie in [0, horizon={self.horizon})")
        if self.trials < 1:
            raise ModelError("trials must be at least 1")
        if any(not s > 0 for s in self.sigmas):
            raise ModelError("all sigmas must be positive")
        if any(not 0 < e <= 1 for e in self.epsilons):
            raise ModelError("all epsilons must lie in (0, 1]")
        if self.dt <= 0:
            raise ModelError("dt must be positive")

    @property
    def steps(self) -> int:
        return int(self.horizon) if self.chain.discrete else int(round(self.horizon / self.dt))

    @property
    def burn_steps(self) -> int:
        return int(self.burn_in) if self.chain.discrete else int(round(self.burn_in / self.dt))

    def with_(self, **changes) -> "ExperimentConfig":
        vals = {f: getattr(self, f) for f in self.__dataclass_fields__}
        vals.update(changes)
        return ExperimentConfig(**vals)


@dataclass(frozen=True)
class SweepRow:
    sigma: float
    n_samples: int
    mse_hat: float
    mse_stderr: float
    map_hat: float
    map_stderr: float
    mse_gap_scaled: float
    mse_gap_stderr: float
    map_gap_scaled: float
    map_gap_stderr: float
    pred_mse_gap: float
    pred_map_gap: float
    map_indicator_hat: float = math.nan
    map_indicator_stderr: float = math.nan
    cov_hat: tuple[float, ...] = ()


@dataclass(frozen=True)
class PushforwardMoments:
    sigma: float
    mean: NDArray[np.float64]
    mean_stderr: NDArray[np.float64]
    cov: NDArray[np.float64]
    cov_stderr: NDArray[np.float64]
    emax: float
    emax_stderr: float
    P: NDArray[np.float64]
    J: tuple[int, ...]

    @property
    def cov_rel_error(self) -> float:
        """Relative Frobenius distance between the sample covariance and ``P``."""
        return float(np.linalg.norm(self.cov - self.P) / np.linalg.norm(self.P))


@dataclass(frozen=True)
class WeakRow:
    eps: float
    n_samples: int
    map_hat: float
    map_stderr: float
    mse_hat: float
    mse_stderr: float
    map_ratio: float
    map_ratio_stderr: float
    mse_ratio: float
    mse_ratio_stderr: float
    coef_map: float
    coef_mse: float

    @property
    def map_rel_distance(self) -> float:
        return abs(self.map_ratio / self.coef_map - 1.0)

    @property
    def mse_rel_distance(self) -> float:
        return abs(self.mse_ratio / self.coef_mse - 1.0)


# --- simulation core ----------------------------------------------------------

_SCALARS = ("mse", "map_ind", "one_minus_max", "cv_gap", "emax")


@dataclass
class _Stats:
    """Per-batch means of every functional, shape ``(n_batches, ...)``."""

    scalars: dict[str, NDArray[np.float64]]
    zmean: NDArray[np.float64]
    zsecond: NDArray[np.float64]
    n_samples: int

    def mean_se(self, key: str) -> tuple[float, float]:
        return _mean_se(self.scalars[key])


def _mean_se(x: NDArray[np.float64]):
    m = x.shape[0]
    mean = np.mean(x, axis=0)
    if m < 2:
        return mean, np.full_like(np.asarray(mean, dtype=float), np.nan)
    return mean, np.std(x, axis=0, ddof=1) / math.sqrt(m)


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(trial)])


def _simulate_group(cfg: ExperimentConfig, chain: ChainSpec, sigma: float, trials: list[int], mu, J, nb: int):
    """Simulate one group of trials and return per-(trial, batch) sums."""
    k = len(trials)
    d = chain.d
    n = cfg.steps
    burn = cfg.burn_steps
    a = np.asarray(chain.a)
    states = np.empty((n, k), dtype=np.int64)  # X at steps 1..n
    y = np.empty((n, k))
    starts = np.empty(k, dtype=np.int64)
    for col, tr in enumerate(trials):
        rng = _trial_rng(cfg.seed, tr)
        if chain.discrete:
            path = simulate_path_dt(chain, n, rng)
            states[:, col] = path.states[1:]
            starts[col] = path.states[0]
            y[:, col] = chain.h[path.states[1:]] + sigma * cfg.noise.sample(rng, n)
        else:
            path = simulate_path_ct(chain, cfg.horizon, rng)
            grid = cfg.dt * np.arange(1, n + 1)
            states[:, col] = path.state_at(grid)
            starts[col] = path.initial_state
            obs = generate_observations_ct(chain, path, sigma, cfg.dt, rng)
            y[:, col] = obs.dys

    n_ret = n - burn
    sums = {key: np.zeros((k, nb)) for key in _SCALARS}
    zsum = np.zeros((k, nb, d))
    zzsum = np.zeros((k, nb, d, d))
    counts = np.zeros(nb, dtype=np.int64)
    pi = np.tile(np.asarray(chain.nu, dtype=float), (k, 1))
    Jidx = list(J)
    for lo in range(0, n, CHUNK):
        hi = min(n, lo + CHUNK)
        if chain.discrete:
            pis = filter_batch(chain, cfg.noise, sigma, y[lo:hi], pi)
        else:
            pis, _ = wonham_batch(chain, y[lo:hi], cfg.dt, sigma, pi)
        pi = pis[-1]
        # steps lo+1..hi; keep those past the burn-in
        first = max(lo, burn)
        if first >= hi:
            continue
        P_ = pis[first - lo:]
        X = states[first:hi]
        step_idx = np.arange(first, hi) - burn
        block = np.minimum(step_idx * nb // n_ret, nb - 1)
        err = a[X] - P_ @ a
        mx = P_.max(axis=-1)
        dz = sigma * (P_ - mu)
        vals = {
            "mse": err * err,
            "map_ind": (np.argmax(P_, axis=-1) != X).astype(float),
            "one_minus_max": 1.0 - mx,
            "cv_gap": mx - P_[..., Jidx].mean(axis=-1),
            "emax": dz[..., Jidx].max(axis=-1),
        }
        for b in np.unique(block):
            sel = block == b
            counts[b] += int(sel.sum())
            for key, v in vals.items():
                sums[key][:, b] += np.sum(v[sel], axis=0)
            zb = dz[sel]
            zsum[:, b] += np.sum(zb, axis=0)
            zzsum[:, b] += np.einsum("tki,tkj->kij", zb, zb)
    return sums, zsum, zzsum, counts


def _collect(cfg: ExperimentConfig, chain: ChainSpec, sigma: float, threads: int = 1) -> _Stats:
    require_ergodic(chain)
    n_ret = cfg.steps - cfg.burn_steps
    n_samples = cfg.trials * n_ret
    if n_samples < cfg.min_budget:
        raise BudgetError(f"budget of {n_samples} retained samples is below the floor {cfg.min_budget}")
    mu = stationary_distribution(chain)
    J = asymptotics.argmax_set(mu)
    nb = 1 if cfg.trials >= 2 else min(WITHIN_TRIAL_BATCHES, n_ret)
    groups = [list(range(i, min(cfg.trials, i + TRIAL_GROUP))) for i in range(0, cfg.trials, TRIAL_GROUP)]

    def work(g):
        return _simulate_group(cfg, chain, sigma, g, mu, J, nb)

    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, groups))
    else:
        results = [work(g) for g in groups]

    counts = results[0][3]
    scalars = {
        key: np.concatenate([r[0][key] for r in results]).reshape(-1) / np.tile(counts, cfg.trials)
        for key in _SCALARS
    }
    d = chain.d
    zmean = np.concatenate([r[1] for r in results]).reshape(-1, d) / np.tile(counts, cfg.trials)[:, None]
    zsecond = np.concatenate([r[2] for r in results]).reshape(-1, d, d) / np.tile(counts, cfg.trials)[:, None, None]
    return _Stats(scalars, zmean, zsecond, n_samples)


# --- public operations ----------------------------------------------------------


def _prediction(cfg: ExperimentConfig):
    return asymptotics.predict(cfg.chain, cfg.noise, seed=cfg.seed)


def estimate_steady_errors(cfg: ExperimentConfig, sigma: float, threads: int = 1, prediction=None) -> SweepRow:
    """Steady-state MMSE and MAP error at one noise level, with scaled gaps."""
    pred = _prediction(cfg) if prediction is None else prediction
    st = _collect(cfg, cfg.chain, sigma, threads)
    mse, mse_se = st.mean_se("mse")
    omm, omm_se = st.mean_se("one_minus_max")
    ind, ind_se = st.mean_se("map_ind")
    cv, cv_se = st.mean_se("cv_gap")
    cov, _ = _mean_se(st.zsecond)
    return SweepRow(
        sigma=float(sigma),
        n_samples=st.n_samples,
        mse_hat=float(mse),
        mse_stderr=float(mse_se),
        map_hat=float(omm),
        map_stderr=float(omm_se),
        mse_gap_scaled=float(sigma**2 * (pred.e_infinity - mse)),
        mse_gap_stderr=float(sigma**2 * mse_se),
        map_gap_scaled=float(sigma * cv),
        map_gap_stderr=float(sigma * cv_se),
        pred_mse_gap=pred.mse_gap_limit,
        pred_map_gap=pred.map_gap_limit,
        map_indicator_hat=float(ind),
        map_indicator_stderr=float(ind_se),
        cov_hat=tuple(float(v) for v in np.ravel(cov)),
    )


def sweep(cfg: ExperimentConfig, threads: int = 1) -> list[SweepRow]:
    """One :class:`SweepRow` per noise level in ``cfg.sigmas``."""
    if not cfg.sigmas:
        return []
    pred = _prediction(cfg)
    return [estimate_steady_errors(cfg, s, threads, pred) for s in cfg.sigmas]


def pushforward_moments(cfg: ExperimentConfig, sigma: float, threads: int = 1) -> PushforwardMoments:
    """Moments of ``sigma * (pi - mu)`` under the stationary filter.

    ``cov`` is the second moment about ``mu`` (the mean vanishes in the
    limit) and is meant to be compared with ``P``.
    """
    st = _collect(cfg, cfg.chain, sigma, threads)
    pred = _prediction(cfg)
    mean, mean_se = _mean_se(st.zmean)
    cov, cov_se = _mean_se(st.zsecond)
    em, em_se = st.mean_se("emax")
    return PushforwardMoments(
        sigma=float(sigma),
        mean=mean,
        mean_stderr=mean_se,
        cov=cov,
        cov_stderr=cov_se,
        emax=float(em),
        emax_stderr=float(em_se),
        P=pred.P.P,
        J=pred.argmax_set,
    )


def weak_noise_sweep(
    cfg: ExperimentConfig, epsilons=None, sigma: float | None = None, threads: int = 1
) -> list[WeakRow]:
    """Slow-chain errors over ``epsilons`` at a fixed reference noise level.

    Ratios ``P_eps / (eps log 1/eps)`` and ``E_eps / (eps log 1/eps)`` are
    reported next to the predicted leading coefficients.  The reference
    noise level defaults to the first entry of ``cfg.sigmas``.
    """
    eps_list = cfg.epsilons if epsilons is None else tuple(epsilons)
    if sigma is None:
        if not cfg.sigmas:
            raise ModelError("weak-noise sweep needs a reference sigma")
        sigma = cfg.sigmas[0]
    coef_map = asymptotics.weak_noise_map_error(cfg.chain, cfg.noise, sigma)
    coef_mse = asymptotics.weak_noise_mse(cfg.chain, cfg.noise, sigma)
    rows = []
    for eps in eps_list:
        chain = slow_chain(cfg.chain, eps)
        st = _collect(cfg, chain, sigma, threads)
        p, p_se = st.mean_se("one_minus_max")
        e, e_se = st.mean_se("mse")
        # eps = 1 has no logarithmic scale; ratios are undefined there
        scale = eps * math.log(1.0 / eps) if eps < 1 else math.nan
        rows.append(
            WeakRow(
                eps=float(eps),
                n_samples=st.n_samples,
                map_hat=float(p),
                map_stderr=float(p_se),
                mse_hat=float(e),
                mse_stderr=float(e_se),
                map_ratio=float(p / scale),
                map_ratio_stderr=float(p_se / scale),
                mse_ratio=float(e / scale),
                mse_ratio_stderr=float(e_se / scale),
                coef_map=coef_map,
                coef_mse=coef_mse,
            )
        )
    return rows


def z_covariance(cfg: ExperimentConfig, seed: int | None = None, n: int = 10**5, discard: int = 10**4,
                 T: float = 50.0, n_paths: int = 10**4):
    """Sample covariance of the fluctuation process against the Lyapunov solution.

    Discrete time: one long stationary path of the recursion, ``discard``
    steps dropped and ``n`` kept.  Continuous time: ``n_paths`` independent
    copies of ``Z_T`` started from the stationary law.
    Returns ``(sample_cov, P, relative Frobenius error)``.
    """
    chain = cfg.chain
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    if chain.discrete:
        sol = asymptotics.lyapunov_dt(chain, cfg.noise.fisher)
        z = asymptotics.simulate_z_dt(chain, cfg.noise, discard + n, rng, start="mu")[discard + 1:]
        C = z.T @ z / z.shape[0]
    else:
        sol = asymptotics.lyapunov_ct(chain)
        mu = stationary_distribution(chain)
        zT = simulate_z_ct(chain, T, cfg.dt, rng, n_paths=n_paths, start=mu, record_every=10**9)[-1]
        C = zT.T @ zT / zT.shape[0]
    rel = float(np.linalg.norm(C - sol.P) / np.linalg.norm(sol.P))
    return C, sol.P, rel
