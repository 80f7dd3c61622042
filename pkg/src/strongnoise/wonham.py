"""Continuous-time filtering: Euler-Maruyama for the Wonham equation.

Observations are increments of ``Y_t = int_0^t h(X_s) ds + sigma B_t`` over a
uniform grid of step ``dt``.  After each Euler step negative coordinates are
clipped and the vector renormalized, so every emitted law is on the simplex.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import expm

from .filtering import FilterTrajectory
from .markov import PathCT, _rng
from .model import ChainSpec, ModelError, gamma_h

DEFAULT_DT = 1e-3


@dataclass(frozen=True)
class ObservationCT:
    dt: float
    dys: NDArray[np.float64]
    sigma: float

    @property
    def horizon(self) -> float:
        return self.dt * self.dys.shape[0]


def _grid(T: float, dt: float) -> tuple[int, NDArray[np.float64]]:
    n = int(round(T / dt))
    if n < 0 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ModelError(f"horizon {T} is not a multiple of dt={dt}")
    return n, dt * np.arange(n + 1)


def generate_observations_ct(
    chain: ChainSpec, path: PathCT, sigma: float, dt: float = DEFAULT_DT, seed=None, noise=None
) -> ObservationCT:
    """Observation increments over ``[0, path.horizon]``.

    The drift part integrates ``h`` exactly along the jump path.  ``noise``
    may supply the standard normal draws ``eta_k`` directly.
    """
    if sigma <= 0 or dt <= 0:
        raise ModelError("sigma and dt must be positive")
    n, grid = _grid(path.horizon, dt)
    drift = np.diff(path.occupation(grid, np.asarray(chain.h)))
    eta = _rng(seed).standard_normal(n) if noise is None else np.asarray(noise, dtype=float)
    return ObservationCT(float(dt), drift + sigma * np.sqrt(dt) * eta, float(sigma))


def _project(p: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    neg = np.any(p < 0, axis=-1)
    if neg.any():
        p = np.clip(p, 0.0, None)
    return p / np.sum(p, axis=-1, keepdims=True), neg


def wonham_step(chain: ChainSpec, pi: ArrayLike, dy, dt: float, sigma: float) -> NDArray[np.float64]:
    """One Euler-Maruyama step followed by clip-and-renormalize.

    ``pi`` may be a batch of row vectors with matching ``dy``.
    """
    if chain.discrete:
        raise ModelError("wonham_step needs a continuous-time chain")
    out, _ = _raw_step(chain, np.asarray(pi, dtype=float), np.asarray(dy, dtype=float), dt, sigma)
    return out


def _raw_step(chain, pi, dy, dt, sigma):
    h = chain.h
    drift = np.sum(pi[..., :, None] * chain.Lambda, axis=-2) * dt
    innov = dy - np.sum(pi * h, axis=-1) * dt
    p = pi + drift + gamma_h(pi, h) * (np.asarray(innov)[..., None] / sigma**2)
    return _project(p)


def wonham_batch(
    chain: ChainSpec,
    dys: NDArray[np.float64],
    dt: float,
    sigma: float,
    pi0: NDArray[np.float64],
    out: NDArray[np.float64] | None = None,
) -> tuple[NDArray[np.float64], int]:
    """Integrate ``k`` filters side by side; ``dys`` is ``(n, k)``.

    Returns ``pi_1..pi_n`` as ``(n, k, d)`` and the number of clipped
    filter-steps.
    """
    n, k = dys.shape
    if out is None:
        out = np.empty((n, k, chain.d))
    pi = np.asarray(pi0, dtype=float)
    clipped = 0
    for t in range(n):
        pi, neg = _raw_step(chain, pi, dys[t], dt, sigma)
        clipped += int(np.count_nonzero(neg))
        out[t] = pi
    return out, clipped


def wonham_run(chain: ChainSpec, obs: ObservationCT) -> FilterTrajectory:
    if chain.discrete:
        raise ModelError("wonham_run needs a continuous-time chain")
    n = obs.dys.shape[0]
    pis = np.empty((n + 1, chain.d))
    pis[0] = chain.nu
    _, clipped = wonham_batch(chain, obs.dys[:, None], obs.dt, obs.sigma, np.asarray(chain.nu)[None], pis[1:, None, :])
    return FilterTrajectory(pis, None, clipped)


def simulate_z_ct(
    chain: ChainSpec,
    T: float,
    dt: float = DEFAULT_DT,
    seed=None,
    n_paths: int = 1,
    start: ArrayLike | None = None,
    record_every: int = 1,
    increments: NDArray[np.float64] | None = None,
) -> NDArray[np.float64]:
    """Euler scheme for the Gaussian fluctuation diffusion.

    ``dZ = Lambda^T Z dt + Gamma(nu_t) h dW``, ``Z_0 = 0``, where ``W`` is a
    fresh standard Brownian motion and ``nu_t = exp(Lambda^T t) nu`` is advanced
    by a precomputed one-step matrix exponential.  ``start`` overrides the
    initial law (use the stationary law for the stationary variant).

    Returns an array of shape ``(n_records, n_paths, d)`` holding ``Z`` at
    steps ``0, record_every, 2*record_every, ...`` (and the final step).
    ``increments`` may supply the Brownian increments as ``(n, n_paths)``.
    """
    if chain.discrete:
        raise ModelError("simulate_z_ct needs a continuous-time chain")
    n, _ = _grid(T, dt)
    rng = _rng(seed)
    d = chain.d
    nu = np.asarray(chain.nu if start is None else start, dtype=float)
    flow = expm(chain.Lambda.T * dt)
    step_mat = chain.Lambda * dt  # row-vector form of Lambda^T z dt
    z = np.zeros((n_paths, d))
    recs = [z.copy()]
    sqdt = np.sqrt(dt)
    for t in range(n):
        dw = rng.standard_normal(n_paths) * sqdt if increments is None else increments[t]
        z = z + z @ step_mat + np.outer(dw, gamma_h(nu, chain.h))
        nu = flow @ nu
        if (t + 1) % record_every == 0 or t + 1 == n:
            recs.append(z.copy())
    return np.stack(recs)
