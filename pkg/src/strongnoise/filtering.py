"""Exact discrete-time filter for ``Y_n = h(X_n) + sigma * xi_n``.

The recursion alternates a prediction through the transposed transition
matrix with a Bayes update by the likelihood weights ``g((y - h_i)/sigma)``.
Weights are formed in log space and shifted by their maximum before
exponentiation, so they stay representable for small ``sigma``.  The common
Jacobian ``1/sigma`` cancels in the normalization and is never applied.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .markov import PathDT, _rng
from .model import ChainSpec, ModelError, NoiseModel


class DegenerateLikelihoodError(ModelError):
    """Every likelihood weight vanished for some observation."""


@dataclass(frozen=True)
class ObservationDT:
    y: NDArray[np.float64]
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ModelError(f"sigma must be positive, got {self.sigma}")
        if not np.all(np.isfinite(self.y)):
            raise ModelError("observations must be finite")


@dataclass(frozen=True)
class FilterTrajectory:
    pis: NDArray[np.float64]  # (n + 1, d)
    loglik: float | None = None
    clipped_steps: int = 0

    def __len__(self):
        return self.pis.shape[0]


def generate_observations(
    chain: ChainSpec, path: PathDT, sigma: float, model: NoiseModel, seed=None
) -> ObservationDT:
    """``Y_k = h(X_k) + sigma * xi_k`` for ``k = 1..n``."""
    rng = _rng(seed)
    states = np.asarray(path.states)[1:]
    xi = model.sample(rng, states.shape[0])
    return ObservationDT(chain.h[states] + sigma * xi, float(sigma))


def predict(chain: ChainSpec, pi: ArrayLike) -> NDArray[np.float64]:
    """``Lambda^T pi``; accepts a single vector or a batch of row vectors."""
    pi = np.asarray(pi, dtype=float)
    # elementwise form so each row of a batch is computed identically
    return np.sum(pi[..., :, None] * chain.Lambda, axis=-2)


def log_weights(chain: ChainSpec, model: NoiseModel, sigma: float, y) -> NDArray[np.float64]:
    """``log g((y - h_i)/sigma)`` with a trailing state axis."""
    y = np.asarray(y, dtype=float)
    return model.log_density((y[..., None] - chain.h) / sigma)


def _normalize_weighted(pi_pred: NDArray, logw: NDArray) -> NDArray:
    """Posterior from prior rows and log weights, computed fully in log space."""
    with np.errstate(divide="ignore"):
        lp = np.log(pi_pred) + logw
    top = np.max(lp, axis=-1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise DegenerateLikelihoodError("all likelihood weights vanish")
    w = np.exp(lp - top)
    return w / np.sum(w, axis=-1, keepdims=True)


def update(
    chain: ChainSpec, model: NoiseModel, sigma: float, pi_pred: ArrayLike, y
) -> NDArray[np.float64]:
    """Bayes correction of the predicted law by one observation."""
    if sigma <= 0:
        raise ModelError(f"sigma must be positive, got {sigma}")
    pi_pred = np.asarray(pi_pred, dtype=float)
    return _normalize_weighted(pi_pred, log_weights(chain, model, sigma, y))


def filter_batch(
    chain: ChainSpec,
    model: NoiseModel,
    sigma: float,
    y: NDArray[np.float64],
    pi0: NDArray[np.float64],
    out: NDArray[np.float64] | None = None,
) -> NDArray[np.float64]:
    """Run many independent filters side by side.

    ``y`` has shape ``(n, k)``: time first, one column per filter.  ``pi0`` is
    ``(k, d)``.  Returns ``pi_1..pi_n`` as an ``(n, k, d)`` array (written to
    ``out`` if given).
    """
    if not chain.discrete:
        raise ModelError("filter needs a discrete-time chain")
    n, k = y.shape
    logw = log_weights(chain, model, sigma, y)
    logw -= logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    if out is None:
        out = np.empty((n, k, chain.d))
    L = chain.Lambda
    pi = np.asarray(pi0, dtype=float)
    for t in range(n):
        p = np.sum(pi[:, :, None] * L, axis=1)
        p *= w[t]
        s = p.sum(axis=1)
        bad = ~(s > 0)
        if bad.any():
            # weights of the likely states underflowed; redo those rows in log space
            p[bad] = _normalize_weighted(np.sum(pi[bad][:, :, None] * L, axis=1), logw[t][bad])
            s[bad] = 1.0
        pi = p / s[:, None]
        out[t] = pi
    return out


def filter_run(chain: ChainSpec, model: NoiseModel, obs: ObservationDT) -> FilterTrajectory:
    """Filter from ``pi_0 = nu`` through every observation.

    ``loglik`` accumulates ``log |G(Y_n) Lambda^T pi_{n-1}|`` with the full
    density ``g((y - h_i)/sigma)/sigma``, i.e. the observation log likelihood.
    """
    if not chain.discrete:
        raise ModelError("filter needs a discrete-time chain")
    d = chain.d
    n = obs.y.shape[0]
    pis = np.empty((n + 1, d))
    pis[0] = chain.nu
    loglik = 0.0
    pi = np.array(chain.nu)
    for t in range(n):
        pred = predict(chain, pi)
        logw = log_weights(chain, model, obs.sigma, obs.y[t])
        top = logw.max()
        if not np.isfinite(top):
            raise DegenerateLikelihoodError(f"all likelihood weights vanish at step {t + 1}")
        unnorm = pred * np.exp(logw - top)
        s = unnorm.sum()
        if s > 0:
            pi = unnorm / s
            loglik += np.log(s) + top - np.log(obs.sigma)
        else:
            pi = _normalize_weighted(pred, logw)
            with np.errstate(divide="ignore"):
                loglik += float(np.logaddexp.reduce(np.log(pred) + logw)) - np.log(obs.sigma)
        pis[t + 1] = pi
    return FilterTrajectory(pis, float(loglik))


def point_estimates(pi: ArrayLike, a: ArrayLike) -> tuple[float, int]:
    """Conditional mean of ``a`` and the MAP state index (lowest index on ties)."""
    pi = np.asarray(pi, dtype=float)
    return float(np.dot(a, pi)), int(np.argmax(pi))
