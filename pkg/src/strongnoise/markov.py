"""Stationary analysis, ergodicity and path simulation for the signal chain."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .model import ChainSpec, ModelError, validate_chain


class NotErgodicError(ModelError):
    pass


@dataclass(frozen=True)
class Ergodicity:
    ergodic: bool
    witness: int | None = None


@dataclass(frozen=True)
class PathDT:
    states: NDArray[np.int64]


@dataclass(frozen=True)
class PathCT:
    initial_state: int
    jump_times: NDArray[np.float64]
    jump_states: NDArray[np.int64]
    horizon: float

    def state_at(self, t) -> NDArray[np.int64]:
        """State occupied at time(s) ``t`` (right-continuous)."""
        seq = np.concatenate([[self.initial_state], self.jump_states]).astype(np.int64)
        return seq[np.searchsorted(self.jump_times, t, side="right")]

    def occupation(self, grid: NDArray[np.float64], values: NDArray[np.float64]) -> NDArray[np.float64]:
        """``int_0^t values[X_s] ds`` evaluated at each point of ``grid``."""
        knots = np.concatenate([[0.0], self.jump_times])
        seq = np.concatenate([[self.initial_state], self.jump_states]).astype(np.int64)
        seg = values[seq[:-1]] * np.diff(knots)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        k = np.searchsorted(knots, grid, side="right") - 1
        return cum[k] + values[seq[k]] * (grid - knots[k])


def is_ergodic(chain: ChainSpec) -> Ergodicity:
    """Primitivity (discrete) or irreducibility (continuous) of the chain.

    In discrete time the witness is the smallest ``q`` with ``Lambda^q``
    entrywise positive, searched up to Wielandt's bound ``d^2 - 2d + 2``.
    Powers are taken on the boolean support pattern.
    """
    d = chain.d
    support = chain.Lambda > 0
    if chain.discrete:
        power = support.copy()
        for q in range(1, d * d - 2 * d + 3):
            if power.all():
                return Ergodicity(True, q)
            power = (power.astype(np.int64) @ support.astype(np.int64)) > 0
        return Ergodicity(False)
    # strong connectivity of the off-diagonal support graph
    adj = support | np.eye(d, dtype=bool)
    reach = adj.copy()
    for _ in range(d):
        nxt = (reach.astype(np.int64) @ adj.astype(np.int64)) > 0
        if (nxt == reach).all():
            break
        reach = nxt
    return Ergodicity(bool(reach.all()))


def require_ergodic(chain: ChainSpec) -> None:
    if not is_ergodic(chain).ergodic:
        raise NotErgodicError("chain is not ergodic")


def stationary_distribution(chain: ChainSpec) -> NDArray[np.float64]:
    """Invariant law: one balance equation replaced by the normalization."""
    require_ergodic(chain)
    d = chain.d
    A = chain.Lambda.T - np.eye(d) if chain.discrete else chain.Lambda.T.copy()
    A[-1, :] = 1.0
    rhs = np.zeros(d)
    rhs[-1] = 1.0
    mu = np.linalg.solve(A, rhs)
    # the solve is exact up to rounding; clear tiny negative noise
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def stationary_residual(chain: ChainSpec, mu: NDArray[np.float64]) -> float:
    r = chain.Lambda.T @ mu - (mu if chain.discrete else 0.0)
    return float(np.max(np.abs(r)))


def slow_chain(chain: ChainSpec, eps: float) -> ChainSpec:
    """Slow down the transitions by the factor ``eps``.

    Discrete time: off-diagonal probabilities become ``eps * lambda_ij`` and the
    diagonal takes up the rest of the row.  Continuous time: ``eps * Lambda``.
    """
    if not (0.0 < eps <= 1.0):
        raise ModelError(f"eps must lie in (0, 1], got {eps}")
    require_ergodic(chain)
    if chain.discrete:
        L = eps * chain.Lambda
        np.fill_diagonal(L, 0.0)
        np.fill_diagonal(L, 1.0 - L.sum(axis=1))
    else:
        L = eps * chain.Lambda
    return validate_chain(chain.mode, L, chain.a, chain.h, chain.nu)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def simulate_path_dt(chain: ChainSpec, n: int, seed=None, x0: int | None = None) -> PathDT:
    """Sample ``X_0, ..., X_n``; ``X_0 ~ nu`` unless ``x0`` is given."""
    if not chain.discrete:
        raise ModelError("simulate_path_dt needs a discrete-time chain")
    rng = _rng(seed)
    d = chain.d
    start = int(rng.choice(d, p=chain.nu)) if x0 is None else int(x0)
    u = rng.random(n)
    cum = np.cumsum(chain.Lambda, axis=1)
    cum[:, -1] = np.inf  # guard against row sums a hair below 1
    # next-state table: state after step k if the chain sits in i before it
    table = [np.searchsorted(cum[i], u, side="right").tolist() for i in range(d)]
    states = [start]
    x = start
    for k in range(n):
        x = table[x][k]
        states.append(x)
    return PathDT(np.asarray(states, dtype=np.int64))


def simulate_path_ct(chain: ChainSpec, T: float, seed=None, x0: int | None = None) -> PathCT:
    """Exact (Gillespie) simulation on ``[0, T]``."""
    if chain.discrete:
        raise ModelError("simulate_path_ct needs a continuous-time chain")
    if T <= 0:
        raise ModelError(f"horizon must be positive, got {T}")
    rng = _rng(seed)
    d = chain.d
    L = chain.Lambda
    rates = -np.diag(L)
    jump_probs = []
    for i in range(d):
        row = L[i].copy()
        row[i] = 0.0
        jump_probs.append(row / rates[i] if rates[i] > 0 else None)
    x = int(rng.choice(d, p=chain.nu)) if x0 is None else int(x0)
    t = 0.0
    times: list[float] = []
    states: list[int] = []
    x_init = x
    while True:
        if rates[x] <= 0:
            break
        t += rng.exponential(1.0 / rates[x])
        if t > T:
            break
        x = int(rng.choice(d, p=jump_probs[x]))
        times.append(t)
        states.append(x)
    return PathCT(x_init, np.asarray(times, dtype=float), np.asarray(states, dtype=np.int64), float(T))
