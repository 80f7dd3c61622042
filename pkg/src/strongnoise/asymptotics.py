"""Closed- and semi-closed-form limits of the filtering errors.

Strong noise (``sigma -> infinity``): ``sigma * (pi - mu)`` is asymptotically
a centred Gaussian vector whose covariance ``P`` solves an algebraic Lyapunov
equation driven by ``Gamma(mu) h h^T Gamma(mu)``, where ``Gamma(x) = diag(x) -
x x^T``.  From ``P`` follow the scaled gaps of the MMSE and MAP errors.

Weak noise / slow chain: leading coefficients of ``eps log(1/eps)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import null_space

from .markov import require_ergodic, stationary_distribution
from .model import ChainSpec, ModelError, NoiseModel, fisher_information, gamma_h, kl_shifted, validate_chain

LYAP_TOL = 1e-10
MAX_ITER = 10**6


class LyapunovError(ModelError):
    pass


@dataclass(frozen=True)
class LyapunovSolution:
    P: NDArray[np.float64]
    mode: str
    residual: float
    iterations: int = 0


@dataclass(frozen=True)
class MaxGaussian:
    value: float
    stderr: float = 0.0


@dataclass(frozen=True)
class AsymptoticPrediction:
    mu: NDArray[np.float64]
    P: LyapunovSolution
    e_infinity: float
    p_infinity: float
    mse_gap_limit: float
    map_gap_limit: float
    map_gap_stderr: float
    argmax_set: tuple[int, ...]
    degenerate_map: bool


def zero_sum_basis(d: int) -> NDArray[np.float64]:
    """Orthonormal basis (as columns) of ``{x : sum(x) = 0}``."""
    return null_space(np.ones((1, d)))


def source_term(chain: ChainSpec, mu: NDArray[np.float64], fisher: float = 1.0) -> NDArray[np.float64]:
    s = gamma_h(mu, chain.h)
    return fisher * np.outer(s, s)


def lyapunov_dt_residual(chain: ChainSpec, P, Q) -> float:
    L = chain.Lambda
    return float(np.max(np.abs(L.T @ P @ L + Q - P)))


def lyapunov_ct_residual(chain: ChainSpec, P, Q) -> float:
    L = chain.Lambda
    return float(np.max(np.abs(L.T @ P + P @ L + Q)))


def _check(P, residual, mode):
    if not residual <= LYAP_TOL:
        raise LyapunovError(f"{mode} Lyapunov residual {residual:.3g} exceeds {LYAP_TOL}")
    P = 0.5 * (P + P.T)
    return P


def lyapunov_dt(chain: ChainSpec, fisher: float = 1.0, max_iter: int = MAX_ITER) -> LyapunovSolution:
    """Solve ``P = Lambda^T P Lambda + I * Gamma(mu) h h^T Gamma(mu)``.

    Fixed-point iteration from ``P = 0``.  The iterates stay in the zero-sum
    class, on which ``Lambda^T`` is a contraction for ergodic chains, so the
    iteration converges geometrically at the rate of the squared subdominant
    eigenvalue modulus.  It runs until the update no longer changes ``P``.
    """
    if not chain.discrete:
        raise ModelError("lyapunov_dt needs a discrete-time chain")
    if fisher <= 0:
        raise ModelError(f"Fisher information must be positive, got {fisher}")
    mu = stationary_distribution(chain)
    Q = source_term(chain, mu, fisher)
    L = chain.Lambda
    P = np.zeros_like(Q)
    scale = max(float(np.max(np.abs(Q))), np.finfo(float).tiny)
    it = 0
    best, stalled = math.inf, 0
    for it in range(1, max_iter + 1):
        nxt = L.T @ P @ L + Q
        step = float(np.max(np.abs(nxt - P)))
        P = nxt
        if step <= 1e-15 * max(scale, float(np.max(np.abs(P)))):
            break
        # rounding floor: the update has stopped shrinking
        if step < best:
            best, stalled = step, 0
        else:
            stalled += 1
            if stalled > 50:
                break
    P = _check(P, lyapunov_dt_residual(chain, P, Q), "discrete")
    return LyapunovSolution(P, "discrete", lyapunov_dt_residual(chain, P, Q), it)


def _kron_lyapunov(A: NDArray, C: NDArray, discrete: bool) -> NDArray:
    """Dense Kronecker solve of ``A S + S A^T + C = 0`` (or ``S = A S A^T + C``)."""
    m = A.shape[0]
    if m == 0:
        return np.zeros((0, 0))
    eye = np.eye(m)
    if discrete:
        M = np.eye(m * m) - np.kron(A, A)
        rhs = C.reshape(-1)
    else:
        M = np.kron(A, eye) + np.kron(eye, A)
        rhs = -C.reshape(-1)
    return np.linalg.solve(M, rhs).reshape(m, m)


def lyapunov_subspace(chain: ChainSpec, Q: NDArray) -> NDArray:
    """Solve either Lyapunov equation restricted to the zero-sum subspace.

    Used as the continuous-time solver and as a cross-check in discrete time.
    """
    V = zero_sum_basis(chain.d)
    A = V.T @ chain.Lambda.T @ V
    S = _kron_lyapunov(A, V.T @ Q @ V, chain.discrete)
    return V @ S @ V.T


def lyapunov_ct(chain: ChainSpec) -> LyapunovSolution:
    """Solve ``0 = Lambda^T P + P Lambda + Gamma(mu) h h^T Gamma(mu)``.

    The equation is singular on the full space; it is solved on the zero-sum
    subspace, which fixes the unique solution with ``sum_ij P_ij = 0``.
    """
    if chain.discrete:
        raise ModelError("lyapunov_ct needs a continuous-time chain")
    mu = stationary_distribution(chain)
    Q = source_term(chain, mu)
    P = lyapunov_subspace(chain, Q)
    P = _check(P, lyapunov_ct_residual(chain, P, Q), "continuous")
    return LyapunovSolution(P, "continuous", lyapunov_ct_residual(chain, P, Q))


def lyapunov(chain: ChainSpec, model: NoiseModel | None = None) -> LyapunovSolution:
    if chain.discrete:
        return lyapunov_dt(chain, 1.0 if model is None else fisher_information(model))
    return lyapunov_ct(chain)


def z_recursion(chain: ChainSpec, scores: NDArray[np.float64], nu: ArrayLike | None = None, stationary_law=None) -> NDArray[np.float64]:
    """Iterate ``Z_n = Lambda^T Z_{n-1} - Gamma(nu_n) h s_n`` from ``Z_0 = 0``.

    ``scores`` holds ``s_n = g'(xi_n)/g(xi_n)``; a 2-d array runs independent
    copies column-wise.  With ``stationary_law`` given, ``nu_n`` is frozen at
    that law; otherwise ``nu_n = (Lambda^T)^n nu``.  Returns ``Z_0..Z_n`` with
    shape ``(n + 1, d)`` or ``(n + 1, k, d)``.
    """
    scores = np.asarray(scores, dtype=float)
    batched = scores.ndim == 2
    s = scores if batched else scores[:, None]
    n, k = s.shape
    d = chain.d
    L = chain.Lambda
    out = np.zeros((n + 1, k, d))
    z = np.zeros((k, d))
    if stationary_law is not None:
        drive = gamma_h(np.asarray(stationary_law, dtype=float), chain.h)
    else:
        nu_t = np.asarray(chain.nu if nu is None else nu, dtype=float)
    for t in range(n):
        if stationary_law is None:
            nu_t = L.T @ nu_t
            drive = gamma_h(nu_t, chain.h)
        z = z @ L - np.outer(s[t], drive)
        out[t + 1] = z
    return out if batched else out[:, 0, :]


def simulate_z_dt(
    chain: ChainSpec, model: NoiseModel, n: int, seed=None, start: str = "nu", n_paths: int | None = None
) -> NDArray[np.float64]:
    """Simulate the discrete fluctuation process driven by i.i.d. noise scores.

    ``start='nu'`` uses the transient law ``nu_n``; ``start='mu'`` the
    stationary variant with ``mu`` in place of ``nu_n``.
    """
    if not chain.discrete:
        raise ModelError("simulate_z_dt needs a discrete-time chain")
    if start not in ("nu", "mu"):
        raise ModelError(f"start must be 'nu' or 'mu', got {start!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = n if n_paths is None else (n, n_paths)
    scores = model.score(model.sample(rng, shape))
    law = stationary_distribution(chain) if start == "mu" else None
    return z_recursion(chain, scores, stationary_law=law)


def predicted_mse_gap(P: LyapunovSolution | NDArray, a: ArrayLike) -> float:
    """``a^T P a``: limit of ``sigma^2 (E_inf - E_sigma)``."""
    M = P.P if isinstance(P, LyapunovSolution) else np.asarray(P)
    a = np.asarray(a, dtype=float)
    return float(max(a @ M @ a, 0.0))


def argmax_set(mu: ArrayLike, tol: float = 1e-9) -> tuple[int, ...]:
    """Indices whose mass is within ``tol * max(mu)`` of the maximum."""
    mu = np.asarray(mu, dtype=float)
    top = mu.max()
    return tuple(int(i) for i in np.flatnonzero(mu >= top - tol * top))


def expected_max_gaussian(
    P: LyapunovSolution | NDArray, J, n_mc: int = 10**6, seed=0
) -> MaxGaussian:
    """``E max_{j in J} Z_j`` for ``Z ~ N(0, P)``.

    Exact for ``|J| <= 2``; Monte Carlo with a standard error otherwise.
    """
    M = P.P if isinstance(P, LyapunovSolution) else np.asarray(P, dtype=float)
    J = sorted(set(int(j) for j in J))
    if not J:
        raise ModelError("index set J is empty")
    if len(J) == 1:
        return MaxGaussian(0.0)
    sub = M[np.ix_(J, J)]
    w, U = np.linalg.eigh(0.5 * (sub + sub.T))
    if w.min() < -1e-10:
        raise ModelError(f"restricted covariance is not positive semidefinite (min eigenvalue {w.min():.3g})")
    if len(J) == 2:
        var = sub[0, 0] + sub[1, 1] - 2.0 * sub[0, 1]
        return MaxGaussian(math.sqrt(max(var, 0.0) / (2.0 * math.pi)))
    factor = U * np.sqrt(np.clip(w, 0.0, None))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    left = n_mc
    while left > 0:
        m = min(left, 1 << 16)
        z = rng.standard_normal((m, len(J))) @ factor.T
        mx = z.max(axis=1)
        total += float(mx.sum())
        total_sq += float(mx @ mx)
        left -= m
    mean = total / n_mc
    var = max(total_sq / n_mc - mean * mean, 0.0)
    return MaxGaussian(mean, math.sqrt(var / max(n_mc - 1, 1)))


# --- weak noise -------------------------------------------------------------


def _divergences(chain: ChainSpec, model: NoiseModel, sigma: float) -> NDArray[np.float64]:
    """``D[i, j] = KL(g_j || g_i)`` for every pair with ``lambda_ij > 0``."""
    d = chain.d
    D = np.full((d, d), np.nan)
    for i in range(d):
        for j in range(d):
            if i == j or chain.Lambda[i, j] <= 0:
                continue
            if chain.discrete:
                D[i, j] = kl_shifted(model, chain.h[j], chain.h[i], sigma)
            else:
                D[i, j] = (chain.h[i] - chain.h[j]) ** 2 / (2.0 * sigma**2)
            if not D[i, j] > 0:
                raise ModelError(
                    f"states {i + 1} and {j + 1} are not distinguishable (zero divergence) "
                    "but the chain moves between them"
                )
    return D


def _weak_coefficient(chain, model, sigma, weights) -> float:
    require_ergodic(chain)
    mu = stationary_distribution(chain)
    D = _divergences(chain, model, sigma)
    c = 0.0
    for i in range(chain.d):
        for j in range(chain.d):
            if i != j and chain.Lambda[i, j] > 0:
                c += mu[i] * chain.Lambda[i, j] * weights[i, j] / D[i, j]
    return float(c)


def weak_noise_map_error(chain: ChainSpec, model: NoiseModel, sigma: float) -> float:
    """Coefficient of ``eps log(1/eps)`` in the slow-chain MAP error."""
    return _weak_coefficient(chain, model, sigma, np.ones((chain.d, chain.d)))


def weak_noise_mse(chain: ChainSpec, model: NoiseModel, sigma: float, a: ArrayLike | None = None) -> float:
    """Coefficient of ``eps log(1/eps)`` in the slow-chain MMSE."""
    a = np.asarray(chain.a if a is None else a, dtype=float)
    return _weak_coefficient(chain, model, sigma, (a[:, None] - a[None, :]) ** 2)


# --- binary example ---------------------------------------------------------


def example_chain(lam: float, gam: float, a=(0.0, 1.0), h=(0.0, 1.0), nu=None) -> ChainSpec:
    """Binary chain with staying probabilities ``lam`` and ``gam`` on the diagonal."""
    if not (0.0 < lam < 1.0 and 0.0 < gam < 1.0):
        raise ModelError("staying probabilities must lie in (0, 1)")
    L = [[lam, 1.0 - lam], [1.0 - gam, gam]]
    if nu is None:
        nu = [(1.0 - gam) / (2.0 - lam - gam), (1.0 - lam) / (2.0 - lam - gam)]
    return validate_chain("discrete", L, a, h, nu)


def binary_closed_form(lam: float, gam: float, h: ArrayLike, fisher: float = 1.0) -> float:
    """``P_11`` of the binary chain with staying probabilities ``lam``, ``gam``."""
    if not (0.0 < lam < 1.0 and 0.0 < gam < 1.0):
        raise ModelError("staying probabilities must lie in (0, 1)")
    h1, h2 = h
    mu1 = (1.0 - gam) / (2.0 - lam - gam)
    mu2 = 1.0 - mu1
    return fisher * mu1**2 * mu2**2 * (h1 - h2) ** 2 / ((lam + gam) * (2.0 - lam - gam))


def binary_closed_form_alt(lam: float, gam: float, h: ArrayLike, fisher: float = 1.0) -> float:
    """Same quantity with the stationary law substituted."""
    if not (0.0 < lam < 1.0 and 0.0 < gam < 1.0):
        raise ModelError("staying probabilities must lie in (0, 1)")
    h1, h2 = h
    return fisher * (1 - lam) ** 2 * (1 - gam) ** 2 * (h1 - h2) ** 2 / ((lam + gam) * (2.0 - lam - gam) ** 5)


# --- assembled prediction ---------------------------------------------------


def predict(
    chain: ChainSpec,
    model: NoiseModel | None = None,
    a: ArrayLike | None = None,
    tol: float = 1e-9,
    n_mc: int = 10**6,
    seed=0,
) -> AsymptoticPrediction:
    """Strong-noise limits for the chain.

    The MAP limit needs a Gaussian fluctuation vector: in discrete time it is
    reported only for Gaussian noise (``nan`` otherwise).
    """
    require_ergodic(chain)
    a = np.asarray(chain.a if a is None else a, dtype=float)
    mu = stationary_distribution(chain)
    sol = lyapunov(chain, model)
    J = argmax_set(mu, tol)
    gaussian_z = (not chain.discrete) or model is None or model.kind == "gaussian"
    if gaussian_z:
        mx = expected_max_gaussian(sol, J, n_mc=n_mc, seed=seed)
        map_gap, map_se = mx.value, mx.stderr
    else:
        map_gap, map_se = math.nan, math.nan
    return AsymptoticPrediction(
        mu=mu,
        P=sol,
        e_infinity=float(mu @ a**2 - (mu @ a) ** 2),
        p_infinity=float(1.0 - mu.max()),
        mse_gap_limit=predicted_mse_gap(sol, a),
        map_gap_limit=map_gap,
        map_gap_stderr=map_se,
        argmax_set=J,
        degenerate_map=len(J) == 1,
    )
