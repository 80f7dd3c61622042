"""Chain and noise abstractions shared by the rest of the package.

A chain is described by a :class:`ChainSpec`: either a row-stochastic
transition matrix (discrete time) or a generator with zero row sums
(continuous time), together with the state values ``a``, the observation
levels ``h`` and the initial law ``nu``.  Probability vectors on the ``d``
states are plain 1-d numpy arrays; :func:`as_simplex` validates them.

Noise enters through :class:`NoiseModel`, a scalar density with analytic
first and second derivatives.  Observations are ``Y = h(X) + sigma * xi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate

Mode = Literal["discrete", "continuous"]

SIMPLEX_TOL = 1e-12
QUAD_RTOL = 1e-8


class ModelError(ValueError):
    """Raised when a chain, distribution or noise model is invalid."""


def as_simplex(p: ArrayLike, d: int | None = None, tol: float = SIMPLEX_TOL) -> NDArray[np.float64]:
    """Return ``p`` as a float array after checking it is a probability vector."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1:
        raise ModelError(f"probability vector must be 1-d, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise ModelError(f"probability vector has length {arr.shape[0]}, expected {d}")
    if not np.all(np.isfinite(arr)):
        raise ModelError("probability vector has non-finite entries")
    if np.any(arr < 0):
        raise ModelError(f"probability vector has negative entries: {arr}")
    if abs(arr.sum() - 1.0) > tol:
        raise ModelError(f"probability vector sums to {arr.sum()!r}, not 1")
    return arr


def vertex(i: int, d: int) -> NDArray[np.float64]:
    p = np.zeros(d)
    p[i] = 1.0
    return p


@dataclass(frozen=True)
class ChainSpec:
    mode: Mode
    Lambda: NDArray[np.float64]
    a: NDArray[np.float64]
    h: NDArray[np.float64]
    nu: NDArray[np.float64]

    @property
    def d(self) -> int:
        return self.Lambda.shape[0]

    @property
    def discrete(self) -> bool:
        return self.mode == "discrete"

    def replace(self, **changes) -> "ChainSpec":
        fields = dict(mode=self.mode, Lambda=self.Lambda, a=self.a, h=self.h, nu=self.nu)
        fields.update(changes)
        return validate_chain(**fields)


def _frozen(x: ArrayLike) -> NDArray[np.float64]:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


def validate_chain(
    mode: str,
    Lambda: ArrayLike,
    a: ArrayLike,
    h: ArrayLike,
    nu: ArrayLike,
    tol: float = SIMPLEX_TOL,
) -> ChainSpec:
    """Check the raw inputs and build an immutable :class:`ChainSpec`.

    Nothing is renormalized: a row that misses 1 (or 0 for generators) by
    more than ``tol`` is an error.
    """
    if mode not in ("discrete", "continuous"):
        raise ModelError(f"mode must be 'discrete' or 'continuous', got {mode!r}")
    L = np.asarray(Lambda, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1] or L.shape[0] < 1:
        raise ModelError(f"transition matrix must be square d x d with d >= 1, got shape {L.shape}")
    if not np.all(np.isfinite(L)):
        raise ModelError("transition matrix has non-finite entries")
    d = L.shape[0]
    a_arr = np.asarray(a, dtype=float)
    h_arr = np.asarray(h, dtype=float)
    for name, vec in (("a", a_arr), ("h", h_arr)):
        if vec.shape != (d,):
            raise ModelError(f"{name} must have length {d}, got shape {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ModelError(f"{name} has non-finite entries")

    rows = L.sum(axis=1)
    if mode == "discrete":
        if np.any(L < 0) or np.any(L > 1):
            raise ModelError("transition probabilities must lie in [0, 1]")
        bad = np.flatnonzero(np.abs(rows - 1.0) > tol)
        if bad.size:
            raise ModelError(f"row {bad[0] + 1} of the transition matrix sums to {rows[bad[0]]!r}, not 1")
    else:
        off = L[~np.eye(d, dtype=bool)]
        if np.any(off < 0):
            raise ModelError("generator has negative off-diagonal intensities")
        bad = np.flatnonzero(np.abs(rows) > tol)
        if bad.size:
            raise ModelError(f"row {bad[0] + 1} of the generator sums to {rows[bad[0]]!r}, not 0")

    try:
        nu_arr = as_simplex(nu, d, tol)
    except ModelError as exc:
        raise ModelError(f"nu: {exc}") from None
    return ChainSpec(mode, _frozen(L), _frozen(a_arr), _frozen(h_arr), _frozen(nu_arr))


def gamma_matrix(x: ArrayLike) -> NDArray[np.float64]:
    """``diag(x) - x x^T``; symmetric with zero row sums for ``x`` on the simplex."""
    x = np.asarray(x, dtype=float)
    return np.diag(x) - np.outer(x, x)


def gamma_h(x: ArrayLike, h: ArrayLike) -> NDArray[np.float64]:
    """``(diag(x) - x x^T) h`` evaluated without forming the matrix.

    Works row-wise on a batch of shape ``(..., d)``.
    """
    x = np.asarray(x, dtype=float)
    # centering makes constant h give an exact zero
    h = np.asarray(h, dtype=float)
    h = h - h.mean()
    xh = np.sum(x * h, axis=-1, keepdims=True)
    return x * (h - xh)


# ---------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseModel:
    """A scalar noise density ``g`` with analytic derivatives.

    ``sample(rng, size)`` draws i.i.d. variates from ``g``.  ``logpdf`` is used
    by the filter for underflow-free likelihood weights; when omitted it
    defaults to ``log(g(u))``.  ``caveat`` is set for custom densities, for
    which the integrability conditions behind the strong-noise limits are not
    checked.
    """

    kind: str
    pdf: Callable[[NDArray], NDArray]
    dpdf: Callable[[NDArray], NDArray]
    d2pdf: Callable[[NDArray], NDArray]
    sample: Callable[[np.random.Generator, int | tuple], NDArray]
    logpdf: Callable[[NDArray], NDArray] | None = None
    score_fn: Callable[[NDArray], NDArray] | None = None
    fisher_exact: float | None = None
    params: dict = field(default_factory=dict)
    caveat: bool = False

    def log_density(self, u):
        if self.logpdf is not None:
            return self.logpdf(u)
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(u))

    def score(self, u):
        if self.score_fn is not None:
            return self.score_fn(u)
        return self.dpdf(u) / self.pdf(u)

    @property
    def fisher(self) -> float:
        return fisher_information(self)


_SQRT2PI = math.sqrt(2.0 * math.pi)


def gaussian() -> NoiseModel:
    """Standard normal noise."""

    def pdf(u):
        u = np.asarray(u, dtype=float)
        return np.exp(-0.5 * u * u) / _SQRT2PI

    return NoiseModel(
        kind="gaussian",
        pdf=pdf,
        dpdf=lambda u: -np.asarray(u, dtype=float) * pdf(u),
        d2pdf=lambda u: (np.asarray(u, dtype=float) ** 2 - 1.0) * pdf(u),
        sample=lambda rng, size: rng.standard_normal(size),
        logpdf=lambda u: -0.5 * np.asarray(u, dtype=float) ** 2 - math.log(_SQRT2PI),
        score_fn=lambda u: -np.asarray(u, dtype=float),
        fisher_exact=1.0,
    )


def cauchy() -> NoiseModel:
    """Standard Cauchy noise, ``g(u) = 1 / (pi (1 + u^2))``."""

    def pdf(u):
        u = np.asarray(u, dtype=float)
        return 1.0 / (math.pi * (1.0 + u * u))

    def dpdf(u):
        u = np.asarray(u, dtype=float)
        return -2.0 * u / (math.pi * (1.0 + u * u) ** 2)

    def d2pdf(u):
        u = np.asarray(u, dtype=float)
        return (6.0 * u * u - 2.0) / (math.pi * (1.0 + u * u) ** 3)

    return NoiseModel(
        kind="cauchy",
        pdf=pdf,
        dpdf=dpdf,
        d2pdf=d2pdf,
        sample=lambda rng, size: rng.standard_cauchy(size),
        logpdf=lambda u: -np.log1p(np.asarray(u, dtype=float) ** 2) - math.log(math.pi),
        score_fn=lambda u: -2.0 * np.asarray(u, dtype=float) / (1.0 + np.asarray(u, dtype=float) ** 2),
        fisher_exact=0.5,
    )


def custom(
    pdf: Callable,
    dpdf: Callable,
    d2pdf: Callable,
    sample: Callable,
    logpdf: Callable | None = None,
    **params,
) -> NoiseModel:
    """Wrap a user density.  Derivatives must be supplied analytically."""
    return NoiseModel(
        kind="custom", pdf=pdf, dpdf=dpdf, d2pdf=d2pdf, sample=sample,
        logpdf=logpdf, params=params, caveat=True,
    )


def scaled(base: NoiseModel, scale: float) -> NoiseModel:
    """The density of ``scale * xi`` for ``xi ~ base``, as a custom model."""
    if scale <= 0:
        raise ModelError(f"scale must be positive, got {scale}")
    s = float(scale)
    return custom(
        pdf=lambda u: base.pdf(np.asarray(u, dtype=float) / s) / s,
        dpdf=lambda u: base.dpdf(np.asarray(u, dtype=float) / s) / s**2,
        d2pdf=lambda u: base.d2pdf(np.asarray(u, dtype=float) / s) / s**3,
        sample=lambda rng, size: s * base.sample(rng, size),
        logpdf=lambda u: base.log_density(np.asarray(u, dtype=float) / s) - math.log(s),
        base=base.kind,
        scale=s,
    )


def noise_model(kind: str, scale: float = 1.0) -> NoiseModel:
    """Look up a built-in model by name, optionally rescaled."""
    builders = {"gaussian": gaussian, "cauchy": cauchy}
    if kind not in builders:
        raise ModelError(f"unknown noise kind {kind!r}; expected one of {sorted(builders)}")
    model = builders[kind]()
    return model if scale == 1.0 else scaled(model, scale)


def noise_score(model: NoiseModel, u):
    """``g'(u) / g(u)``."""
    return model.score(u)


def integrate_line(f: Callable[[float], float], rtol: float = QUAD_RTOL) -> float:
    """Integrate ``f`` over the real line.

    Uses QUADPACK's adaptive Gauss-Kronrod rule on the two half lines, each
    mapped to a finite interval.
    """
    total = 0.0
    for lo, hi in ((-np.inf, 0.0), (0.0, np.inf)):
        val, _ = _quad(f, lo, hi, rtol)
        total += val
    return total


def _quad(f, lo, hi, rtol):
    with np.errstate(all="ignore"):
        out = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=rtol, limit=500, full_output=1)
    val, err = out[0], out[1]
    # a fourth element is QUADPACK's warning message
    if len(out) > 3 and not err <= max(10 * rtol * abs(val), 1e-13):
        raise ModelError(f"quadrature did not converge: {out[3]}")
    return val, err


def fisher_information(model: NoiseModel, rtol: float = QUAD_RTOL) -> float:
    """Fisher information of ``g`` with respect to location.

    Closed form for the built-ins, quadrature of ``(g')^2 / g`` otherwise.
    """
    if model.fisher_exact is not None:
        return model.fisher_exact
    return fisher_quadrature(model, rtol)


def fisher_quadrature(model: NoiseModel, rtol: float = QUAD_RTOL) -> float:
    def integrand(u):
        g = float(model.pdf(u))
        if g <= 0.0:
            return 0.0
        return float(model.dpdf(u)) ** 2 / g

    return integrate_line(integrand, rtol)


def kl_shifted(model: NoiseModel, hi: float, hj: float, sigma: float, rtol: float = QUAD_RTOL) -> float:
    """KL divergence between the observation laws of states ``i`` and ``j``.

    The densities are ``g((y - h_i)/sigma)/sigma`` and ``g((y - h_j)/sigma)/sigma``.
    In the variable ``u = (y - h_i)/sigma`` this is
    ``int g(u) [log g(u) - log g(u + (h_i - h_j)/sigma)] du``.
    """
    if sigma <= 0:
        raise ModelError(f"sigma must be positive, got {sigma}")
    shift = (hi - hj) / sigma
    if shift == 0.0:
        return 0.0
    if model.kind == "gaussian":
        return 0.5 * shift * shift

    def integrand(u):
        g = float(model.pdf(u))
        if g == 0.0:
            return 0.0
        return g * float(model.log_density(u) - model.log_density(u + shift))

    val = integrate_line(integrand, rtol)
    if not np.isfinite(val):
        raise ModelError("KL divergence is infinite")
    return max(val, 0.0)
