"""Gaussian chance constraints and their deterministic relaxations.

A scalar chance constraint Pr(a'X <= b) <= phi on a Gaussian X is
equivalent to the linear condition a'mu - b >= eta with

    eta = sqrt(2 a' Sigma a) * erf_inv(1 - 2 phi),

and a pairwise collision constraint Pr(||y_i - y_j|| <= d_safe) <= phi
is conservatively replaced by the half space k'(mu_i - mu_j) >= d_safe
+ eta along the unit separation direction k. Both reductions, the error
function kernels they depend on, and a Monte Carlo collision oracle for
validating the conservatism live here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GaussianVector",
    "CollisionConstraint",
    "DegenerateDirectionError",
    "erf",
    "erf_inv",
    "relax_scalar",
    "relax_collision",
    "mc_collision_probability",
    "EPS_DEGENERATE",
]

# below this separation of the means the half-space direction is undefined
EPS_DEGENERATE = 1e-9

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


class DegenerateDirectionError(ValueError):
    """Raised when two means are too close to define a separation direction."""


@dataclass(frozen=True)
class GaussianVector:
    """Multivariate Gaussian with mean mu and covariance Sigma."""

    mu: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if Sigma.shape != (mu.size, mu.size):
            raise ValueError(
                f"Sigma must be {mu.size}x{mu.size}, got {Sigma.shape}"
            )
        if not np.allclose(Sigma, Sigma.T, atol=1e-10):
            raise ValueError("Sigma must be symmetric")
        if mu.size and np.min(np.linalg.eigvalsh(Sigma)) < -1e-10:
            raise ValueError("Sigma must be positive semidefinite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Sigma", Sigma)

    @property
    def dim(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class CollisionConstraint:
    """Linearized pairwise half-space constraint k'(mu_i - mu_j) >= d_safe + eta."""

    i: int
    j: int
    step: int
    k: np.ndarray
    eta: float
    d_safe: float

    def __post_init__(self) -> None:
        k = np.asarray(self.k, dtype=float).reshape(-1)
        nrm = np.linalg.norm(k)
        if abs(nrm - 1.0) > 1e-12:
            raise ValueError(f"direction must be a unit vector, |k| = {nrm}")
        object.__setattr__(self, "k", k)

    def margin(self, mu_i: np.ndarray, mu_j: np.ndarray) -> float:
        """Constraint slack k'(mu_i - mu_j) - d_safe - eta (>= 0 when satisfied)."""
        diff = np.asarray(mu_i, dtype=float) - np.asarray(mu_j, dtype=float)
        return float(self.k @ diff - self.d_safe - self.eta)


def erf(x: float) -> float:
    """Error function (2/sqrt(pi)) * integral_0^x exp(-t^2) dt.

    Evaluated through the cancellation-free scaled power series
    erf(x) = (2/sqrt(pi)) exp(-x^2) sum_n (2x^2)^n x / (2n+1)!!, summed
    exactly with math.fsum; absolute error is a few ulps, far inside the
    1e-12 contract. NaN input raises.
    """
    x = float(x)
    if math.isnan(x):
        raise ValueError("erf is undefined for NaN")
    ax = abs(x)
    if ax == 0.0:
        return 0.0
    if ax >= 6.0:
        # |erfc(6)| < 3e-17: saturated to within double precision
        return math.copysign(1.0, x)
    t = 2.0 * ax * ax
    term = ax
    terms = [term]
    k = 0
    while True:
        k += 1
        term *= t / (2 * k + 1)
        terms.append(term)
        if term < 1e-20 * terms[0] and k > t:
            break
    s = math.fsum(terms)
    return math.copysign(_TWO_OVER_SQRT_PI * math.exp(-ax * ax) * s, x)


def erf_inv(p: float) -> float:
    """Inverse error function on (-1, 1) by safeguarded Newton iteration.

    Maintains a bracket around the root and falls back to bisection
    whenever the Newton step leaves it; converges to machine precision,
    so the round trip |erf(erf_inv(p)) - p| is well below 1e-10.
    """
    p = float(p)
    if math.isnan(p):
        raise ValueError("erf_inv is undefined for NaN")
    if abs(p) >= 1.0:
        raise ValueError(f"erf_inv requires |p| < 1, got {p}")
    if p == 0.0:
        return 0.0
    a = abs(p)

    lo, hi = 0.0, 1.0
    while erf(hi) < a:
        lo = hi
        hi *= 2.0
        if hi > 8.0:
            # erf(8) == 1 in double precision, so a < 1 is bracketed
            hi = 8.0
            break

    x = 0.5 * (lo + hi)
    for _ in range(200):
        f = erf(x) - a
        if f > 0:
            hi = x
        elif f < 0:
            lo = x
        else:
            break
        deriv = _TWO_OVER_SQRT_PI * math.exp(-x * x)
        x_new = x - f / deriv if deriv > 0 else 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-17 * max(1.0, abs(x)):
            x = x_new
            break
        x = x_new
    return math.copysign(x, p)


def relax_scalar(
    a: np.ndarray, b: float, X: GaussianVector, phi: float
) -> tuple[float, bool]:
    """Deterministic equivalent of Pr(a'X <= b) <= phi.

    Returns (eta, satisfied) where eta = sqrt(2 a'Sigma a) *
    erf_inv(1 - 2 phi) and satisfied reports whether a'mu - b >= eta.
    The conversion is exact for Gaussian X, not conservative.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    if not 0.0 < phi < 1.0:
        raise ValueError(f"phi must be in (0, 1), got {phi}")
    if a.shape != (X.dim,):
        raise ValueError(f"a must have dimension {X.dim}, got {a.shape}")
    if not np.any(a):
        raise ValueError("a must be nonzero")
    var = float(a @ X.Sigma @ a)
    eta = math.sqrt(2.0 * max(var, 0.0)) * erf_inv(1.0 - 2.0 * phi)
    satisfied = bool(float(a @ X.mu) - float(b) >= eta)
    return eta, satisfied


def relax_collision(
    mu_i: np.ndarray,
    mu_j: np.ndarray,
    Sigma_i: np.ndarray,
    Sigma_j: np.ndarray,
    d_safe: float,
    phi: float,
    i: int = 0,
    j: int = 1,
    step: int = 0,
    fallback_direction: np.ndarray | None = None,
) -> CollisionConstraint:
    """Half-space relaxation of Pr(||y_i - y_j|| <= d_safe) <= phi.

    The direction k = (mu_i - mu_j)/||mu_i - mu_j|| is frozen at the
    given linearization means, making the emitted constraint linear in
    the means. If the means are closer than EPS_DEGENERATE the direction
    is undefined; a caller-supplied fallback_direction is used instead,
    or DegenerateDirectionError is raised when none is given.
    """
    mu_i = np.asarray(mu_i, dtype=float).reshape(-1)
    mu_j = np.asarray(mu_j, dtype=float).reshape(-1)
    Sigma_i = np.atleast_2d(np.asarray(Sigma_i, dtype=float))
    Sigma_j = np.atleast_2d(np.asarray(Sigma_j, dtype=float))
    if mu_i.shape != mu_j.shape:
        raise ValueError("means must have equal dimensions")
    d = mu_i.size
    if Sigma_i.shape != (d, d) or Sigma_j.shape != (d, d):
        raise ValueError(f"covariances must be {d}x{d}")
    if not 0.0 < phi <= 0.5:
        raise ValueError(f"phi must be in (0, 0.5], got {phi}")
    if not d_safe > 0:
        raise ValueError(f"d_safe must be positive, got {d_safe}")

    diff = mu_i - mu_j
    nrm = float(np.linalg.norm(diff))
    if nrm <= EPS_DEGENERATE:
        if fallback_direction is None:
            raise DegenerateDirectionError(
                f"means separated by {nrm:.3e} <= {EPS_DEGENERATE}; "
                "supply a fallback direction"
            )
        k = np.asarray(fallback_direction, dtype=float).reshape(-1)
        fnrm = float(np.linalg.norm(k))
        if k.shape != (d,) or fnrm <= 0:
            raise ValueError("fallback direction must be a nonzero vector")
        k = k / fnrm
    else:
        k = diff / nrm
    var = float(k @ (Sigma_i + Sigma_j) @ k)
    eta = math.sqrt(2.0 * max(var, 0.0)) * erf_inv(1.0 - 2.0 * phi)
    return CollisionConstraint(i=i, j=j, step=step, k=k, eta=eta, d_safe=float(d_safe))


def _sample_factor(Sigma: np.ndarray) -> np.ndarray:
    """Cholesky factor with tiny diagonal jitter for semidefinite matrices."""
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if np.min(np.linalg.eigvalsh(Sigma)) < -1e-10:
        raise ValueError("covariance must be positive semidefinite")
    return np.linalg.cholesky(Sigma + 1e-12 * np.eye(Sigma.shape[0]))


def mc_collision_probability(
    X_i: GaussianVector,
    X_j: GaussianVector,
    d_safe: float,
    n_samples: int,
    seed: int,
) -> float:
    """Monte Carlo estimate of Pr(||y_i - y_j|| <= d_safe).

    Brute-force oracle used to validate the half-space relaxation:
    draws n_samples independent pairs (deterministic for a given seed)
    and returns the collision fraction.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if X_i.dim != X_j.dim:
        raise ValueError("the two Gaussians must share a dimension")
    L_i = _sample_factor(X_i.Sigma)
    L_j = _sample_factor(X_j.Sigma)
    rng = np.random.default_rng(seed)
    hits = 0
    remaining = n_samples
    chunk = 1_000_000
    while remaining > 0:
        batch = min(chunk, remaining)
        y_i = rng.standard_normal((batch, X_i.dim)) @ L_i.T + X_i.mu
        y_j = rng.standard_normal((batch, X_j.dim)) @ L_j.T + X_j.mu
        dist = np.linalg.norm(y_i - y_j, axis=1)
        hits += int(np.count_nonzero(dist <= d_safe))
        remaining -= batch
    return hits / n_samples
