"""Closed-form references for the gallery dynamics.

Every formula here is derivable with pen and paper, which is what makes the
module useful: simulation and transport estimates get compared against these
values in tests and reports, so a bug in the stochastic machinery cannot hide
behind another Monte Carlo run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln

from .errors import QuadratureError, UnsupportedCaseError, ValidationError
from .gallery import normalize_model_id

Array = np.ndarray

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianLaw:
    """A Gaussian measure on R^d; covariance may be singular (point masses allowed)."""

    mean: Array
    covariance: Array

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if mean.ndim != 1:
            raise ValidationError(f"mean must be a vector, got shape {mean.shape}")
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValidationError(f"covariance shape {cov.shape} does not match dim {d}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValidationError("law has non-finite entries")
        if np.max(np.abs(cov - cov.T)) > 1e-12:
            raise ValidationError("covariance must be symmetric")
        w = np.linalg.eigvalsh((cov + cov.T) / 2.0)
        if w[0] < -1e-12:
            raise ValidationError(f"covariance has negative eigenvalue {w[0]:.3e}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", (cov + cov.T) / 2.0)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def isotropic(cls, mean, variance: float) -> "GaussianLaw":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        if variance < 0:
            raise ValidationError(f"variance must be >= 0, got {variance}")
        return cls(mean=mean, covariance=variance * np.eye(mean.shape[0]))

    @classmethod
    def point(cls, x) -> "GaussianLaw":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(mean=x, covariance=np.zeros((x.shape[0], x.shape[0])))


def _psd_sqrt(cov: Array) -> Array:
    # covariance square root tolerating exact zeros; tiny negatives clamped
    w, q = np.linalg.eigh(cov)
    return (q * np.sqrt(np.clip(w, 0.0, None))) @ q.T


def gaussian_norm_moment(p: float, dim: int = 1) -> float:
    """E|Z|^p for Z standard normal on R^dim: 2^{p/2} Gamma((dim+p)/2) / Gamma(dim/2)."""
    if p < 0:
        raise ValidationError(f"order must be >= 0, got {p}")
    if dim < 1:
        raise ValidationError(f"dim must be >= 1, got {dim}")
    return float(2.0 ** (p / 2.0) * math.exp(gammaln((dim + p) / 2.0) - gammaln(dim / 2.0)))


def abs_normal_moment(shift: float, scale: float, p: float) -> float:
    """E|shift + scale Z|^p for scalar Z ~ N(0, 1), by adaptive quadrature.

    The integrand has a kink where the argument vanishes, so the line is
    split there. Demands a 1e-10 relative error estimate and raises if the
    integrator cannot certify it.
    """
    if p < 0:
        raise ValidationError(f"order must be >= 0, got {p}")
    scale = abs(float(scale))
    shift = float(shift)
    if scale == 0.0:
        return abs(shift) ** p

    def f(z: float) -> float:
        return abs(shift + scale * z) ** p * math.exp(-0.5 * z * z) / _SQRT_2PI

    kink = -shift / scale
    total = 0.0
    err = 0.0
    for lo, hi in ((-np.inf, kink), (kink, np.inf)):
        val, e = quad(f, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)
        total += val
        err += e
    if err > 1e-10 * max(1.0, abs(total)):
        raise QuadratureError(
            f"estimated error {err:.3e} too large for E|{shift} + {scale} Z|^{p}")
    return total


def gaussian_wp_1d(g1: GaussianLaw, g2: GaussianLaw, p: float) -> float:
    """W_p^p between scalar Gaussians: E|dm + (s1 - s2) Z|^p under the monotone coupling."""
    if g1.dim != 1 or g2.dim != 1:
        raise UnsupportedCaseError("general orders are only available in one dimension")
    if p < 1:
        raise ValidationError(f"order must be >= 1, got {p}")
    dm = float(g1.mean[0] - g2.mean[0])
    ds = math.sqrt(float(g1.covariance[0, 0])) - math.sqrt(float(g2.covariance[0, 0]))
    return abs_normal_moment(dm, ds, p)


def gaussian_w2(g1: GaussianLaw, g2: GaussianLaw) -> float:
    """Squared 2-Wasserstein distance between commuting Gaussians.

    |m1 - m2|^2 + |sqrt(S1) - sqrt(S2)|_F^2, valid when S1 S2 = S2 S1
    (always in one dimension, or for isotropic pairs); raises otherwise
    rather than return the wrong general formula.
    """
    if g1.dim != g2.dim:
        raise ValidationError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    s1, s2 = g1.covariance, g2.covariance
    comm = s1 @ s2 - s2 @ s1
    scale = 1.0 + float(np.linalg.norm(s1) * np.linalg.norm(s2))
    if float(np.linalg.norm(comm)) > 1e-10 * scale:
        raise UnsupportedCaseError("covariances do not commute; no closed form implemented")
    r1 = _psd_sqrt(s1)
    r2 = _psd_sqrt(s2)
    dm = g1.mean - g2.mean
    return float(np.dot(dm, dm) + np.sum((r1 - r2) ** 2))


def ou_marginal(k: float, target: float, noise_amplitude: float, x0_law: GaussianLaw,
                t: float) -> GaussianLaw:
    """Marginal law at time t of dX = -k (X - target 1) dt + s dB from a Gaussian start.

    Mean relaxes exponentially toward target 1; covariance interpolates
    between the initial one (scaled by e^{-2kt}) and the stationary level
    s^2 / (2k) per coordinate.
    """
    if k <= 0:
        raise ValidationError(f"k must be positive, got {k}")
    if t < 0:
        raise ValidationError(f"time must be >= 0, got {t}")
    if noise_amplitude < 0:
        raise ValidationError(f"noise amplitude must be >= 0, got {noise_amplitude}")
    d = x0_law.dim
    decay = math.exp(-k * t)
    ones = np.ones(d)
    mean = target * ones + (x0_law.mean - target * ones) * decay
    cov = (x0_law.covariance * decay ** 2
           + noise_amplitude ** 2 * (1.0 - decay ** 2) / (2.0 * k) * np.eye(d))
    return GaussianLaw(mean=mean, covariance=cov)


def gap_mean_variance(k: float, delta_drift: float, delta_noise: float, delta0,
                      t: float, dim: int) -> tuple[Array, float]:
    """Law of the coupled gap for linear mean-reverting legs sharing one Brownian path.

    The gap D = X - X' solves dD = -k D dt + k delta_drift 1 dt + delta_noise dB,
    so D_t is Gaussian with mean e^{-kt} D_0 + delta_drift (1 - e^{-kt}) 1 and
    isotropic variance delta_noise^2 (1 - e^{-2kt}) / (2k) per coordinate.
    """
    if k <= 0:
        raise ValidationError(f"k must be positive, got {k}")
    if t < 0:
        raise ValidationError(f"time must be >= 0, got {t}")
    d0 = np.zeros(dim) if delta0 is None else np.broadcast_to(
        np.atleast_1d(np.asarray(delta0, dtype=float)), (dim,)).astype(float)
    decay = math.exp(-k * t)
    mean = decay * d0 + delta_drift * (1.0 - decay) * np.ones(dim)
    var = delta_noise ** 2 * (1.0 - decay ** 2) / (2.0 * k)
    return mean, float(var)


def _isotropic_gap_moment(mean: Array, var: float, p: float) -> float:
    """E|N(mean, var I)|^p in the cases with closed or 1-d-reducible forms."""
    dim = mean.shape[0]
    norm_m = float(np.linalg.norm(mean))
    if var == 0.0:
        return norm_m ** p
    if p == 2.0:
        return norm_m ** 2 + dim * var
    if dim == 1:
        return abs_normal_moment(norm_m, math.sqrt(var), p)
    if norm_m == 0.0:
        return var ** (p / 2.0) * gaussian_norm_moment(p, dim)
    raise UnsupportedCaseError(
        f"no closed form for E|N(m, v I)|^{p} with m != 0 in dimension {dim}")


def coupled_gap_oracle(model_id: str, *, a: float, a_prime: float, p: float, t: float,
                       k: float = 1.0, beta: Optional[float] = None,
                       beta_prime: Optional[float] = None, delta0=None,
                       dim: int = 1) -> float:
    """Exact E|X_t - X'_t|^p for gallery models under the shared-noise coupling.

    Covered cases: pure diffusion (heat), mean reversion with equal noise
    (ou), and the quadratic gradient flow with possibly unequal temperatures
    (langevin_quadratic). Everything else raises rather than guess.
    """
    if t < 0:
        raise ValidationError(f"time must be >= 0, got {t}")
    if p < 1:
        raise ValidationError(f"order must be >= 1, got {p}")
    mid = normalize_model_id(model_id)

    if mid == "heat":
        if a <= 0 or a_prime <= 0:
            raise ValidationError("diffusion intensities must be positive")
        ds = math.sqrt(2.0 * a) - math.sqrt(2.0 * a_prime)
        d0 = np.zeros(dim) if delta0 is None else np.broadcast_to(
            np.atleast_1d(np.asarray(delta0, dtype=float)), (dim,)).astype(float)
        return _isotropic_gap_moment(d0, ds ** 2 * t, p)

    if mid == "ou":
        # equal noise by construction: the parameter moves only the target
        mean, var = gap_mean_variance(k, a - a_prime, 0.0, delta0, t, dim)
        return _isotropic_gap_moment(mean, var, p)

    if mid == "langevin_quadratic":
        if beta is None or beta_prime is None:
            raise ValidationError("langevin oracle needs both inverse temperatures")
        if beta <= 0 or beta_prime <= 0:
            raise ValidationError("inverse temperatures must be positive")
        ds = math.sqrt(2.0 / beta) - math.sqrt(2.0 / beta_prime)
        mean, var = gap_mean_variance(k, a - a_prime, ds, delta0, t, dim)
        return _isotropic_gap_moment(mean, var, p)

    raise UnsupportedCaseError(f"no closed-form gap law for model {model_id!r}")
