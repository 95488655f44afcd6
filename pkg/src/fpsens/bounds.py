"""Closed-form growth/contraction envelopes for coupled parameter-mismatch moments.

Two regimes. Under global Lipschitz drift/diffusion with ellipticity floor m
the gap moment obeys a linear differential inequality whose integrated form
is an exponential-growth envelope in (C1, C2). Under strong convexity the
same argument contracts: the envelope decays at rate lambda = p k / 2 toward
a stationary level set by the parameter and temperature mismatch.

Everything here is deterministic arithmetic on declared constants; nothing
looks at data. All envelopes bound E|X_t - X'_t|^p, hence also W_p^p.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import ConvexityError, EllipticityError, OrderRangeError, ValidationError

# constants like (4(p-1))^(p-1) explode past double range; cap the order
P_MAX = 32.0


class VacuousNoiseBoundWarning(UserWarning):
    """At p = 2 the noise-mismatch coefficient degenerates to 0, so the printed
    envelope ignores temperature mismatch entirely; use the corrected quadratic
    envelope when delta_sigma_beta != 0."""


def _check_order(p: float) -> float:
    p = float(p)
    if not math.isfinite(p) or p < 2:
        raise OrderRangeError(f"order must be >= 2, got {p}")
    if p > P_MAX:
        raise OrderRangeError(f"order capped at {P_MAX} to keep constants in double range, got {p}")
    return p


def _check_time(t: float) -> float:
    t = float(t)
    if not math.isfinite(t) or t < 0:
        raise ValidationError(f"time must be >= 0, got {t}")
    return t


@dataclass(frozen=True)
class Theorem1Constants:
    """Growth-regime envelope coefficients C1, C2 for a given order p.

    C1 = (L1 + L2)(2p - 1) + L1^2 (p - 1)^2 / (2 m)
    C2 = L1 + L2 + L1^2 (p - 1) / (2 m)

    C1 multiplies the moment itself, C2 the parameter mismatch |da|^p.
    """

    p: float
    L1: float
    L2: float
    m: float
    C1: float
    C2: float


def theorem1_constants(L1: float, L2: float, m: float, p: float) -> Theorem1Constants:
    """Evaluate the growth-regime coefficients from declared model constants."""
    p = _check_order(p)
    if not (math.isfinite(m) and m > 0):
        raise EllipticityError(m, f"ellipticity floor must be positive, got m={m}")
    if L1 < 0 or L2 < 0:
        raise ValidationError(f"Lipschitz constants must be >= 0, got L1={L1}, L2={L2}")
    C1 = (L1 + L2) * (2.0 * p - 1.0) + L1 ** 2 * (p - 1.0) ** 2 / (2.0 * m)
    C2 = L1 + L2 + L1 ** 2 * (p - 1.0) / (2.0 * m)
    return Theorem1Constants(p=p, L1=float(L1), L2=float(L2), m=float(m),
                             C1=float(C1), C2=float(C2))


def theorem1_envelope(w0p: float, constants: Theorem1Constants, delta_a: float,
                      t: float) -> float:
    """Growth envelope: w0p e^{C1 t} + (C2 / C1)(e^{C1 t} - 1) |da|^p.

    Continuous limit at C1 = 0 (possible when L1 = L2 = 0): the second term
    degenerates to C2 t |da|^p.
    """
    t = _check_time(t)
    if w0p < 0:
        raise ValidationError(f"initial moment must be >= 0, got {w0p}")
    mism = abs(delta_a) ** constants.p
    if constants.C1 == 0.0:
        return w0p + constants.C2 * t * mism
    growth = math.exp(constants.C1 * t)
    return w0p * growth + (constants.C2 / constants.C1) * (growth - 1.0) * mism


def example_p2_envelope(w0_sq: float, L1: float, m: float, delta_a: float,
                        t: float) -> float:
    """Sharper quadratic special case for pure diffusion mismatch: w0^2 + (L1^2 / 2m) |da|^2 t."""
    t = _check_time(t)
    if not (math.isfinite(m) and m > 0):
        raise EllipticityError(m, f"ellipticity floor must be positive, got m={m}")
    if w0_sq < 0:
        raise ValidationError(f"initial moment must be >= 0, got {w0_sq}")
    return w0_sq + L1 ** 2 * delta_a ** 2 * t / (2.0 * m)


@dataclass(frozen=True)
class LangevinConstants:
    """Contraction-regime coefficients for convexity modulus k and order p.

    lam = p k / 2
    K1  = (4 (p - 1))^{p-1} L3^p / (p k)^{p-1}        parameter mismatch
    K2  = (p - 1) d (2 d (p - 1)(p - 2) / k)^{p/2}     temperature mismatch

    K2 vanishes identically at p = 2, which makes the printed envelope blind
    to noise mismatch there; pair it with the corrected quadratic envelope.
    """

    p: float
    k: float
    L3: float
    dim: int
    lam: float
    K1: float
    K2: float


def langevin_constants(k: float, L3: float, dim: int, p: float) -> LangevinConstants:
    """Evaluate the contraction-regime coefficients; warns when K2 is vacuous."""
    p = _check_order(p)
    if not (math.isfinite(k) and k > 0):
        raise ConvexityError(f"convexity modulus must be positive, got k={k}")
    if L3 < 0:
        raise ValidationError(f"parameter Lipschitz constant must be >= 0, got L3={L3}")
    if dim < 1:
        raise ValidationError(f"dimension must be >= 1, got {dim}")
    lam = p * k / 2.0
    K1 = (4.0 * (p - 1.0)) ** (p - 1.0) * L3 ** p / (p * k) ** (p - 1.0)
    K2 = (p - 1.0) * dim * (2.0 * dim * (p - 1.0) * (p - 2.0) / k) ** (p / 2.0)
    if p == 2.0:
        warnings.warn(
            "K2 = 0 at p = 2: this envelope ignores noise mismatch; "
            "use the corrected quadratic envelope when delta_sigma_beta != 0",
            VacuousNoiseBoundWarning, stacklevel=2)
    return LangevinConstants(p=p, k=float(k), L3=float(L3), dim=int(dim),
                             lam=float(lam), K1=float(K1), K2=float(K2))


def langevin_envelope(w0p: float, constants: LangevinConstants, delta_a: float,
                      delta_sigma_beta: float, t: float) -> float:
    """Contraction envelope:

    w0p e^{-lam t} + (K1 |da|^p + K2 |ds|^p)(1 - e^{-lam t}) / lam

    where ds is the mismatch of noise amplitudes sqrt(2/beta).
    """
    t = _check_time(t)
    if w0p < 0:
        raise ValidationError(f"initial moment must be >= 0, got {w0p}")
    lam = constants.lam
    source = (constants.K1 * abs(delta_a) ** constants.p
              + constants.K2 * abs(delta_sigma_beta) ** constants.p)
    decay = math.exp(-lam * t)
    return w0p * decay + source * (1.0 - decay) / lam


def langevin_p2_corrected_envelope(w0_sq: float, k: float, dim: int,
                                   delta_sigma_beta: float, t: float,
                                   delta_a: float = 0.0, L3: float = 0.0) -> float:
    """Non-vacuous quadratic contraction envelope:

    w0^2 e^{-k t} + (d ds^2 + (2 L3^2 / k) |da|^2)(1 - e^{-k t}) / k

    With delta_a = 0 this is the tight noise-mismatch bound whose stationary
    level is d ds^2 / k; the optional parameter term makes it usable for
    mixed mismatch without changing the pure-noise case.
    """
    t = _check_time(t)
    if not (math.isfinite(k) and k > 0):
        raise ConvexityError(f"convexity modulus must be positive, got k={k}")
    if dim < 1:
        raise ValidationError(f"dimension must be >= 1, got {dim}")
    if w0_sq < 0:
        raise ValidationError(f"initial moment must be >= 0, got {w0_sq}")
    decay = math.exp(-k * t)
    source = dim * delta_sigma_beta ** 2 + (2.0 * L3 ** 2 / k) * delta_a ** 2
    return w0_sq * decay + source * (1.0 - decay) / k


@dataclass(frozen=True)
class BoundEnvelope:
    """A concrete envelope t -> bound on W_p^p, with its provenance tagged.

    `stationary_value` is the t -> infinity limit for contracting envelopes,
    None for growth envelopes. `vacuous` marks an envelope whose mismatch
    coefficient degenerated to zero while the actual mismatch is nonzero.
    """

    tag: str
    p: float
    w0p: float
    delta_a: float
    delta_sigma_beta: float
    evaluate: Callable[[float], float]
    stationary_value: Optional[float] = None
    vacuous: bool = False

    def __call__(self, t: float) -> float:
        return self.evaluate(t)


def theorem1_bound(w0p: float, constants: Theorem1Constants,
                   delta_a: float) -> BoundEnvelope:
    return BoundEnvelope(
        tag="theorem1", p=constants.p, w0p=float(w0p), delta_a=float(delta_a),
        delta_sigma_beta=0.0,
        evaluate=lambda t: theorem1_envelope(w0p, constants, delta_a, t))


def example_p2_bound(w0_sq: float, L1: float, m: float, delta_a: float) -> BoundEnvelope:
    return BoundEnvelope(
        tag="example_p2", p=2.0, w0p=float(w0_sq), delta_a=float(delta_a),
        delta_sigma_beta=0.0,
        evaluate=lambda t: example_p2_envelope(w0_sq, L1, m, delta_a, t))


def langevin_bound(w0p: float, constants: LangevinConstants, delta_a: float,
                   delta_sigma_beta: float) -> BoundEnvelope:
    source = (constants.K1 * abs(delta_a) ** constants.p
              + constants.K2 * abs(delta_sigma_beta) ** constants.p)
    vacuous = (constants.K2 == 0.0 and delta_sigma_beta != 0.0)
    return BoundEnvelope(
        tag="langevin", p=constants.p, w0p=float(w0p), delta_a=float(delta_a),
        delta_sigma_beta=float(delta_sigma_beta),
        evaluate=lambda t: langevin_envelope(w0p, constants, delta_a, delta_sigma_beta, t),
        stationary_value=source / constants.lam,
        vacuous=vacuous)


def langevin_p2_corrected_bound(w0_sq: float, k: float, dim: int,
                                delta_sigma_beta: float, delta_a: float = 0.0,
                                L3: float = 0.0) -> BoundEnvelope:
    source = dim * delta_sigma_beta ** 2 + (2.0 * L3 ** 2 / k) * delta_a ** 2
    return BoundEnvelope(
        tag="langevin_p2_corrected", p=2.0, w0p=float(w0_sq), delta_a=float(delta_a),
        delta_sigma_beta=float(delta_sigma_beta),
        evaluate=lambda t: langevin_p2_corrected_envelope(
            w0_sq, k, dim, delta_sigma_beta, t, delta_a=delta_a, L3=L3),
        stationary_value=source / k)
