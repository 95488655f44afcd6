"""Built-in model gallery with analytically known constants.

Four families, each exposing honest declared constants so envelope checks
downstream are meaningful:

  heat                pure diffusion, scalar intensity parameter
  ou                  mean-reverting drift toward a parameterized target
  langevin_quadratic  gradient flow of (k/2)|x - a 1|^2
  langevin_logcosh    gradient flow of (k/2)|x|^2 + log cosh(x_1) + a x_1

Short ids G1..G4 alias the same constructors in the order above.
"""

from __future__ import annotations

import math
from typing import Union

import numpy as np

from .errors import ValidationError
from .model import HypothesisConstants, LangevinModel, ParameterizedModel

Model = Union[ParameterizedModel, LangevinModel]


def heat_model(dim: int = 1, param_range: tuple[float, float] = (0.5, 2.0)) -> ParameterizedModel:
    """Zero drift, diffusion a * I with scalar intensity a in param_range.

    Joint Lipschitz constant sqrt(dim) (Frobenius norm of I), divergence
    identically zero, ellipticity floor the lower end of param_range.
    """
    a_min, a_max = float(param_range[0]), float(param_range[1])
    if not (0 < a_min <= a_max):
        raise ValidationError(f"param_range must satisfy 0 < min <= max, got {param_range}")
    sqd = math.sqrt(dim)
    eye = np.eye(dim)

    def drift(x, a):
        return np.zeros_like(np.asarray(x, dtype=float))

    def diffusion(x, a):
        x = np.asarray(x, dtype=float)
        scale = float(np.asarray(a).reshape(-1)[0])
        if x.ndim == 1:
            return scale * eye
        return np.broadcast_to(scale * eye, (x.shape[0], dim, dim))

    def divergence(x, a):
        return np.zeros_like(np.asarray(x, dtype=float))

    constants = HypothesisConstants(L1=sqd, L2=0.0, m=a_min, C=a_max * sqd)
    return ParameterizedModel(dim=dim, param_dim=1, drift=drift, diffusion=diffusion,
                              constants=constants, diffusion_divergence=divergence,
                              vectorized=True, name="heat")


def ou_model(dim: int = 1, k: float = 1.0, sigma: float = 1.0,
             param_bound: float = 2.0) -> ParameterizedModel:
    """Drift -k (x - a 1) pulling toward a scalar target a, constant diffusion (sigma^2 / 2) I.

    The effective noise amplitude in the particle dynamics is exactly sigma.
    `param_bound` only feeds the growth constant; |a| is expected to stay
    below it.
    """
    if k <= 0:
        raise ValidationError(f"k must be positive, got {k}")
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    sqd = math.sqrt(dim)
    eye = 0.5 * sigma ** 2 * np.eye(dim)

    def drift(x, a):
        x = np.asarray(x, dtype=float)
        target = float(np.asarray(a).reshape(-1)[0])
        return -k * (x - target)

    def diffusion(x, a):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return eye
        return np.broadcast_to(eye, (x.shape[0], dim, dim))

    def divergence(x, a):
        return np.zeros_like(np.asarray(x, dtype=float))

    constants = HypothesisConstants(
        L1=k * sqd, L2=0.0, m=0.5 * sigma ** 2,
        C=max(k, k * sqd * param_bound + 0.5 * sigma ** 2 * sqd))
    return ParameterizedModel(dim=dim, param_dim=1, drift=drift, diffusion=diffusion,
                              constants=constants, diffusion_divergence=divergence,
                              vectorized=True, name="ou")


def langevin_quadratic_model(dim: int = 1, k: float = 1.0) -> LangevinModel:
    """Gradient k (x - a 1) of the quadratic potential centered at a 1."""
    if k <= 0:
        raise ValidationError(f"k must be positive, got {k}")

    def grad(x, a):
        x = np.asarray(x, dtype=float)
        target = float(np.asarray(a).reshape(-1)[0])
        return k * (x - target)

    return LangevinModel(dim=dim, param_dim=1, grad_potential=grad,
                         k=k, L3=k * math.sqrt(dim), vectorized=True,
                         name="langevin_quadratic")


def langevin_logcosh_model(dim: int = 1, k: float = 1.0) -> LangevinModel:
    """Gradient of (k/2)|x|^2 + log cosh(x_1) + a x_1: k x + (tanh(x_1) + a) e_1.

    The log cosh term is convex, so the convexity modulus stays k; the
    parameter enters linearly through the first coordinate, so L3 = 1.
    """
    if k <= 0:
        raise ValidationError(f"k must be positive, got {k}")

    def grad(x, a):
        x = np.asarray(x, dtype=float)
        shift = float(np.asarray(a).reshape(-1)[0])
        out = k * x
        out[..., 0] += np.tanh(x[..., 0]) + shift
        return out

    return LangevinModel(dim=dim, param_dim=1, grad_potential=grad,
                         k=k, L3=1.0, vectorized=True, name="langevin_logcosh")


_ALIASES = {
    "g1": "heat",
    "g2": "ou",
    "g3": "langevin_quadratic",
    "g4": "langevin_logcosh",
}

_BUILDERS = {
    "heat": heat_model,
    "ou": ou_model,
    "langevin_quadratic": langevin_quadratic_model,
    "langevin_logcosh": langevin_logcosh_model,
}


def normalize_model_id(model_id: str) -> str:
    """Map an id or alias (case-insensitive) to its canonical gallery name."""
    key = str(model_id).strip().lower()
    key = _ALIASES.get(key, key)
    if key not in _BUILDERS:
        known = sorted(_BUILDERS) + sorted(_ALIASES)
        raise ValidationError(f"unknown model id {model_id!r}; known ids: {', '.join(known)}")
    return key


def make_model(model_id: str, **params) -> Model:
    """Instantiate a gallery model by canonical name or G1..G4 alias."""
    return _BUILDERS[normalize_model_id(model_id)](**params)
