"""Parameterized drift/diffusion models and the matrix utilities the coupling simulator needs.

A model is a pair of callbacks (drift, diffusion) over (state, parameter)
together with declared regularity constants. Nothing here checks that the
declared constants are honest; `probe_constants` estimates the realized
constants on random pairs so a dishonest declaration shows up in reports
rather than silently corrupting envelopes downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import EllipticityError, ModelEvaluationError, ValidationError

Array = np.ndarray

# absolute tolerance for symmetry / eigenvalue checks on diffusion matrices
SYMMETRY_ATOL = 1e-12


@dataclass(frozen=True)
class HypothesisConstants:
    """Declared regularity constants of a model.

    L1 bounds the joint (state, parameter) Lipschitz constant of drift and
    diffusion (Frobenius norm on the matrix part), L2 does the same for the
    row divergence of the diffusion field, m is the ellipticity floor on the
    smallest diffusion eigenvalue, and C is the linear-growth constant in
    |drift| + |diffusion|_F <= C (1 + |x|).
    """

    L1: float
    L2: float
    m: float
    C: float

    def __post_init__(self) -> None:
        values = (self.L1, self.L2, self.m, self.C)
        if not all(math.isfinite(v) for v in values):
            raise ValidationError(f"hypothesis constants must be finite, got {values}")
        if self.L1 < 0 or self.L2 < 0:
            raise ValidationError("Lipschitz constants must be nonnegative")
        if self.m <= 0:
            raise ValidationError(f"ellipticity floor must be positive, got m={self.m}")
        if self.C <= 0:
            raise ValidationError(f"growth constant must be positive, got C={self.C}")


@dataclass(frozen=True)
class ParameterizedModel:
    """Drift/diffusion pair with its declared constants.

    ``drift(x, a)`` maps a state and a parameter vector to a velocity and
    ``diffusion(x, a)`` to a symmetric positive-definite matrix. When
    ``vectorized`` is true both calls also accept a stacked ``(n, dim)``
    state and return stacked outputs; the particle simulator exploits this.
    ``diffusion_divergence`` is the row divergence of the diffusion field;
    leave it None to fall back on central differences.
    """

    dim: int
    param_dim: int
    drift: Callable[[Array, Array], Array]
    diffusion: Callable[[Array, Array], Array]
    constants: HypothesisConstants
    diffusion_divergence: Optional[Callable[[Array, Array], Array]] = None
    vectorized: bool = False
    name: str = ""

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValidationError(f"dim must be >= 1, got {self.dim}")
        if self.param_dim < 1:
            raise ValidationError(f"param_dim must be >= 1, got {self.param_dim}")


@dataclass(frozen=True)
class LangevinModel:
    """Gradient-flow model for the overdamped sampler.

    ``grad_potential(x, a)`` is the gradient of a parameterized potential that
    is strongly convex in x with modulus ``k`` (uniformly in a) and Lipschitz
    in the parameter with constant ``L3``.
    """

    dim: int
    param_dim: int
    grad_potential: Callable[[Array, Array], Array]
    k: float
    L3: float
    vectorized: bool = False
    name: str = ""

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValidationError(f"dim must be >= 1, got {self.dim}")
        if self.param_dim < 1:
            raise ValidationError(f"param_dim must be >= 1, got {self.param_dim}")
        if not (math.isfinite(self.k) and self.k > 0):
            raise ValidationError(f"convexity modulus must be positive, got k={self.k}")
        if not (math.isfinite(self.L3) and self.L3 >= 0):
            raise ValidationError(f"parameter Lipschitz constant must be >= 0, got L3={self.L3}")


def spd_sqrt(matrix: Array) -> Array:
    """Symmetric square root of a symmetric positive-definite matrix.

    The input is rejected if max |A - A^T| exceeds 1e-12 or if any eigenvalue
    is <= 0; otherwise it is symmetrized, eigendecomposed, and rebuilt with
    square-rooted eigenvalues. The result is explicitly re-symmetrized so
    round-trip checks see an exactly symmetric matrix.
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError("matrix has non-finite entries")
    asym = float(np.max(np.abs(A - A.T))) if A.size else 0.0
    if asym > SYMMETRY_ATOL:
        raise ValidationError(f"matrix is not symmetric: max |A - A^T| = {asym:.3e}")
    sym = (A + A.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    lam_min = float(eigvals[0])
    if lam_min <= 0.0:
        raise EllipticityError(lam_min)
    root = (eigvecs * np.sqrt(eigvals)) @ eigvecs.T
    return (root + root.T) / 2.0


def sqrt_spd_batch(matrices: Array) -> Array:
    """Square roots of a stack of symmetric positive semidefinite matrices.

    Internal workhorse for the simulator: tolerates exactly-zero eigenvalues
    (degenerate diffusions used in stepping tests) but raises on anything
    below -1e-12. 1x1 blocks take a scalar fast path.
    """
    A = np.asarray(matrices, dtype=float)
    d = A.shape[-1]
    if A.shape[-2] != d:
        raise ValidationError(f"expected square blocks, got shape {A.shape}")
    if d == 1:
        vals = A[..., 0, 0]
        lam_min = float(np.min(vals)) if vals.size else 0.0
        if lam_min < -SYMMETRY_ATOL:
            raise EllipticityError(lam_min)
        return np.sqrt(np.clip(vals, 0.0, None))[..., None, None]
    sym = (A + np.swapaxes(A, -1, -2)) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    lam_min = float(np.min(eigvals)) if eigvals.size else 0.0
    if lam_min < -SYMMETRY_ATOL:
        raise EllipticityError(lam_min)
    scaled = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))[..., None, :]
    return scaled @ np.swapaxes(eigvecs, -1, -2)


def divergence_fd(diffusion: Callable[[Array, Array], Array], x: Array, a: Array) -> Array:
    """Row divergence of a diffusion field by central differences.

    out_i = sum_j d/dx_j A_ij(x, a), step h = max(1e-5, 1e-5 |x|).
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    h = max(1e-5, 1e-5 * float(np.linalg.norm(x)))
    out = np.zeros(d)
    for j in range(d):
        step = np.zeros(d)
        step[j] = h
        dA = (np.asarray(diffusion(x + step, a), dtype=float)
              - np.asarray(diffusion(x - step, a), dtype=float)) / (2.0 * h)
        out += dA[:, j]
    return out


def divergence_fd_batch(diffusion: Callable[[Array, Array], Array], x: Array, a: Array) -> Array:
    """Batched central-difference divergence; x is (n, d), diffusion returns (n, d, d)."""
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    h = np.maximum(1e-5, 1e-5 * np.linalg.norm(x, axis=1))
    out = np.zeros((n, d))
    for j in range(d):
        step = np.zeros((n, d))
        step[:, j] = h
        dA = (np.asarray(diffusion(x + step, a), dtype=float)
              - np.asarray(diffusion(x - step, a), dtype=float)) / (2.0 * h)[:, None, None]
        out += dA[:, :, j]
    return out


def effective_drift(model: ParameterizedModel, x: Array, a: Array) -> Array:
    """Particle drift for the flow: model drift plus the divergence of the diffusion field."""
    x = np.asarray(x, dtype=float)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.asarray(model.drift(x, a), dtype=float)
    if model.diffusion_divergence is not None:
        div = np.asarray(model.diffusion_divergence(x, a), dtype=float)
    else:
        div = divergence_fd(model.diffusion, x, a)
    out = b + div
    if out.shape != x.shape:
        raise ModelEvaluationError(
            f"effective drift has shape {out.shape}, expected {x.shape}")
    if not np.all(np.isfinite(out)):
        raise ModelEvaluationError(f"non-finite effective drift at x={x}, a={a}")
    return out


def von_neumann_bound(X: Array, Y: Array) -> float:
    """Upper bound on |trace(X Y)|: the inner product of the sorted singular values."""
    sx = np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False)
    sy = np.linalg.svd(np.asarray(Y, dtype=float), compute_uv=False)
    return float(np.dot(sx, sy))


def bhatia_sqrt_gap_bound(gap_fro: float, m: float) -> float:
    """Bound |sqrt(A) - sqrt(A')|_F <= |A - A'|_F / (2 sqrt(m)) for SPD A, A' >= m I."""
    if m <= 0:
        raise EllipticityError(m, f"ellipticity floor must be positive, got m={m}")
    return float(gap_fro) / (2.0 * math.sqrt(m))


# ---------------------------------------------------------------------------
# hypothesis probing


@dataclass(frozen=True)
class ProbeSpec:
    """Where and how hard to probe a model's declared constants.

    States are drawn uniformly from the cube [-box_radius, box_radius]^dim;
    parameters from [param_low, param_high]^param_dim (both default to the
    state box). `n_pairs` independent pairs feed each difference quotient.
    """

    n_pairs: int = 256
    box_radius: float = 5.0
    seed: int = 0
    param_low: Optional[float] = None
    param_high: Optional[float] = None

    def __post_init__(self) -> None:
        if self.n_pairs < 1:
            raise ValidationError(f"n_pairs must be >= 1, got {self.n_pairs}")
        if not (math.isfinite(self.box_radius) and self.box_radius > 0):
            raise ValidationError(f"box_radius must be positive, got {self.box_radius}")
        lo = -self.box_radius if self.param_low is None else self.param_low
        hi = self.box_radius if self.param_high is None else self.param_high
        if not (lo <= hi):
            raise ValidationError(f"empty parameter box [{lo}, {hi}]")

    def param_box(self) -> tuple[float, float]:
        lo = -self.box_radius if self.param_low is None else self.param_low
        hi = self.box_radius if self.param_high is None else self.param_high
        return float(lo), float(hi)


# relative slack applied when comparing realized quotients to declared constants
PROBE_RTOL = 1e-9


@dataclass(frozen=True)
class ProbeReport:
    """Realized difference quotients versus declared constants.

    Quotients use the combined increment |dx| + |da| in the denominator, so
    max_joint_quotient compares directly against L1, max_divergence_quotient
    against L2, min_eigenvalue against m, and max_growth_ratio against C.
    `witnesses` maps each check name to the sample that attained the extreme.
    """

    max_drift_quotient: float
    max_diffusion_quotient: float
    max_joint_quotient: float
    max_divergence_quotient: float
    min_eigenvalue: float
    max_growth_ratio: float
    declared: HypothesisConstants
    passed: bool
    failures: tuple[str, ...]
    witnesses: dict = field(default_factory=dict)


def _as_batch(x: Array) -> Array:
    return x if x.ndim == 2 else x[None, :]


def probe_constants(model: ParameterizedModel, spec: ProbeSpec) -> ProbeReport:
    """Estimate realized Lipschitz/ellipticity/growth constants on random pairs.

    This is a spot check, not a proof: it can only ever find violations. The
    verdict compares each realized extreme against the declared value with
    relative slack 1e-9.
    """
    rng = np.random.default_rng(spec.seed)
    n, d, pd = spec.n_pairs, model.dim, model.param_dim
    r = spec.box_radius
    plo, phi = spec.param_box()

    xs = rng.uniform(-r, r, size=(n, 2, d))
    ps = rng.uniform(plo, phi, size=(n, 2, pd))

    drift_q = np.zeros(n)
    diff_q = np.zeros(n)
    div_q = np.zeros(n)
    eig_min = np.full(2 * n, np.inf)
    growth = np.zeros(2 * n)

    for i in range(n):
        x1, x2 = xs[i, 0], xs[i, 1]
        a1, a2 = ps[i, 0], ps[i, 1]
        den = float(np.linalg.norm(x1 - x2) + np.linalg.norm(a1 - a2))
        b1 = np.asarray(model.drift(x1, a1), dtype=float)
        b2 = np.asarray(model.drift(x2, a2), dtype=float)
        A1 = np.asarray(model.diffusion(x1, a1), dtype=float)
        A2 = np.asarray(model.diffusion(x2, a2), dtype=float)
        if model.diffusion_divergence is not None:
            g1 = np.asarray(model.diffusion_divergence(x1, a1), dtype=float)
            g2 = np.asarray(model.diffusion_divergence(x2, a2), dtype=float)
        else:
            g1 = divergence_fd(model.diffusion, x1, a1)
            g2 = divergence_fd(model.diffusion, x2, a2)
        if den > 0:
            drift_q[i] = np.linalg.norm(b1 - b2) / den
            diff_q[i] = np.linalg.norm(A1 - A2) / den
            div_q[i] = np.linalg.norm(g1 - g2) / den
        for s, (x, A, b) in enumerate(((x1, A1, b1), (x2, A2, b2))):
            w1 = np.linalg.eigvalsh((A + A.T) / 2.0)
            eig_min[2 * i + s] = w1[0]
            growth[2 * i + s] = (np.linalg.norm(b) + np.linalg.norm(A)) / (1.0 + np.linalg.norm(x))

    joint_q = drift_q + diff_q
    c = model.constants

    def _witness_pair(idx: int):
        return (xs[idx, 0].copy(), ps[idx, 0].copy(), xs[idx, 1].copy(), ps[idx, 1].copy())

    def _witness_point(flat_idx: int):
        i, s = divmod(flat_idx, 2)
        return (xs[i, s].copy(), ps[i, s].copy())

    checks = {
        "lipschitz_joint": (float(np.max(joint_q)) <= c.L1 * (1 + PROBE_RTOL) + 1e-12,
                            _witness_pair(int(np.argmax(joint_q)))),
        "lipschitz_divergence": (float(np.max(div_q)) <= c.L2 * (1 + PROBE_RTOL) + 1e-12,
                                 _witness_pair(int(np.argmax(div_q)))),
        "ellipticity": (float(np.min(eig_min)) >= c.m * (1 - PROBE_RTOL) - 1e-12,
                        _witness_point(int(np.argmin(eig_min)))),
        "growth": (float(np.max(growth)) <= c.C * (1 + PROBE_RTOL) + 1e-12,
                   _witness_point(int(np.argmax(growth)))),
    }
    failures = tuple(name for name, (ok, _) in checks.items() if not ok)
    witnesses = {name: w for name, (ok, w) in checks.items() if not ok}

    return ProbeReport(
        max_drift_quotient=float(np.max(drift_q)),
        max_diffusion_quotient=float(np.max(diff_q)),
        max_joint_quotient=float(np.max(joint_q)),
        max_divergence_quotient=float(np.max(div_q)),
        min_eigenvalue=float(np.min(eig_min)),
        max_growth_ratio=float(np.max(growth)),
        declared=c,
        passed=not failures,
        failures=failures,
        witnesses=witnesses,
    )


@dataclass(frozen=True)
class LangevinProbeReport:
    """Realized convexity / parameter-sensitivity extremes for a gradient model."""

    min_convexity_quotient: float
    max_param_quotient: float
    declared_k: float
    declared_L3: float
    passed: bool
    failures: tuple[str, ...]


def probe_langevin(model: LangevinModel, spec: ProbeSpec) -> LangevinProbeReport:
    """Spot-check strong convexity (in x) and parameter Lipschitz bound of the gradient."""
    rng = np.random.default_rng(spec.seed)
    n, d, pd = spec.n_pairs, model.dim, model.param_dim
    r = spec.box_radius
    plo, phi = spec.param_box()

    conv = np.full(n, np.inf)
    par = np.zeros(n)
    for i in range(n):
        x1 = rng.uniform(-r, r, size=d)
        x2 = rng.uniform(-r, r, size=d)
        a1 = rng.uniform(plo, phi, size=pd)
        a2 = rng.uniform(plo, phi, size=pd)
        g11 = np.asarray(model.grad_potential(x1, a1), dtype=float)
        g21 = np.asarray(model.grad_potential(x2, a1), dtype=float)
        g12 = np.asarray(model.grad_potential(x1, a2), dtype=float)
        dx = x1 - x2
        nx2 = float(np.dot(dx, dx))
        if nx2 > 0:
            conv[i] = float(np.dot(g11 - g21, dx)) / nx2
        da = float(np.linalg.norm(a1 - a2))
        if da > 0:
            par[i] = float(np.linalg.norm(g11 - g12)) / da

    failures = []
    if float(np.min(conv)) < model.k * (1 - PROBE_RTOL) - 1e-12:
        failures.append("convexity")
    if float(np.max(par)) > model.L3 * (1 + PROBE_RTOL) + 1e-12:
        failures.append("param_lipschitz")
    return LangevinProbeReport(
        min_convexity_quotient=float(np.min(conv)),
        max_param_quotient=float(np.max(par)),
        declared_k=model.k,
        declared_L3=model.L3,
        passed=not failures,
        failures=tuple(failures),
    )
