"""Matrix utilities, model validation, and constant probing."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpsens import (EllipticityError, HypothesisConstants, ModelEvaluationError,
                    ParameterizedModel, ProbeSpec, ValidationError, effective_drift,
                    heat_model, langevin_logcosh_model, langevin_quadratic_model,
                    make_model, normalize_model_id, ou_model, probe_constants,
                    probe_langevin, spd_sqrt, von_neumann_bound)
from fpsens.model import bhatia_sqrt_gap_bound, divergence_fd, sqrt_spd_batch


def random_spd(rng, d, lam_min=0.1, lam_max=3.0):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    lam = rng.uniform(lam_min, lam_max, size=d)
    return (q * lam) @ q.T


# ---------------------------------------------------------------------- sqrt

def test_spd_sqrt_identity():
    assert np.allclose(spd_sqrt(np.eye(3)), np.eye(3))


def test_spd_sqrt_diagonal():
    got = spd_sqrt(np.diag([4.0, 9.0]))
    assert np.allclose(got, np.diag([2.0, 3.0]))


@pytest.mark.parametrize("d", [1, 2, 3, 6])
def test_spd_sqrt_round_trip(d):
    rng = np.random.default_rng(d)
    for _ in range(20):
        A = random_spd(rng, d)
        R = spd_sqrt(A)
        assert np.allclose(R @ R, A, atol=1e-10)
        assert np.array_equal(R, R.T)  # exactly symmetric by construction


def test_spd_sqrt_rejects_asymmetric():
    A = np.array([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValidationError):
        spd_sqrt(A)


def test_spd_sqrt_rejects_indefinite():
    A = np.diag([1.0, -0.25])
    with pytest.raises(EllipticityError) as err:
        spd_sqrt(A)
    assert err.value.eigenvalue == pytest.approx(-0.25)


def test_spd_sqrt_rejects_singular():
    with pytest.raises(EllipticityError):
        spd_sqrt(np.diag([1.0, 0.0]))


def test_batch_sqrt_matches_single():
    rng = np.random.default_rng(3)
    stack = np.stack([random_spd(rng, 3) for _ in range(5)])
    roots = sqrt_spd_batch(stack)
    for A, R in zip(stack, roots):
        assert np.allclose(R, spd_sqrt(A), atol=1e-12)


def test_batch_sqrt_tolerates_exact_zero():
    # degenerate diffusion is legal inside the stepper
    out = sqrt_spd_batch(np.zeros((4, 1, 1)))
    assert np.array_equal(out, np.zeros((4, 1, 1)))


# ----------------------------------------------------------- inequality oracles

def test_bhatia_bound_random_pairs():
    rng = np.random.default_rng(11)
    m = 0.3
    for _ in range(200):
        d = rng.integers(1, 6)
        A = random_spd(rng, d, lam_min=m)
        B = random_spd(rng, d, lam_min=m)
        lhs = np.linalg.norm(spd_sqrt(A) - spd_sqrt(B))
        rhs = bhatia_sqrt_gap_bound(np.linalg.norm(A - B), m)
        assert lhs <= rhs + 1e-12


def test_von_neumann_random_pairs():
    rng = np.random.default_rng(12)
    for _ in range(200):
        d = rng.integers(1, 6)
        X = rng.normal(size=(d, d))
        Y = rng.normal(size=(d, d))
        assert abs(np.trace(X @ Y)) <= von_neumann_bound(X, Y) + 1e-12


@given(st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=50, deadline=None)
def test_von_neumann_property(d, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(d, d))
    Y = rng.normal(size=(d, d))
    assert abs(np.trace(X @ Y)) <= von_neumann_bound(X, Y) * (1 + 1e-12) + 1e-12


# ------------------------------------------------------------------ constants

def test_constants_validation():
    with pytest.raises(ValidationError):
        HypothesisConstants(L1=-1.0, L2=0.0, m=1.0, C=1.0)
    with pytest.raises(ValidationError):
        HypothesisConstants(L1=1.0, L2=0.0, m=0.0, C=1.0)
    with pytest.raises(ValidationError):
        HypothesisConstants(L1=1.0, L2=0.0, m=1.0, C=math.inf)


def test_model_dim_validation():
    c = HypothesisConstants(L1=1.0, L2=0.0, m=1.0, C=1.0)
    with pytest.raises(ValidationError):
        ParameterizedModel(dim=0, param_dim=1, drift=lambda x, a: x,
                           diffusion=lambda x, a: np.eye(1), constants=c)


# ------------------------------------------------------------ effective drift

def test_effective_drift_divergence_example():
    # A(x) = diag(1 + x1^2, 1), zero drift: divergence is (2 x1, 0)
    c = HypothesisConstants(L1=10.0, L2=10.0, m=1.0, C=50.0)
    model = ParameterizedModel(
        dim=2, param_dim=1,
        drift=lambda x, a: np.zeros(2),
        diffusion=lambda x, a: np.diag([1.0 + x[0] ** 2, 1.0]),
        constants=c)
    out = effective_drift(model, np.array([1.0, 0.0]), np.array([0.0]))
    assert out == pytest.approx([2.0, 0.0], abs=1e-8)


def test_effective_drift_prefers_analytic_divergence():
    c = HypothesisConstants(L1=1.0, L2=1.0, m=1.0, C=10.0)
    model = ParameterizedModel(
        dim=1, param_dim=1,
        drift=lambda x, a: -x,
        diffusion=lambda x, a: np.eye(1),
        diffusion_divergence=lambda x, a: np.full(1, 7.0),  # disagrees with FD on purpose
        constants=c)
    out = effective_drift(model, np.array([2.0]), np.array([0.0]))
    assert out == pytest.approx([5.0])


def test_effective_drift_rejects_nonfinite():
    c = HypothesisConstants(L1=1.0, L2=0.0, m=1.0, C=10.0)
    model = ParameterizedModel(
        dim=1, param_dim=1,
        drift=lambda x, a: np.full(1, np.nan),
        diffusion=lambda x, a: np.eye(1),
        diffusion_divergence=lambda x, a: np.zeros(1),
        constants=c)
    with pytest.raises(ModelEvaluationError):
        effective_drift(model, np.array([0.0]), np.array([0.0]))


def test_divergence_fd_linear_field():
    # A(x) = [[x0 + 2 x1, 0], [0, 3 x0]]: divergence = (1, 0) by rows
    def diff(x, a):
        return np.array([[x[0] + 2 * x[1], 0.0], [0.0, 3.0 * x[0]]])

    got = divergence_fd(diff, np.array([0.7, -0.2]), np.array([0.0]))
    assert got == pytest.approx([1.0, 0.0], abs=1e-9)


# -------------------------------------------------------------------- gallery

@pytest.mark.parametrize("alias,name", [("G1", "heat"), ("g2", "ou"),
                                        ("G3", "langevin_quadratic"),
                                        ("G4", "langevin_logcosh")])
def test_gallery_aliases(alias, name):
    assert normalize_model_id(alias) == name
    assert make_model(alias).name == name


def test_unknown_model_id():
    with pytest.raises(ValidationError):
        normalize_model_id("G9")


def test_heat_model_constants():
    m1 = heat_model(dim=1, param_range=(0.5, 2.0))
    assert m1.constants.L1 == 1.0
    assert m1.constants.L2 == 0.0
    assert m1.constants.m == 0.5
    m3 = heat_model(dim=3, param_range=(0.25, 1.0))
    assert m3.constants.L1 == pytest.approx(math.sqrt(3))
    assert m3.constants.m == 0.25


def test_heat_model_rejects_nonpositive_range():
    with pytest.raises(ValidationError):
        heat_model(param_range=(0.0, 1.0))


def test_logcosh_gradient_values():
    model = langevin_logcosh_model(dim=2, k=1.5)
    g = model.grad_potential(np.array([1.0, -2.0]), np.array([0.25]))
    assert g == pytest.approx([1.5 + math.tanh(1.0) + 0.25, -3.0])


# --------------------------------------------------------------------- probes

@pytest.mark.parametrize("builder,kwargs", [
    (heat_model, dict(dim=1, param_range=(0.5, 2.0))),
    (heat_model, dict(dim=2, param_range=(0.25, 4.0))),
    (ou_model, dict(dim=1, k=1.0, sigma=1.0)),
    (ou_model, dict(dim=3, k=2.0, sigma=0.5)),
])
def test_probe_accepts_honest_models(builder, kwargs):
    model = builder(**kwargs)
    lo = kwargs.get("param_range", (-2.0, 2.0))[0]
    hi = kwargs.get("param_range", (-2.0, 2.0))[1]
    report = probe_constants(model, ProbeSpec(n_pairs=300, box_radius=4.0, seed=5,
                                              param_low=lo, param_high=hi))
    assert report.passed, report.failures
    assert report.max_joint_quotient <= model.constants.L1 + 1e-9
    assert report.min_eigenvalue >= model.constants.m - 1e-9


def test_probe_flags_dishonest_lipschitz():
    honest = ou_model(dim=1, k=2.0)
    lie = HypothesisConstants(L1=0.5, L2=0.0, m=honest.constants.m, C=honest.constants.C)
    dishonest = ParameterizedModel(
        dim=1, param_dim=1, drift=honest.drift, diffusion=honest.diffusion,
        constants=lie, diffusion_divergence=honest.diffusion_divergence,
        vectorized=True)
    report = probe_constants(dishonest, ProbeSpec(n_pairs=200, box_radius=3.0, seed=1,
                                                  param_low=-1.0, param_high=1.0))
    assert not report.passed
    assert "lipschitz_joint" in report.failures
    assert "lipschitz_joint" in report.witnesses


def test_probe_flags_dishonest_ellipticity():
    model = heat_model(dim=1, param_range=(0.5, 2.0))
    inflated = HypothesisConstants(L1=1.0, L2=0.0, m=1.5, C=model.constants.C)
    dishonest = ParameterizedModel(
        dim=1, param_dim=1, drift=model.drift, diffusion=model.diffusion,
        constants=inflated, diffusion_divergence=model.diffusion_divergence,
        vectorized=True)
    report = probe_constants(dishonest, ProbeSpec(n_pairs=200, box_radius=3.0, seed=2,
                                                  param_low=0.5, param_high=2.0))
    assert "ellipticity" in report.failures


@pytest.mark.parametrize("builder,kwargs", [
    (langevin_quadratic_model, dict(dim=1, k=1.0)),
    (langevin_quadratic_model, dict(dim=2, k=0.7)),
    (langevin_logcosh_model, dict(dim=1, k=1.0)),
    (langevin_logcosh_model, dict(dim=3, k=2.0)),
])
def test_probe_langevin_accepts_honest_models(builder, kwargs):
    model = builder(**kwargs)
    report = probe_langevin(model, ProbeSpec(n_pairs=300, box_radius=4.0, seed=9,
                                             param_low=-1.0, param_high=1.0))
    assert report.passed, report.failures
    assert report.min_convexity_quotient >= model.k - 1e-9


def test_probe_langevin_flags_inflated_convexity():
    honest = langevin_logcosh_model(dim=1, k=1.0)
    from fpsens import LangevinModel
    # claiming k = 2 for a potential whose Hessian dips to 1 must fail
    dishonest = LangevinModel(dim=1, param_dim=1, grad_potential=honest.grad_potential,
                              k=2.0, L3=1.0, vectorized=True)
    report = probe_langevin(dishonest, ProbeSpec(n_pairs=300, box_radius=4.0, seed=3,
                                                 param_low=-1.0, param_high=1.0))
    assert "convexity" in report.failures
