import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mavdesign.errors import DomainError, ValidationError
from mavdesign.models import (
    LOGISTIC4,
    SIGMOID_EMAX,
    AveragingScheme,
    Design,
    DesignSpace,
    Misspecification,
    ParamVector,
    build_candidate,
    get_family,
    grad_eta,
    mean_eta,
    normalize_design,
)
from oracles import emax_eta, logistic_eta, mean_grad_oracle

SPACE = DesignSpace(0.0, 8.0)


def test_design_space_rejects_empty_interval():
    with pytest.raises(ValidationError):
        DesignSpace(1.0, 1.0)


@pytest.mark.parametrize(
    "points, weights",
    [
        ((1.0, 0.5), (0.5, 0.5)),  # not increasing
        ((0.0, 1.0), (0.7, 0.7)),  # weights do not sum to 1
        ((0.0, 1.0), (1.0, 0.0)),  # zero weight
        ((), ()),
    ],
)
def test_design_invariants(points, weights):
    with pytest.raises(ValidationError):
        Design(points, weights)


def test_normalize_merges_duplicates():
    d = normalize_design((3.0, 3.0 + 1e-9), (0.5, 0.5), SPACE, merge_tol=1e-6)
    assert len(d.points) == 1
    assert d.points[0] == pytest.approx(3.0, abs=1e-9)  # weighted mean 3 + 5e-10
    assert d.weights == (1.0,)


def test_normalize_drops_negligible_mass():
    d = normalize_design((1.0, 5.0), (0.999999, 1e-6), SPACE)
    assert d.points == (1.0,)
    assert d.weights == (1.0,)


def test_normalize_merge_position_is_weighted_mean():
    d = normalize_design((2.0, 2.001), (0.25, 0.75), SPACE, merge_tol=0.01)
    assert d.points[0] == pytest.approx(2.00075, abs=1e-15)


def test_normalize_rejects_points_outside_space():
    with pytest.raises(DomainError):
        normalize_design((-0.1, 1.0), (0.5, 0.5), SPACE)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(0.0, 8.0), min_size=1, max_size=8),
    st.lists(st.floats(0.01, 1.0), min_size=8, max_size=8),
)
def test_normalize_is_idempotent(points, raw_w):
    w = raw_w[: len(points)]
    once = normalize_design(points, w, SPACE)
    twice = normalize_design(once, space=SPACE)
    assert once == twice
    assert math.isclose(math.fsum(once.weights), 1.0, abs_tol=1e-12)
    assert list(once.points) == sorted(set(once.points))


def test_param_vector_layout():
    pv = ParamVector(4.5, (1.81, 0.79), (0.0, 1.0))
    np.testing.assert_array_equal(pv.full, [4.5, 1.81, 0.79, 0.0, 1.0])
    assert ParamVector.from_full(pv.full, 2) == pv
    with pytest.raises(DomainError):
        ParamVector(0.0, (1.0,), ())


def test_family_registry():
    assert get_family("sigmoid_emax") is SIGMOID_EMAX
    assert get_family("logistic4") is LOGISTIC4
    with pytest.raises(ValidationError):
        get_family("nope")


def test_logistic_midpoint_value():
    pv = ParamVector(1.0, (-1.73, 4.0), (0.0, 1.0))
    assert mean_eta(LOGISTIC4, 4.0, pv) == pytest.approx(-0.865, abs=1e-15)


def test_emax_matches_independent_formula():
    pv = ParamVector(4.5, (1.81, 0.79), (0.1, 2.0))
    x = np.linspace(0, 8, 17)
    np.testing.assert_allclose(mean_eta(SIGMOID_EMAX, x, pv), emax_eta(x, 1.81, 0.79, 0.1, 2.0), rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("family, eta", [(SIGMOID_EMAX, emax_eta), (LOGISTIC4, logistic_eta)])
def test_gradient_against_finite_difference_oracle(family, eta):
    rng = np.random.default_rng(3)
    for _ in range(10):
        th = np.array([rng.uniform(-3, 3), rng.uniform(0.3, 5), rng.uniform(-1, 1), rng.uniform(0.6, 4)])
        pv = ParamVector(1.0, tuple(th[:2]), tuple(th[2:]))
        x = np.sort(rng.uniform(0.05, 8, 6))
        np.testing.assert_allclose(grad_eta(family, x, pv), mean_grad_oracle(eta, x, th), rtol=1e-7, atol=1e-9)


def test_emax_gradient_at_zero_dose_is_the_limit():
    pv = ParamVector(1.0, (1.81, 0.79), (0.0, 2.0))
    g0 = grad_eta(SIGMOID_EMAX, 0.0, pv)
    g_small = grad_eta(SIGMOID_EMAX, 1e-12, pv)
    np.testing.assert_allclose(g0, [0.0, 0.0, 1.0, 0.0])
    np.testing.assert_allclose(g_small, g0, atol=1e-10)


def test_negative_dose_is_a_domain_error():
    with pytest.raises(DomainError):
        mean_eta(SIGMOID_EMAX, -0.5, SIGMOID_EMAX.nominal(1.0, (1.0, 1.0)))


@settings(max_examples=50, deadline=None)
@given(
    st.sampled_from([SIGMOID_EMAX, LOGISTIC4]),
    st.floats(-5, 5),
    st.floats(0.0, 8.0),
    st.floats(0.2, 5.0),
    st.floats(0.5, 4.0),
)
def test_intercept_shift_moves_mean_by_the_same_amount(family, c, x, t2, g2):
    pv = ParamVector(1.0, (1.3, t2), (0.2, g2))
    shifted = pv.replace(gamma=(0.2 + c, g2))
    assert mean_eta(family, x, shifted) == pytest.approx(mean_eta(family, x, pv) + c, abs=1e-12)


def test_candidate_projection_selects_free_parameters():
    cand = build_candidate(SIGMOID_EMAX, (2,))
    assert cand.free_index == (0, 1, 2, 4)
    P = cand.projection
    np.testing.assert_array_equal(P @ np.arange(5.0), [0, 1, 2, 4])
    pv = cand.embed([4.5, 1.81, 0.79, 2.0])
    assert pv.gamma == (0.0, 2.0)


def test_candidate_index_validation():
    with pytest.raises(ValidationError):
        build_candidate(SIGMOID_EMAX, (3,))


def test_scheme_requires_simplex_weights():
    with pytest.raises(ValidationError, match="g must sum to 1"):
        AveragingScheme(((), (1,)), (0.5, 0.6))
    with pytest.raises(ValidationError):
        AveragingScheme(((1,), (1,)), (0.5, 0.5))


def test_misspecification_scaling():
    m = Misspecification.from_scaled((0.1, 1.0), 150)
    np.testing.assert_allclose(m.delta, (0.1 * math.sqrt(150), math.sqrt(150)))
    np.testing.assert_allclose(m.delta_over_sqrt_n, (0.1, 1.0))
