from __future__ import annotations

import numpy as np
import pytest

from src.config import SgdConfig
from src.core.errors import (
    ClippingViolation,
    DimensionMismatch,
    Infeasible,
    NonFiniteInput,
    ProblemTooLarge,
    StepTooLarge,
)
from src.core.game import (
    MAX_ENUMERATION,
    adversary_value,
    brute_force_feasible_labelings,
    clip_predictions,
    exact_solve_small,
    feasibility_scale,
    minimize_slack,
    rescale_along_ray,
    slack,
    smoothed_slack,
    solve_game,
    subgradient,
    verify_clipping,
)
from src.core.specialists import SpecialistMatrix
from tests.conftest import random_instance

# --- six-point worked values ---

def test_slack_at_single_b_rule(six_point):
    F, b = six_point
    assert slack(F, b, np.eye(6)[3]) == pytest.approx(-2 / 3, abs=1e-12)


def test_slack_with_hinge_terms(six_point):
    F, b = six_point
    sigma = np.array([1.0, 1.0, 0, 0, 0, 0])
    assert slack(F, b, sigma) == pytest.approx(-1 / 3, abs=1e-12)


def test_slack_at_zero_is_zero(six_point):
    F, b = six_point
    assert slack(F, b, np.zeros(6)) == 0.0


def test_six_point_has_a_unique_feasible_labeling(six_point):
    F, b = six_point
    feasible = brute_force_feasible_labelings(F, b)
    assert len(feasible) == 1
    np.testing.assert_array_equal(feasible[0], np.ones(6))


def test_six_point_exact_value(six_point):
    F, b = six_point
    sigma, gamma = exact_solve_small(F, b)
    # The three A rules together already force every label to +1.
    assert gamma == pytest.approx(-1.0, abs=1e-9)
    assert gamma <= -2 / 3
    assert slack(F, b, sigma) == gamma


def test_six_point_adversary_value(six_point):
    F, b = six_point
    assert adversary_value(F, b, np.ones(6)) == pytest.approx(1.0, abs=1e-9)
    assert adversary_value(F, b, np.ones(6), alpha=2.0) == pytest.approx(1.0, abs=1e-9)
    assert adversary_value(F, b, -np.ones(6)) == pytest.approx(-1.0, abs=1e-9)


def test_six_point_solution_predicts_all_positive(six_point):
    F, b = six_point
    solution = solve_game(SpecialistMatrix.from_dense(F), b, 1.0, solver="exact")
    assert solution.value == pytest.approx(1.0, abs=1e-9)
    assert np.all(solution.g > 0)
    assert np.mean(solution.g) >= 2 / 3
    np.testing.assert_array_equal(solution.margins, np.abs(solution.awake))


def test_six_point_sgd_agrees_with_exact(six_point):
    F, b = six_point
    sigma = minimize_slack(F, b, 1.0, SgdConfig())
    assert abs(slack(F, b, sigma) - (-1.0)) <= 1e-3


def test_adversary_value_trivial_cases(six_point):
    F, _ = six_point
    g = np.array([0.5, -1.0, 0.0, 0.25, 1.0, -0.75])
    assert adversary_value(F, np.zeros(6), np.zeros(6)) == pytest.approx(0.0, abs=1e-12)
    # Vacuous bounds let the adversary oppose every prediction.
    vacuous = adversary_value(F, np.full(6, -1.0), g)
    assert vacuous == pytest.approx(-np.abs(g).mean(), abs=1e-9)


def test_alpha_below_one_makes_six_point_unbounded(six_point):
    F, b = six_point
    with pytest.raises(Infeasible):
        exact_solve_small(F, b, alpha=0.5)
    with pytest.raises(Infeasible):
        adversary_value(F, b, np.ones(6), alpha=0.5)


# --- subgradient ---

def test_subgradient_formula(six_point):
    F, b = six_point
    sigma = np.array([1.0, 1.0, 0, 0, 0, 0])
    a = F.T @ sigma
    expected = -b + (1 / 6) * F @ np.where(np.abs(a) > 1, np.sign(a), 0.0)
    np.testing.assert_allclose(subgradient(F, b, sigma), expected, atol=1e-12)


def test_subgradient_inside_flat_region_is_zero(six_point):
    F, b = six_point
    inside = np.array([2.0, 2, 2, 0, 0, 0])
    np.testing.assert_allclose(subgradient(F, b, inside), 0.0, atol=1e-12)


# --- clipping ---

def test_clip_predictions():
    awake = np.array([0.5, -2.0, 1.0, -1.0, 0.0, 0.999])
    np.testing.assert_array_equal(clip_predictions(awake), [0.5, -1.0, 1.0, -1.0, 0.0, 0.999])


def test_verify_clipping_rejects_violations():
    awake = np.array([0.2, 3.0])
    verify_clipping(awake, clip_predictions(awake))
    with pytest.raises(ClippingViolation):
        verify_clipping(awake, np.array([0.2, 0.9]))
    with pytest.raises(ClippingViolation):
        verify_clipping(awake, np.array([1.2, 1.0]))


# --- ray rescaling ---

def test_rescale_reaches_flat_region(six_point):
    F, b = six_point
    S = SpecialistMatrix.from_dense(F)
    sigma = np.array([0.1, 0.1, 0.1, 0.0, 0.0, 0.0])
    rescaled = rescale_along_ray(S, b, sigma)
    np.testing.assert_allclose(rescaled, np.array([1.0, 1, 1, 0, 0, 0]), rtol=1e-12)
    assert slack(S, b, rescaled) == pytest.approx(-1.0, abs=1e-12)


def test_rescale_never_increases_slack():
    rng = np.random.default_rng(4)
    for _ in range(50):
        F, b, _ = random_instance(rng, n=10, p=4)
        S = SpecialistMatrix.from_dense(F)
        sigma = rng.exponential(size=4)
        assert slack(S, b, rescale_along_ray(S, b, sigma)) <= slack(S, b, sigma) + 1e-12


# --- SGD vs exact ---

def _flat_instance(rng: np.random.Generator, n: int, p: int):
    """Instances whose optimal value is exactly 1: b = F z / n and row 0 equals z."""
    F, _, z = random_instance(rng, n, p)
    F[0] = z
    return F, F @ z / n


def test_sgd_matches_exact_on_flat_instances():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        n = int(rng.integers(4, 13))
        p = int(rng.integers(2, 6))
        F, b = _flat_instance(rng, n, p)
        _, exact = exact_solve_small(F, b)
        sigma = minimize_slack(F, b, 1.0, SgdConfig())
        assert exact == pytest.approx(-1.0, abs=1e-9)
        assert abs(slack(F, b, sigma) - exact) <= 1e-3


def test_sgd_matches_exact_on_general_instances():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(5, 61))
        p = int(rng.integers(2, 11))
        F, b, _ = random_instance(rng, n, p)
        _, exact = exact_solve_small(F, b)
        value = slack(F, b, minimize_slack(F, b, 1.0, SgdConfig()))
        assert exact - 1e-9 <= value <= exact + 1e-3


def test_sgd_matches_exact_for_other_alphas():
    rng = np.random.default_rng(8)
    for alpha in (1.5, 3.0):
        for _ in range(10):
            F, b, _ = random_instance(rng, n=int(rng.integers(5, 41)), p=int(rng.integers(2, 8)))
            _, exact = exact_solve_small(F, b, alpha)
            value = slack(F, b, minimize_slack(F, b, alpha, SgdConfig()), alpha)
            assert exact - 1e-9 <= value <= exact + 1e-3


def test_polish_never_raises_the_slack():
    rng = np.random.default_rng(12)
    for _ in range(10):
        F, b, _ = random_instance(rng, n=30, p=6)
        rough = minimize_slack(F, b, 1.0, SgdConfig(epochs=5, polish=False))
        polished = minimize_slack(F, b, 1.0, SgdConfig(epochs=5))
        assert slack(F, b, polished) <= slack(F, b, rough) + 1e-12


def test_infeasible_bounds_are_detected_by_sgd(six_point):
    F, b = six_point
    with pytest.raises(Infeasible):
        minimize_slack(F, b, 0.5, SgdConfig())
    opposed = np.array([[1.0, 1.0], [-1.0, -1.0]])
    with pytest.raises(Infeasible):
        minimize_slack(opposed, np.array([0.5, 0.5]), 1.0, SgdConfig())
    with pytest.raises(Infeasible):
        solve_game(SpecialistMatrix.from_dense(opposed), np.array([0.5, 0.5]), 1.0)


# --- smoothed slack ---

def test_smoothed_slack_brackets_the_slack():
    rng = np.random.default_rng(13)
    for width in (1e-1, 1e-3):
        for _ in range(20):
            F, b, _ = random_instance(rng, n=25, p=5)
            sigma = rng.exponential(size=5)
            value, _ = smoothed_slack(F, b, sigma, 2.0, width)
            exact = slack(F, b, sigma, 2.0)
            assert value <= exact + 1e-12
            assert exact <= value + 2.0 * width / 2 + 1e-12


def test_smoothed_slack_gradient_matches_differences():
    rng = np.random.default_rng(14)
    F, b, _ = random_instance(rng, n=20, p=4)
    sigma = rng.exponential(size=4) + 0.5
    _, grad = smoothed_slack(F, b, sigma, 1.0, 0.5)
    h = 1e-6
    numeric = np.array([
        (smoothed_slack(F, b, sigma + h * e, 1.0, 0.5)[0]
         - smoothed_slack(F, b, sigma - h * e, 1.0, 0.5)[0]) / (2 * h)
        for e in np.eye(4)
    ])
    np.testing.assert_allclose(grad, numeric, atol=1e-6)


def test_smoothed_slack_rejects_a_zero_width(six_point):
    F, b = six_point
    with pytest.raises(ValueError):
        smoothed_slack(F, b, np.zeros(6), 1.0, 0.0)


def test_sgd_is_deterministic_given_seed():
    rng = np.random.default_rng(3)
    F, b, _ = random_instance(rng, n=40, p=6)
    config = SgdConfig(batch_size=8, epochs=20, seed=9)
    first = minimize_slack(F, b, 1.0, config)
    np.testing.assert_array_equal(first, minimize_slack(F, b, 1.0, config))


def test_sgd_weights_are_nonnegative():
    rng = np.random.default_rng(5)
    F, b, _ = random_instance(rng, n=30, p=5, flip=0.45)
    sigma = minimize_slack(F, b, 1.0, SgdConfig(batch_size=4, epochs=30))
    assert np.all(sigma >= 0)


def test_sgd_divergence_is_reported(six_point):
    F, b = six_point
    # One full-batch step of this size sends the slack into the millions.
    with pytest.raises(StepTooLarge):
        minimize_slack(-F, b, 5.0, SgdConfig(batch_size=64, epochs=3, step0=1e6))


# --- oracles and guards ---

def test_feasibility_scale(six_point):
    F, b = six_point
    assert feasibility_scale(F, b) == pytest.approx(1.0, abs=1e-9)
    assert feasibility_scale(F, 2 * b) == pytest.approx(0.5, abs=1e-9)
    # A wider label box reaches twice the correlation.
    assert feasibility_scale(F, 2 * b, alpha=2.0) == pytest.approx(1.0, abs=1e-9)
    opposed = np.array([[1.0, 1.0], [-1.0, -1.0]])
    assert feasibility_scale(opposed, np.array([0.5, 0.5])) == pytest.approx(0.0, abs=1e-9)


def test_feasibility_scale_has_no_size_limit():
    rng = np.random.default_rng(15)
    F, b, _ = random_instance(rng, n=800, p=80)
    assert feasibility_scale(F, b) == pytest.approx(1.0, abs=1e-9)
    assert feasibility_scale(F, b + 2.0) < 1.0


def test_size_limits():
    with pytest.raises(ProblemTooLarge):
        brute_force_feasible_labelings(np.ones((1, MAX_ENUMERATION + 1)), np.zeros(1))
    with pytest.raises(ProblemTooLarge):
        exact_solve_small(np.ones((51, 3)), np.zeros(51))


def test_input_validation(six_point):
    F, b = six_point
    with pytest.raises(DimensionMismatch):
        slack(F, b[:3], np.zeros(6))
    with pytest.raises(NonFiniteInput):
        slack(F, np.full(6, np.nan), np.zeros(6))
    with pytest.raises(ValueError):
        slack(F, b, -np.ones(6))
    with pytest.raises(ValueError):
        slack(F, b, np.zeros(6), alpha=0.0)
