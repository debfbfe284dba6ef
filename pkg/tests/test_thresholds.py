"""Tests of the three phase-transition thresholds and the vanishing-width
limit curve.
"""

import math
import warnings

import numpy as np
import pytest

from quadnet import thresholds


def closed_form_limit_curve(alpha_bar):
    """Noiseless, ridgeless limit curve used as the reference branch set."""
    if alpha_bar <= 0.5:
        return 1.0
    if alpha_bar >= 3.0:
        return 0.0
    return (2.0 / 9.0) * alpha_bar * (4.0 - math.sqrt(6.0 * alpha_bar - 2.0)) ** 2


# ---------------------------------------------------------------------------
# interpolation threshold


def test_noiseless_interpolation_closed_form():
    assert thresholds.interpolation_threshold_noiseless(0.5).alpha_value == 0.4375
    assert thresholds.interpolation_threshold_noiseless(0.25).alpha_value == 0.359375
    for ks in (1.0, 1.5, 2.0, 5.0):
        assert thresholds.interpolation_threshold_noiseless(ks).alpha_value == 0.5


def test_noiseless_interpolation_is_continuous_at_full_rank():
    just_below = thresholds.interpolation_threshold_noiseless(1.0 - 1e-9).alpha_value
    assert just_below == pytest.approx(0.5, abs=1e-8)


def test_noisy_interpolation_approaches_the_noiseless_value():
    # the approach is slow (cube-root in Delta), so moderate Delta sits
    # visibly below while tiny Delta is within 1e-3
    a6 = thresholds.interpolation_threshold(0.5, 1e-6).alpha_value
    a9 = thresholds.interpolation_threshold(0.5, 1e-9).alpha_value
    assert a6 < a9 < 0.4375
    assert a9 == pytest.approx(0.43723340076871836, abs=1e-8)
    assert abs(a9 - 0.4375) < 1e-3


def test_noisy_interpolation_frozen_values():
    res = thresholds.interpolation_threshold(0.5, 0.5)
    assert res.alpha_value == pytest.approx(0.3069642057184545, abs=1e-10)
    assert res.aux["delta_bar"] == pytest.approx(2.292821, abs=1e-5)
    big = thresholds.interpolation_threshold(0.5, 1e3)
    assert big.alpha_value == pytest.approx(0.25008992896248683, abs=1e-9)


def test_interpolation_threshold_decreases_with_noise():
    values = [
        thresholds.interpolation_threshold(0.5, Delta).alpha_value
        for Delta in (1e-3, 0.1, 1.0, 10.0, 1e3)
    ]
    assert all(x > y for x, y in zip(values, values[1:]))
    # interpolating pure noise costs alpha -> 1/4 per symmetric degree of freedom
    assert values[-1] > 0.25


def test_interpolation_threshold_input_validation():
    with pytest.raises(ValueError):
        thresholds.interpolation_threshold(0.0, 0.5)
    with pytest.raises(ValueError):
        thresholds.interpolation_threshold(0.5, 0.0)
    with pytest.raises(ValueError):
        thresholds.interpolation_threshold_noiseless(-1.0)


# ---------------------------------------------------------------------------
# strong-recovery threshold


def test_strong_recovery_is_half_at_full_rank():
    for ks in (1.0, 1.5, 2.0, 5.0, 100.0):
        assert thresholds.strong_recovery_threshold(ks).alpha_value == 0.5


def test_strong_recovery_frozen_values_below_full_rank():
    res = thresholds.strong_recovery_threshold(0.5)
    assert res.alpha_value == pytest.approx(0.4221749821854913, abs=1e-12)
    assert res.aux["c_bar"] == pytest.approx(0.29197102, abs=1e-7)
    assert thresholds.strong_recovery_threshold(0.25).alpha_value == pytest.approx(
        0.2939418367309493, abs=1e-12
    )
    assert thresholds.strong_recovery_threshold(0.02).alpha_value == pytest.approx(
        0.04267474157105838, abs=1e-12
    )


def test_strong_recovery_is_continuous_at_full_rank():
    assert thresholds.strong_recovery_threshold(0.999).alpha_value == pytest.approx(
        0.5, abs=1e-5
    )


def test_strong_recovery_small_ratio_slope_approaches_three():
    assert thresholds.strong_recovery_threshold(1e-4).alpha_value / 1e-4 == pytest.approx(
        2.8764694797639434, abs=1e-6
    )
    ratio = thresholds.strong_recovery_threshold(1e-6).alpha_value / 1e-6
    assert abs(ratio - 3.0) < 0.03


def test_strong_recovery_monotone_in_kappa_star():
    values = [
        thresholds.strong_recovery_threshold(ks).alpha_value
        for ks in (0.02, 0.1, 0.25, 0.5, 0.75, 0.999)
    ]
    assert all(x < y for x, y in zip(values, values[1:]))


def test_strong_recovery_below_interpolation_threshold():
    # exact recovery of the noiseless problem cannot require more samples
    # than noisy interpolation forbids
    for ks in (0.1, 0.25, 0.5, 0.75):
        strong = thresholds.strong_recovery_threshold(ks).alpha_value
        inter = thresholds.interpolation_threshold_noiseless(ks).alpha_value
        assert strong < inter


# ---------------------------------------------------------------------------
# weak threshold of the vanishing-width limit


def test_weak_threshold_branches():
    assert thresholds.weak_threshold(0.0, 0.0) == 0.5
    assert thresholds.weak_threshold(0.0, 1.0) == 0.75
    assert thresholds.weak_threshold(8.0, 0.0) == 1.5
    assert thresholds.weak_threshold(10.0, 0.0) == 2.0
    # both branches meet at lambda_bar = 4 (1 + Delta/2)
    assert thresholds.weak_threshold(4.0, 0.0) == 0.5
    with pytest.raises(ValueError):
        thresholds.weak_threshold(-1.0, 0.0)


# ---------------------------------------------------------------------------
# vanishing-width limit curve


def test_limit_curve_closed_form_branches():
    assert thresholds.small_rank_test_error(0.3, 0.0, 0.0) == 1.0
    assert thresholds.small_rank_test_error(1.0, 0.0, 0.0) == pytest.approx(
        8.0 / 9.0, abs=1e-14
    )
    assert thresholds.small_rank_test_error(5.0, 0.0, 0.0) == 0.0


def test_limit_curve_continuous_at_both_transitions():
    for eps in (1e-12, 1e-9):
        assert abs(thresholds.small_rank_test_error(0.5 + eps, 0.0, 0.0) - 1.0) < 1e-9
        assert thresholds.small_rank_test_error(3.0 - eps, 0.0, 0.0) < 1e-9


def test_limit_curve_monotone_nonincreasing():
    grid = np.linspace(0.1, 3.5, 60)
    values = [thresholds.small_rank_test_error(a, 0.0, 0.0) for a in grid]
    assert all(x >= y - 1e-12 for x, y in zip(values, values[1:]))


def test_limit_system_matches_the_closed_form_at_tiny_ridge():
    # the numeric regime-selection route at lambda_bar = 1e-10 against the
    # analytic lambda_bar -> 0+ branches
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for abar in (0.3, 0.55, 1.0, 1.8, 2.5, 2.9, 3.5):
            numeric = thresholds.small_rank_test_error(abar, 1e-10, 0.0)
            closed = closed_form_limit_curve(abar)
            assert numeric == pytest.approx(closed, abs=2e-5), f"alpha_bar={abar}"


def test_limit_curve_null_plateau_below_the_weak_threshold():
    assert thresholds.small_rank_test_error(0.3, 0.0, 0.5) == 1.0
    assert thresholds.small_rank_test_error(0.62, 0.0, 0.5) == 1.0  # aw = 0.625


def test_limit_curve_ridge_shifted_plateau():
    # spike-only regime with a strong ridge: frozen rational value
    assert thresholds.small_rank_test_error(1.0, 3.0, 0.0) == pytest.approx(
        8.0 / 9.0, abs=1e-12
    )


def test_limit_curve_noisy_tail():
    # deep in the recovered phase the residual error is 3 Delta / (2 alpha_bar)
    val = thresholds.small_rank_test_error(1000.0, 0.0, 0.5)
    assert val == pytest.approx(3.0 * 0.5 / 2000.0, rel=0.05)


def test_limit_curve_departs_at_the_weak_threshold():
    # the departure from the null plateau is soft (cubic in the excess)
    aw = thresholds.weak_threshold(0.0, 0.5)
    assert thresholds.small_rank_test_error(aw - 0.01, 0.0, 0.5) == 1.0
    assert thresholds.small_rank_test_error(aw + 0.02, 0.0, 0.5) < 1.0
    assert thresholds.small_rank_test_error(aw + 0.1, 0.0, 0.5) < 1.0 - 5e-4


def test_limit_curve_input_validation():
    with pytest.raises(ValueError):
        thresholds.small_rank_test_error(0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        thresholds.small_rank_test_error(1.0, -1.0, 0.0)
    with pytest.raises(ValueError):
        thresholds.small_rank_test_error(1.0, 0.0, -0.5)


def test_limit_curve_total_on_a_grid():
    # every (alpha_bar, lambda_bar, Delta) in a broad grid yields a finite,
    # nonnegative value without tripping regime selection
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for abar in (0.2, 0.7, 1.3, 2.8, 4.0):
            for lbar in (0.0, 0.3, 2.0, 8.0):
                for Delta in (0.0, 0.4, 2.0):
                    val = thresholds.small_rank_test_error(abar, lbar, Delta)
                    assert np.isfinite(val)
                    assert val >= -1e-12
