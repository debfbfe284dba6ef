"""Phase-transition thresholds and the small-width-ratio limit curve.

Three sample-ratio thresholds organize the phase diagram of the estimator:

* interpolation threshold alpha_inter(kappa_star, Delta): above it the
  training loss of the lambda -> 0+ estimator is strictly positive (no
  PSD matrix can interpolate the noisy data); the lambda -> 0+ test-error
  curve develops a cusp there.
* strong-recovery threshold alpha_strong(kappa_star): above it the
  noiseless (Delta = 0) lambda -> 0+ estimator reaches exactly zero test
  error.
* weak threshold alpha_bar_weak(lambda_bar, Delta) of the small-ratio
  limit: below it the estimator carries no overlap with the target at all.

The small-ratio limit (kappa_star -> 0 with alpha_bar = alpha/kappa_star
and lambda_bar = lambda_tilde/kappa_star held fixed) turns the state
evolution into low-degree polynomial systems: the target spectrum becomes
a single spike against the semicircle noise bulk, and the test error
(normalized by its null value) follows from whichever of three regimes is
consistent: no spike retained, spike only, or spike plus noise bulk.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

from scipy import optimize

from . import integrals

__all__ = [
    "ThresholdResult",
    "interpolation_threshold",
    "interpolation_threshold_noiseless",
    "strong_recovery_threshold",
    "weak_threshold",
    "small_rank_test_error",
]

BISECTION_TOL = 1e-12


@dataclass(frozen=True)
class ThresholdResult:
    """A located threshold with solver internals attached."""

    alpha_value: float
    kind: str
    aux: dict = field(default_factory=dict)


def interpolation_threshold_noiseless(kappa_star: float) -> ThresholdResult:
    """Closed-form Delta -> 0+ interpolation threshold."""
    if kappa_star <= 0:
        raise ValueError(f"kappa_star must be positive, got {kappa_star}")
    if kappa_star < 1.0:
        value = (1.0 + 2.0 * kappa_star - kappa_star * kappa_star) / 4.0
    else:
        value = 0.5
    return ThresholdResult(alpha_value=value, kind="interpolation", aux={"Delta": 0.0})


def interpolation_threshold(kappa_star: float, Delta: float) -> ThresholdResult:
    """Interpolation threshold at positive label noise.

    Solves G(delta) = J(delta, 0) - (delta/2) dJ/ddelta (delta, 0)
    - Q* - Delta/2 = 0 for the cusp height delta_bar (G is -Delta/2 at
    0+ and grows without bound), then alpha_inter = J1(delta_bar, 0) /
    (4 delta_bar).
    """
    if kappa_star <= 0:
        raise ValueError(f"kappa_star must be positive, got {kappa_star}")
    if Delta <= 0:
        raise ValueError(
            f"Delta must be positive (use the noiseless closed form), got {Delta}"
        )
    value, delta_bar, residual = _interpolation_core(kappa_star, Delta)
    return ThresholdResult(
        alpha_value=value,
        kind="interpolation",
        aux={"delta_bar": delta_bar, "residual": residual, "Delta": Delta},
    )


@lru_cache(maxsize=256)
def _interpolation_core(kappa_star: float, Delta: float):
    q_star = 1.0 + kappa_star

    def gap(delta: float) -> float:
        j, j1, _ = integrals.tail_moments(delta, 0.0, kappa_star)
        return j - 0.5 * delta * j1 - q_star - 0.5 * Delta

    lo = 1e-6
    if gap(lo) > 0.0:  # root below lo: shrink (extremely small Delta)
        while gap(lo) > 0.0 and lo > 1e-12:
            lo *= 0.1
    hi = max(1.0, 2.0 * math.sqrt(Delta))
    while gap(hi) < 0.0:
        hi *= 2.0
        if hi > 1e9:
            raise RuntimeError(f"failed to bracket the cusp height for Delta={Delta}")
    delta_bar = optimize.bisect(gap, lo, hi, xtol=BISECTION_TOL)
    _, j1, _ = integrals.tail_moments(delta_bar, 0.0, kappa_star)
    return j1 / (4.0 * delta_bar), delta_bar, abs(gap(delta_bar))


def strong_recovery_threshold(kappa_star: float) -> ThresholdResult:
    """Sample ratio above which the noiseless interpolator is exact.

    For kappa_star >= 1 the threshold is exactly 1/2.  Below 1, c_bar
    solves M1(c) - c*M0(c) + c/(1 - kappa_star) = 0 (the left side is
    negative at c = 0 and positive at c = 2, so the root is bracketed in
    (0, 2)), and

        alpha_strong = 1/2 - (1/2)(1-kappa_star)^2 (M2(c_bar) - c_bar*M1(c_bar)).
    """
    if kappa_star <= 0:
        raise ValueError(f"kappa_star must be positive, got {kappa_star}")
    if kappa_star >= 1.0:
        return ThresholdResult(alpha_value=0.5, kind="strong_recovery", aux={})
    value, c_bar, residual = _strong_recovery_core(kappa_star)
    return ThresholdResult(
        alpha_value=value,
        kind="strong_recovery",
        aux={"c_bar": c_bar, "residual": residual},
    )


@lru_cache(maxsize=256)
def _strong_recovery_core(kappa_star: float):
    w = 1.0 - kappa_star

    def condition(c: float) -> float:
        m0 = integrals.semicircle_incomplete_moment(0, c)
        m1 = integrals.semicircle_incomplete_moment(1, c)
        return m1 - c * m0 + c / w

    c_bar = optimize.bisect(condition, 0.0, 2.0, xtol=BISECTION_TOL)
    m1 = integrals.semicircle_incomplete_moment(1, c_bar)
    m2 = integrals.semicircle_incomplete_moment(2, c_bar)
    value = 0.5 - 0.5 * w * w * (m2 - c_bar * m1)
    return value, c_bar, abs(condition(c_bar))


def weak_threshold(lambda_bar: float, Delta: float) -> float:
    """Small-ratio sample threshold below which the estimator is null."""
    if lambda_bar < 0 or Delta < 0:
        raise ValueError("lambda_bar and Delta must be nonnegative")
    p = 1.0 + 0.5 * Delta
    return max(0.5 * p, 0.25 * (lambda_bar - 2.0 * p))


def _spike_only_solutions(alpha_bar: float, lambda_bar: float, p: float):
    """(violation, mse) pairs for roots of the spike-only regime.

    With u = 1 + d_bar**2 - c (c the bulk-relative threshold), u solves
    3u^2 - (2 alpha_bar + 4)u + (2 alpha_bar + p - lambda_bar/2) = 0,
    then c = lambda_bar / (4(alpha_bar - u)) and d_bar^2 = c + u - 1.
    Validity: 0 < d_bar^2 < 1 and 2 d_bar <= c <= 1 + d_bar^2 (the
    threshold clears the noise bulk but not the spike); violation is 0
    for a consistent root, else the worst normalized constraint breach.
    """
    # substitute u = 1 + s: 3 s^2 - b s + g = 0.  u = 1 is an exact root at
    # lambda_bar = 0, Delta = 0, so the shifted form (with the rationalized
    # small-root formula) is needed to keep d^2 = c + s accurate there.
    b = 2.0 * alpha_bar - 2.0
    g = (p - 1.0) - 0.5 * lambda_bar
    disc = b * b - 12.0 * g
    if disc < 0:
        return []
    r = math.sqrt(disc)
    if b >= 0.0:
        shifts = (2.0 * g / (b + r) if b + r > 0 else 0.0, (b + r) / 6.0)
    else:
        shifts = (2.0 * g / (b - r), (b - r) / 6.0)
    out = []
    tol = 1e-10
    for s in shifts:
        if alpha_bar - 1.0 - s <= tol:
            continue
        c = lambda_bar / (4.0 * (alpha_bar - 1.0 - s))
        d2 = c + s
        if not -tol * max(1.0, c) < d2 < 1.0 + tol:
            continue
        d2 = min(max(d2, 0.0), 1.0)
        # threshold at or above the bulk edge: 2 d <= c, compared squared
        # with a relative slack (both sides are O(lambda_bar) as it vanishes)
        edge = (4.0 * d2 - c * c) / max(c * c, 4.0 * d2, 1e-300)
        spike = c - (1.0 + d2)
        violation = max(0.0, edge - 1e-6, spike - tol)
        mse = 2.0 * alpha_bar * d2 - (p - 1.0)
        out.append((violation, mse))
    return out


def _spike_bulk_solution(alpha_bar: float, lambda_bar: float, p: float):
    """(d_bar, mse) of the spike-plus-bulk regime, or None.

    d_bar solves 2 alpha_bar d^2 = p - (1-d)^3 (1+3d) on (0, 1); validity
    requires the threshold to sit strictly inside the bulk,
    4 alpha_bar d - lambda_bar/2 - 4 d (1-d)^2 > 0.

    In expanded form (exact, no cancellation at small d) the equation is

        (p - 1) + (6 - 2 alpha_bar) d^2 - 8 d^3 + 3 d^4 = 0.
    """
    tol = 1e-10
    if p == 1.0:
        # noiseless: d = 0 is a double root; divide it out and solve
        # 3 d^2 - 8 d + (6 - 2 alpha_bar) = 0 for the branch entering (0, 1)
        rad = 6.0 * alpha_bar - 2.0
        if rad < 0.0:
            return None
        d = (4.0 - math.sqrt(rad)) / 3.0
        if not tol < d < 1.0 + tol:
            return None
        d = min(d, 1.0)
    else:

        def h(d: float) -> float:
            return (p - 1.0) + (6.0 - 2.0 * alpha_bar) * d * d - 8.0 * d**3 + 3.0 * d**4

        if h(1.0) >= 0.0:  # h(0) = (p-1)/... > 0: no sign change on (0, 1)
            return None
        d = optimize.bisect(h, 0.0, 1.0, xtol=BISECTION_TOL)
    t = 4.0 * alpha_bar * d - 0.5 * lambda_bar - 4.0 * d * (1.0 - d) ** 2
    violation = max(0.0, -t - tol)
    return violation, 2.0 * alpha_bar * d * d - (p - 1.0)


def small_rank_test_error(alpha_bar: float, lambda_bar: float, Delta: float) -> float:
    """Normalized test error of the vanishing-width-ratio limit.

    For Delta = 0, lambda_bar = 0 this is the closed-form curve
    1 (no recovery) -> (2/9) alpha_bar (4 - sqrt(6 alpha_bar - 2))^2 ->
    0 (exact recovery at alpha_bar >= 3).  Otherwise the consistent
    regime among {no spike, spike only, spike + bulk} is selected by its
    validity conditions.
    """
    if alpha_bar <= 0:
        raise ValueError(f"alpha_bar must be positive, got {alpha_bar}")
    if lambda_bar < 0 or Delta < 0:
        raise ValueError("lambda_bar and Delta must be nonnegative")
    if Delta == 0.0 and lambda_bar == 0.0:
        if alpha_bar <= 0.5:
            return 1.0
        if alpha_bar >= 3.0:
            return 0.0
        return (2.0 / 9.0) * alpha_bar * (4.0 - math.sqrt(6.0 * alpha_bar - 2.0)) ** 2

    p = 1.0 + 0.5 * Delta
    aw = weak_threshold(lambda_bar, Delta)
    candidates = [("no_spike", max(0.0, (alpha_bar - aw) / max(1.0, aw) - 1e-10), 1.0)]
    for violation, mse in _spike_only_solutions(alpha_bar, lambda_bar, p):
        candidates.append(("spike_only", violation, mse))
    sb = _spike_bulk_solution(alpha_bar, lambda_bar, p)
    if sb is not None:
        candidates.append(("spike_bulk", sb[0], sb[1]))

    valid = [c for c in candidates if c[1] == 0.0]
    if valid:
        kinds = {name for name, _, _ in valid}
        if len(kinds) > 1:
            warnings.warn(
                f"multiple regimes valid at alpha_bar={alpha_bar} "
                f"(boundary point): {sorted(kinds)}; returning the smaller error",
                RuntimeWarning,
                stacklevel=2,
            )
        return min(mse for _, _, mse in valid)
    name, violation, mse = min(candidates, key=lambda c: c[1])
    warnings.warn(
        f"no regime is exactly consistent at alpha_bar={alpha_bar}, "
        f"lambda_bar={lambda_bar}, Delta={Delta}; returning the nearest "
        f"({name}, constraint breach {violation:.2e})",
        RuntimeWarning,
        stacklevel=2,
    )
    return mse
