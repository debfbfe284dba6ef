"""Tests of the truncated second-moment integral J(a, b), its partial
derivatives, and the incomplete semicircle moments.
"""

import numpy as np
import pytest
from scipy import integrate as sp_integrate

from quadnet import integrals, spectral


# ---------------------------------------------------------------------------
# incomplete semicircle moments


def test_semicircle_moments_at_the_endpoints():
    assert integrals.semicircle_incomplete_moment(0, 2.0) == pytest.approx(1.0, abs=1e-14)
    assert integrals.semicircle_incomplete_moment(1, 2.0) == pytest.approx(0.0, abs=1e-14)
    assert integrals.semicircle_incomplete_moment(2, 2.0) == pytest.approx(1.0, abs=1e-14)
    for k in (0, 1, 2):
        assert integrals.semicircle_incomplete_moment(k, -2.0) == pytest.approx(0.0, abs=1e-14)


def test_semicircle_moments_at_zero():
    assert integrals.semicircle_incomplete_moment(0, 0.0) == pytest.approx(0.5, abs=1e-14)
    assert integrals.semicircle_incomplete_moment(1, 0.0) == pytest.approx(
        -4.0 / (3.0 * np.pi), abs=1e-14
    )
    assert integrals.semicircle_incomplete_moment(2, 0.0) == pytest.approx(0.5, abs=1e-14)


def test_semicircle_moment_symmetries():
    for x in (0.3, 0.9, 1.7):
        m0p = integrals.semicircle_incomplete_moment(0, x)
        m0m = integrals.semicircle_incomplete_moment(0, -x)
        assert m0p + m0m == pytest.approx(1.0, abs=1e-13)
        m2p = integrals.semicircle_incomplete_moment(2, x)
        m2m = integrals.semicircle_incomplete_moment(2, -x)
        assert m2p + m2m == pytest.approx(1.0, abs=1e-13)
        # the first moment integrand is odd, so its incomplete moment is even
        m1p = integrals.semicircle_incomplete_moment(1, x)
        m1m = integrals.semicircle_incomplete_moment(1, -x)
        assert m1p == pytest.approx(m1m, abs=1e-13)


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("x", [-1.4, -0.2, 0.6, 1.8])
def test_semicircle_moments_against_direct_quadrature(k, x):
    ref, err = sp_integrate.quad(
        lambda u: u**k * np.sqrt(4.0 - u * u) / (2.0 * np.pi), -2.0, x
    )
    val = integrals.semicircle_incomplete_moment(k, x)
    assert val == pytest.approx(ref, abs=max(1e-11, 10 * err))


def test_semicircle_moment_domain_errors():
    with pytest.raises(ValueError):
        integrals.semicircle_incomplete_moment(0, 2.5)
    with pytest.raises(ValueError):
        integrals.semicircle_incomplete_moment(3, 0.0)


# ---------------------------------------------------------------------------
# J values


def test_j_requires_positive_noise_scale():
    with pytest.raises(ValueError):
        integrals.J(0.0, 0.1, 0.5)
    with pytest.raises(ValueError):
        integrals.J(-0.2, 0.1, 0.5)
    with pytest.raises(ValueError):
        integrals.J(0.5, 0.1, 0.0)


def test_j_vanishes_above_the_support():
    law = spectral.spectral_law(0.5, 0.5)
    assert integrals.J(0.5, law.support_top + 1e-9, 0.5) == 0.0
    assert integrals.J(0.5, 10.0, 0.5) == 0.0


def test_j_equals_full_second_moment_below_the_support():
    # for b below the whole support, (x-b)^2 is integrated against all of mu:
    # J = (1 + ks + a^2) - 2 b sqrt(ks) + b^2
    for ks, a, b in [(0.5, 0.5, -5.0), (2.0, 0.3, -4.0), (1.0, 1.0, -6.0)]:
        ref = (1.0 + ks + a * a) - 2.0 * b * np.sqrt(ks) + b * b
        assert integrals.J(a, b, ks) == pytest.approx(ref, rel=1e-9)


def test_j_monotone_decreasing_in_b():
    values = [integrals.J(0.5, b, 0.5) for b in (-1.0, 0.0, 0.5, 1.0, 2.0, 4.0)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_j_frozen_value_near_bulk_merger():
    assert integrals.J(0.0441, 0.3, 0.5) == pytest.approx(1.121339372702, abs=1e-9)


def test_j_continuous_across_the_small_noise_switch():
    s = integrals.SMALL_A_SWITCH
    for b in (-0.5, 0.0, 0.05):
        lo = integrals.J(0.99 * s, b, 0.5)
        hi = integrals.J(1.01 * s, b, 0.5)
        assert lo == pytest.approx(hi, rel=1e-5)


def test_j_against_finite_size_monte_carlo():
    a, b, ks, d = 0.5, 0.3, 0.5, 2000
    rng = np.random.default_rng(11)
    m_star = int(round(ks * d))
    w = rng.standard_normal((m_star, d))
    mat = w.T @ w / np.sqrt(m_star * d)
    g = rng.standard_normal((d, d))
    mat += a * (g + g.T) / np.sqrt(2.0 * d)
    eigs = np.linalg.eigvalsh(mat)
    emp = float(np.mean(np.clip(eigs - b, 0.0, None) ** 2))
    assert integrals.J(a, b, ks) == pytest.approx(emp, rel=0.01)


def test_j_against_direct_density_quadrature():
    # independent route: scipy.quad against the pointwise density
    a, b, ks = 0.6, 0.4, 0.8
    law = spectral.spectral_law(ks, a)
    lo, hi = law.bulks[0]
    ref, err = sp_integrate.quad(
        lambda x: (x - b) ** 2 * spectral.density(x, law),
        max(b, lo), hi, limit=200,
    )
    assert integrals.J(a, b, ks) == pytest.approx(ref, abs=max(1e-8, 10 * err))


# ---------------------------------------------------------------------------
# partial derivatives


def test_partials_default_route_is_analytic():
    jp = integrals.J_partials(0.5, 0.3, 0.5)
    assert jp.fd_step == 0.0
    assert jp.value == pytest.approx(integrals.J(0.5, 0.3, 0.5), rel=1e-12)
    assert jp.d_a == pytest.approx(0.5966080997, abs=1e-8)
    assert jp.d_b <= 0.0


@pytest.mark.parametrize(
    "a,b,ks", [(0.5, 0.3, 0.5), (0.8, -0.2, 1.0), (0.4, 1.5, 2.0), (1.2, 0.0, 0.25)]
)
def test_analytic_partials_match_centered_differences(a, b, ks):
    jp = integrals.J_partials(a, b, ks)
    fd = integrals.J_partials(a, b, ks, fd_step=1e-6)
    assert jp.d_a == pytest.approx(fd.d_a, abs=5e-6)
    assert jp.d_b == pytest.approx(fd.d_b, abs=5e-6)


def test_finite_difference_step_stability():
    # away from bulk mergers the fd estimate is stable in the step size
    for a, b, ks in [(0.5, 0.3, 0.5), (0.8, -0.2, 1.0), (0.4, 1.5, 2.0)]:
        f8 = integrals.J_partials(a, b, ks, fd_step=1e-8)
        f6 = integrals.J_partials(a, b, ks, fd_step=1e-6)
        assert abs(f8.d_a - f6.d_a) < 1e-4
        assert abs(f8.d_b - f6.d_b) < 1e-4
        assert f8.fd_step == 1e-8 and f6.fd_step == 1e-6


def test_fd_route_requires_room_for_the_stencil():
    with pytest.raises(ValueError):
        integrals.J_partials(1e-9, 0.3, 0.5, fd_step=1e-8)


def test_db_matches_independent_tail_first_moment():
    # dJ/db = -2 int_b (x - b) dmu, computed here with scipy.quad
    a, b, ks = 0.7, 0.5, 0.5
    law = spectral.spectral_law(ks, a)
    parts = []
    for lo, hi in law.bulks:
        if hi <= b:
            continue
        val, _ = sp_integrate.quad(
            lambda x: (x - b) * spectral.density(x, law), max(b, lo), hi, limit=200
        )
        parts.append(val)
    ref = -2.0 * sum(parts)
    assert integrals.J_partials(a, b, ks).d_b == pytest.approx(ref, abs=1e-5)


def test_da_is_stable_near_the_bulk_merger():
    # centered differences straddle quadrature panel changes here; the
    # analytic route must stay consistent with a coarse, safe difference
    a, b, ks = 0.0907, 0.0607, 0.5
    jp = integrals.J_partials(a, b, ks)
    h = 2e-3
    coarse = (integrals.J(a + h, b, ks) - integrals.J(a - h, b, ks)) / (2.0 * h)
    assert jp.d_a == pytest.approx(coarse, abs=5e-4)


def test_tail_moments_matches_j_partials():
    for a, b, ks in [(0.5, 0.3, 0.5), (0.2, 1.0, 1.5)]:
        j, j1, j2 = integrals.tail_moments(a, b, ks)
        jp = integrals.J_partials(a, b, ks)
        assert j == pytest.approx(jp.value, rel=1e-12)
        assert j1 == pytest.approx(jp.d_a, rel=1e-12)
        assert j2 == pytest.approx(jp.d_b, rel=1e-12, abs=1e-15)


def test_small_noise_closed_form_matches_quadrature():
    # just above the switch the quadrature route must agree with the
    # closed-form expansion used just below it
    ks = 0.5
    b = 0.0
    a = 1.2 * integrals.SMALL_A_SWITCH
    j_quad, j1_quad, j2_quad = integrals.tail_moments(a, b, ks)
    j_cf, j1_cf, j2_cf = integrals._small_a_values(a, b, ks)
    assert j_quad == pytest.approx(j_cf, rel=1e-6)
    assert j1_quad == pytest.approx(j1_cf, rel=1e-3, abs=1e-6)
    assert j2_quad == pytest.approx(j2_cf, rel=1e-6)
