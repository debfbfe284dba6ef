"""Tests of the convolved eigenvalue law: support location, density values,
moment identities, the Stieltjes transform, quadrature, and agreement with
finite-size spectra.
"""

import numpy as np
import pytest

from quadnet import spectral


def law_moments(law):
    """(mass, mean, second moment) of the continuous part by quadrature."""
    lo = law.support_bottom - 1.0
    hi = law.support_top
    mass = spectral.integrate_density(law, lo, hi)
    mean = spectral.integrate_density(law, lo, hi, f=lambda x: x)
    m2 = spectral.integrate_density(law, lo, hi, f=lambda x: x * x)
    return mass, mean, m2


def law_cdf_interp(law, n_per_panel=512):
    """Fast CDF evaluator built from one quadrature grid pass."""
    x, w = spectral.density_quadrature(law, n_per_panel=n_per_panel)
    order = np.argsort(x)
    x, w = x[order], w[order]
    cum = np.cumsum(w)

    def f(t):
        base = sum(mass for loc, mass in law.atoms if loc <= np.min(t))
        return base + np.interp(t, x, cum, left=0.0, right=cum[-1])

    return f


# ---------------------------------------------------------------------------
# support structure


def test_mp_edges_match_closed_form():
    for ks in (0.1, 0.5, 1.0, 2.0, 5.0):
        lo, hi = spectral.mp_edges(ks)
        s = np.sqrt(ks)
        assert lo == pytest.approx(s + 1.0 / s - 2.0, abs=1e-14)
        assert hi == pytest.approx(s + 1.0 / s + 2.0, abs=1e-14)


def test_zero_width_law_has_atom_only_below_full_rank():
    law = spectral.spectral_law(0.5, 0.0)
    assert law.atoms == ((0.0, 0.5),)
    assert law.bulks == (spectral.mp_edges(0.5),)
    for ks in (1.0, 2.0):
        assert spectral.spectral_law(ks, 0.0).atoms == ()


def test_small_widening_splits_the_atom_into_a_mini_bulk():
    # below full rank the zero eigenvalues spread into a bulk of half-width
    # 2*delta*sqrt(1 - kappa_star), up to O(delta) relative corrections
    for ks, de in [(0.5, 0.05), (0.1, 0.1), (0.5, 0.02)]:
        law = spectral.spectral_law(ks, de)
        assert len(law.bulks) == 2
        (lo0, hi0), (lo1, hi1) = law.bulks
        assert lo0 < 0.0 < hi0 < lo1
        half_width = 2.0 * de * np.sqrt(1.0 - ks)
        assert abs(-lo0 - half_width) < de * half_width
        assert abs(hi0 - half_width) < de * half_width


def test_bulks_merge_at_large_width():
    assert len(spectral.spectral_law(0.5, 0.13).bulks) == 2
    assert len(spectral.spectral_law(0.5, 0.14).bulks) == 1
    assert len(spectral.spectral_law(0.5, 2.0).bulks) == 1


def test_full_rank_laws_have_a_single_bulk():
    for ks, de in [(1.0, 0.01), (2.0, 0.05), (5.0, 1.0), (1.5, 0.7)]:
        assert len(spectral.spectral_law(ks, de).bulks) == 1


def test_bulk_edges_bracket_the_density_support():
    # the density is tiny just outside each edge and sizable just inside
    for ks, de in [(0.5, 0.05), (0.5, 0.5), (2.0, 0.3)]:
        law = spectral.spectral_law(ks, de)
        for lo, hi in law.bulks:
            width = hi - lo
            assert spectral.density(lo - 1e-3 * width, law) < 1e-4
            assert spectral.density(hi + 1e-3 * width, law) < 1e-4
            assert spectral.density(lo + 0.05 * width, law) > 1e-3
            assert spectral.density(hi - 0.05 * width, law) > 1e-3


def test_invalid_parameters_raise():
    with pytest.raises(ValueError):
        spectral.spectral_law(0.0, 0.1)
    with pytest.raises(ValueError):
        spectral.spectral_law(-1.0, 0.1)
    with pytest.raises(ValueError):
        spectral.spectral_law(0.5, -0.1)


# ---------------------------------------------------------------------------
# density values


def test_zero_width_density_matches_marchenko_pastur_closed_form():
    # rho(x) = sqrt(kappa*) sqrt((e+ - x)(x - e-)) / (2 pi x) on [e-, e+]
    for ks in (0.5, 1.0, 2.0):
        law = spectral.spectral_law(ks, 0.0)
        e_lo, e_hi = spectral.mp_edges(ks)
        for frac in (0.1, 0.3, 0.5, 0.7, 0.9):
            x = e_lo + frac * (e_hi - e_lo)
            ref = np.sqrt(ks) * np.sqrt((e_hi - x) * (x - e_lo)) / (2.0 * np.pi * x)
            assert spectral.density(x, law) == pytest.approx(ref, rel=1e-10)


def test_density_nonnegative_and_zero_outside_support():
    law = spectral.spectral_law(0.5, 0.3)
    xs = np.linspace(law.support_bottom - 1.0, law.support_top + 1.0, 201)
    for x in xs:
        rho = spectral.density(x, law)
        assert rho >= 0.0
        inside = any(lo <= x <= hi for lo, hi in law.bulks)
        if not inside:
            assert rho < 1e-6


def test_density_integrates_against_plemelj_branch():
    # density equals Im g(x - i0+)/pi for the root with positive imaginary part
    law = spectral.spectral_law(0.8, 0.4)
    lo, hi = law.bulks[0]
    for x in np.linspace(lo + 0.1, hi - 0.1, 7):
        g = spectral.stieltjes(x - 1j * spectral.INVERSION_OFFSET, law)
        assert spectral.density(x, law) == pytest.approx(g.imag / np.pi, rel=1e-8)


# ---------------------------------------------------------------------------
# moment identities: mass min(1, kappa*) + atom, mean sqrt(kappa*),
# second moment (1 + kappa*) + delta^2


@pytest.mark.parametrize("ks", [0.1, 0.5, 1.0, 2.0, 5.0])
@pytest.mark.parametrize("de", [0.01, 0.1, 0.5, 1.0, 2.0])
def test_moment_identities_on_grid(ks, de):
    law = spectral.spectral_law(ks, de)
    mass, mean, m2 = law_moments(law)
    assert abs(mass - 1.0) < 1e-6
    assert abs(mean - np.sqrt(ks)) < 1e-6
    assert abs(m2 - (1.0 + ks + de * de)) < 1e-6


def test_mass_is_conserved_through_the_bulk_merger():
    for de in (0.12, 0.125, 0.13, 0.135, 0.14, 0.15):
        law = spectral.spectral_law(0.5, de)
        mass, _, _ = law_moments(law)
        assert abs(mass - 1.0) < 1e-8, f"mass off by {mass - 1.0:.2e} at delta={de}"


def test_zero_width_continuous_mass_is_rank_fraction():
    for ks in (0.25, 0.5, 1.0, 2.0):
        law = spectral.spectral_law(ks, 0.0)
        mass, _, _ = law_moments(law)
        assert abs(mass - min(1.0, ks)) < 1e-9


# ---------------------------------------------------------------------------
# Stieltjes transform


def test_stieltjes_laurent_tail():
    # g(z) = 1/z + m1/z^2 + m2/z^3 + O(z^-4) far from the support
    for ks, de in [(0.5, 0.5), (2.0, 0.3)]:
        law = spectral.spectral_law(ks, de)
        m1 = np.sqrt(ks)
        m2 = 1.0 + ks + de * de
        for z in (60.0, -55.0, 40.0 + 30.0j):
            g = spectral.stieltjes(z, law)
            tail = 1.0 / z + m1 / z**2 + m2 / z**3
            assert abs(g - tail) < 40.0 / abs(z) ** 4


def test_stieltjes_physical_branch_inside_support():
    law = spectral.spectral_law(0.5, 0.5)
    lo, hi = law.bulks[0]
    for x in np.linspace(lo + 0.2, hi - 0.2, 9):
        g = spectral.stieltjes(x - 1j * spectral.INVERSION_OFFSET, law)
        assert g.imag > 0.0


def test_stieltjes_real_and_monotone_outside_support():
    law = spectral.spectral_law(1.0, 0.2)
    hi = law.support_top
    values = [spectral.stieltjes(hi + s - 0j, law).real for s in (0.1, 0.5, 1.0, 3.0)]
    assert all(v > 0.0 for v in values)
    assert values == sorted(values, reverse=True)
    lo = law.support_bottom
    values = [spectral.stieltjes(lo - s - 0j, law).real for s in (0.1, 0.5, 1.0)]
    assert all(v < 0.0 for v in values)


def test_stieltjes_solves_its_own_cubic():
    # residual of the self-consistency cubic at the selected root is ~ 0
    for ks, de in [(0.5, 0.4), (2.0, 0.8)]:
        law = spectral.spectral_law(ks, de)
        for z in (3.0 - 0.5j, -1.0 - 1.0j, 0.5 - 2.0j):
            g = spectral.stieltjes(z, law)
            c3, c2, c1, c0 = spectral._cubic_coeffs(z, ks, de)
            resid = ((c3 * g + c2) * g + c1) * g + c0
            assert abs(resid) < 1e-9 * max(1.0, abs(c0))


# ---------------------------------------------------------------------------
# quadrature


def test_integrate_density_partial_ranges_sum_to_total():
    law = spectral.spectral_law(0.5, 0.3)
    lo = law.support_bottom - 0.5
    hi = law.support_top
    mid = 1.0
    total = spectral.integrate_density(law, lo, hi)
    left = spectral.integrate_density(law, lo, mid)
    right = spectral.integrate_density(law, mid, hi)
    assert left + right == pytest.approx(total, abs=1e-10)


def test_density_quadrature_matches_integrate_density():
    for ks, de in [(0.5, 0.5), (0.5, 0.05), (2.0, 0.3)]:
        law = spectral.spectral_law(ks, de)
        x, w = spectral.density_quadrature(law)
        assert abs(w.sum() - 1.0) < 1e-8
        assert abs((w * x).sum() - np.sqrt(ks)) < 1e-8
        assert abs((w * x * x).sum() - (1.0 + ks + de * de)) < 1e-7


def test_density_quadrature_honors_interior_cuts():
    law = spectral.spectral_law(0.5, 0.5)
    cut = 1.3
    x, w = spectral.density_quadrature(law, cuts=(cut,))
    ref = spectral.integrate_density(law, cut, law.support_top, f=lambda t: (t - cut) ** 2)
    val = float(np.sum(w * np.maximum(x - cut, 0.0) ** 2))
    assert val == pytest.approx(ref, rel=1e-9)


# ---------------------------------------------------------------------------
# distribution function


def test_cdf_limits_and_monotonicity():
    law = spectral.spectral_law(0.5, 0.4)
    assert spectral.cdf(law.support_bottom - 0.5, law) == pytest.approx(0.0, abs=1e-10)
    assert spectral.cdf(law.support_top, law) == pytest.approx(1.0, abs=1e-8)
    xs = np.linspace(law.support_bottom, law.support_top, 25)
    values = [spectral.cdf(float(x), law) for x in xs]
    assert all(b - a > -1e-12 for a, b in zip(values, values[1:]))


def test_cdf_jumps_by_the_atom_mass_at_zero_width():
    law = spectral.spectral_law(0.5, 0.0)
    lo, _ = spectral.mp_edges(0.5)
    assert spectral.cdf(-1e-9, law) == pytest.approx(0.0, abs=1e-12)
    assert spectral.cdf(0.5 * lo, law) == pytest.approx(0.5, abs=1e-12)


# ---------------------------------------------------------------------------
# agreement with finite-size spectra


def sample_spectrum(ks, de, d, seed):
    """Eigenvalues of W^T W / sqrt(m* d) + delta * GOE(d)."""
    rng = np.random.default_rng(seed)
    m_star = int(round(ks * d))
    w = rng.standard_normal((m_star, d))
    a = w.T @ w / np.sqrt(m_star * d)
    if de > 0:
        b = rng.standard_normal((d, d))
        a = a + de * (b + b.T) / np.sqrt(2.0 * d)
    return np.linalg.eigvalsh(a)


@pytest.mark.parametrize("ks,de", [(0.5, 0.5), (2.0, 0.3), (0.5, 0.05)])
def test_finite_size_spectrum_matches_the_law(ks, de):
    d = 1000
    eigs = np.sort(sample_spectrum(ks, de, d, seed=7))
    cdf = law_cdf_interp(spectral.spectral_law(ks, de))
    theory = cdf(eigs)
    ranks = np.arange(1, d + 1) / d
    ks_stat = float(np.max(np.abs(ranks - theory)))
    assert ks_stat < 0.02, f"KS distance {ks_stat:.4f} at (ks={ks}, de={de})"
