"""Spectral density of the target-plus-noise eigenvalue law.

The target matrix S* = W*^T W* / sqrt(m* d) has, for d -> infinity at fixed
width ratio kappa_star = m*/d, a rescaled Marchenko-Pastur eigenvalue law
``mu_star`` with mean sqrt(kappa_star) and variance 1.  The objects computed
here describe its additive free convolution with a semicircle of radius
2*delta,

    mu = mu_star [+] semicircle(delta),

which is simultaneously (i) the large-d eigenvalue law of S* + delta*G with G
a GOE matrix and (ii) the effective-noise law entering the asymptotic theory
of the regularized estimator.

The Stieltjes transform g(z) = int mu(dx) / (z - x) of the convolution solves
a cubic polynomial in g whose coefficients are affine in z; the density
follows from the inversion formula rho(x) = Im g(x - i*tau) / pi evaluated
just below the real axis.  Support edges are located as real roots of the
cubic's discriminant (a quartic in x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial

# Imaginary offset for evaluating the transform just below the real axis.
INVERSION_OFFSET = 1e-12
# Density level separating "inside a bulk" from "outside" during edge checks.
EDGE_DENSITY_TOL = 1e-6


class DegenerateCubicError(ValueError):
    """Leading cubic coefficient underflowed; use the delta = 0 branch."""


class EdgeDetectionError(RuntimeError):
    """Support-edge search failed; carries the candidate discriminant roots."""


class QuadratureError(RuntimeError):
    """Panel quadrature failed to stabilize; names the offending bulk."""


@dataclass(frozen=True)
class SpectralLaw:
    """Descriptor of the convolved eigenvalue law.

    Attributes
    ----------
    kappa_star : float
        Target width ratio m*/d (> 0).
    delta : float
        Semicircle radius parameter (>= 0); the convolving semicircle has
        support [-2*delta, 2*delta] and variance delta**2.
    atoms : tuple of (location, mass)
        Point masses.  Empty for delta > 0; for delta = 0 and
        kappa_star < 1 there is a single atom at 0 with mass 1 - kappa_star.
    bulks : tuple of (low, high)
        Disjoint, sorted support intervals of the continuous part
        (at most two).
    """

    kappa_star: float
    delta: float
    atoms: tuple[tuple[float, float], ...]
    bulks: tuple[tuple[float, float], ...]

    @property
    def support_top(self) -> float:
        return self.bulks[-1][1]

    @property
    def support_bottom(self) -> float:
        lo = self.bulks[0][0]
        return min([lo] + [x for x, _ in self.atoms])


def mp_edges(kappa_star: float) -> tuple[float, float]:
    """Support edges of the pure (delta = 0) continuous part."""
    s = np.sqrt(kappa_star)
    return s + 1.0 / s - 2.0, s + 1.0 / s + 2.0


@lru_cache(maxsize=4096)
def spectral_law(kappa_star: float, delta: float) -> SpectralLaw:
    """Build a SpectralLaw, locating bulks (and the delta = 0 atom)."""
    if kappa_star <= 0:
        raise ValueError(f"kappa_star must be positive, got {kappa_star}")
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    if delta == 0.0:
        atoms = ((0.0, 1.0 - kappa_star),) if kappa_star < 1 else ()
        return SpectralLaw(kappa_star, 0.0, atoms, (mp_edges(kappa_star),))
    bulks = _find_bulks(kappa_star, delta)
    return SpectralLaw(kappa_star, delta, (), bulks)


def _cubic_coeffs(z, kappa_star: float, delta: float):
    """Coefficients (c3, c2, c1, c0) of the self-consistency cubic in g.

    The convolution parameter enters through the semicircle *variance*
    a = delta**2 (the free convolution adds variances; the mean stays
    sqrt(kappa_star), checks enforced in the tests).
    """
    s = np.sqrt(kappa_star)
    a = delta * delta
    c3 = a / s
    if c3 == 0.0:
        raise DegenerateCubicError(
            f"cubic leading coefficient underflowed at delta={delta}; "
            "use the delta = 0 closed form"
        )
    return c3, -(z / s + a), z + 1.0 / s - s, -1.0


def _cubic_roots(c3, c2, c1, c0):
    """All three complex roots of c3*g^3 + c2*g^2 + c1*g + c0, vectorized.

    Closed-form (Cardano) solution in complex arithmetic; this is evaluated
    millions of times inside quadratures, so no iterative solver.

    The cubic is solved for h = 1/g (reversed coefficients).  The g-frame
    leading coefficient delta**2/sqrt(kappa_star) can be arbitrarily small,
    leaving one huge root plus a near-degenerate pair that the monic
    normalization cannot resolve, while the h-frame leading coefficient is
    the constant term c0 = -1, so all scales stay balanced.  Requires
    c0 != 0 (g = 0 is never a root here since c0 is identically -1).
    """
    A = np.asarray(c1 / c0, dtype=complex)
    B = np.asarray(c2 / c0, dtype=complex)
    C = np.asarray(c3 / c0, dtype=complex)
    p = B - A * A / 3.0
    q = 2.0 * A**3 / 27.0 - A * B / 3.0 + C
    disc = 0.25 * q * q + p**3 / 27.0
    sq = np.sqrt(disc)
    # pick the cube-root argument with the larger magnitude (avoids cancellation)
    u3a = -0.5 * q + sq
    u3b = -0.5 * q - sq
    u3 = np.where(np.abs(u3a) >= np.abs(u3b), u3a, u3b)
    degenerate = u3 == 0.0  # triple root (p = q = 0)
    u = np.where(degenerate, 1.0, u3) ** (1.0 / 3.0)
    omega = np.exp(2j * np.pi / 3.0)
    roots = []
    for k in range(3):
        uk = u * omega**k
        t = np.where(degenerate, 0.0, uk - p / (3.0 * uk))
        h = t - A / 3.0
        roots.append(1.0 / h)
    g = np.stack(roots, axis=-1)
    # guarded Newton polish on the original cubic in g
    c3e, c2e, c1e, c0e = (np.asarray(c, dtype=complex)[..., None] for c in (c3, c2, c1, c0))

    def _poly(v):
        return ((c3e * v + c2e) * v + c1e) * v + c0e

    val = _poly(g)
    for _ in range(2):
        der = (3.0 * c3e * g + 2.0 * c2e) * g + c1e
        safe = der != 0.0
        step = np.where(safe, val / np.where(safe, der, 1.0), 0.0)
        cand = g - step
        cand_val = _poly(cand)
        # near double roots (support edges) Newton overshoots; keep the step
        # only where it actually reduces the residual
        better = np.abs(cand_val) < np.abs(val)
        g = np.where(better, cand, g)
        val = np.where(better, cand_val, val)
    return g


def stieltjes(z, law: SpectralLaw):
    """Stieltjes transform g(z) = int mu(dx)/(z - x) of the convolved law.

    Evaluate with Im(z) < 0 (z = x - i*tau); the physical branch then has
    Im(g) >= 0 and the far-field expansion g ~ 1/z + sqrt(kappa_star)/z**2.
    Inside the support the branch is the cubic root with the largest
    imaginary part; outside (all roots essentially real) it is the root
    matching the 1/z Laurent tail.

    Accepts scalars or arrays; delta must be positive (the delta = 0 law
    has the closed-form transform of the rescaled Marchenko-Pastur law).
    Arguments in the upper half-plane go through the reflection
    g(conj(z)) = conj(g(z)).
    """
    z_arr = np.asarray(z, dtype=complex)
    upper = z_arr.imag > 0.0
    if np.any(upper):
        g_low = stieltjes(np.where(upper, np.conj(z_arr), z_arr), law)
        g = np.where(upper, np.conj(g_low), g_low)
        return g if g.ndim else complex(g)
    c3, c2, c1, c0 = _cubic_coeffs(np.asarray(z, dtype=complex), law.kappa_star, law.delta)
    roots = _cubic_roots(c3, c2, c1, c0)
    im = roots.imag
    best_im = np.take_along_axis(roots, np.argmax(im, axis=-1)[..., None], axis=-1)[..., 0]
    # outside the support all roots are real up to O(tau); select by the tail
    tail_err = np.abs(roots * np.asarray(z, dtype=complex)[..., None] - 1.0)
    best_tail = np.take_along_axis(roots, np.argmin(tail_err, axis=-1)[..., None], axis=-1)[..., 0]
    g = np.where(best_im.imag > 1e-9, best_im, best_tail)
    return g if g.ndim else complex(g)


def _density_positive_branch(x, kappa_star: float, delta: float):
    """Continuous density at real x for delta > 0 (vectorized, clamped >= 0)."""
    z = np.asarray(x, dtype=complex) - 1j * INVERSION_OFFSET
    c3, c2, c1, c0 = _cubic_coeffs(z, kappa_star, delta)
    roots = _cubic_roots(c3, c2, c1, c0)
    return np.maximum(roots.imag.max(axis=-1), 0.0) / np.pi


def _mp_density(x, kappa_star: float):
    """Closed-form continuous density of the delta = 0 rescaled MP law."""
    x = np.asarray(x, dtype=float)
    s = np.sqrt(kappa_star)
    y = s * x
    y_lo, y_hi = (1.0 - s) ** 2, (1.0 + s) ** 2
    inside = (y > y_lo) & (y < y_hi) & (x > 0)
    out = np.zeros_like(x)
    xs = np.where(inside, x, 1.0)
    ys = np.where(inside, y, 0.5 * (y_lo + y_hi))
    out = np.where(inside, np.sqrt((y_hi - ys) * (ys - y_lo)) / (2.0 * np.pi * xs), 0.0)
    return out


def density(x, law: SpectralLaw):
    """Continuous density of the law at real x (atoms excluded).

    Returns an array matching the shape of x (or a scalar for scalar x);
    nonnegative by construction.
    """
    scalar = np.isscalar(x)
    if law.delta == 0.0:
        rho = _mp_density(x, law.kappa_star)
    else:
        rho = _density_positive_branch(x, law.kappa_star, law.delta)
    return float(rho) if scalar else rho


def _find_bulks(kappa_star: float, delta: float) -> tuple[tuple[float, float], ...]:
    """Support intervals via the real roots of the cubic's discriminant.

    On the real axis the cubic has real coefficients: its discriminant is
    negative exactly where a complex-conjugate root pair exists, i.e. inside
    the support.  The discriminant is a quartic in x, so there are one or
    two bulks.
    """
    s = np.sqrt(kappa_star)
    a = delta * delta
    c3 = Polynomial([a / s])
    c2 = Polynomial([-a, -1.0 / s])
    c1 = Polynomial([1.0 / s - s, 1.0])
    c0 = Polynomial([-1.0])
    disc = (
        18.0 * c3 * c2 * c1 * c0
        - 4.0 * c2**3 * c0
        + c2**2 * c1**2
        - 4.0 * c3 * c1**3
        - 27.0 * c3**2 * c0**2
    )
    roots = disc.roots()
    scale = s + 1.0 / s + 2.0 + 2.0 * delta
    real = np.sort(roots[np.abs(roots.imag) < 1e-7 * scale].real)
    if real.size < 2:
        raise EdgeDetectionError(f"no bracketing discriminant roots: {roots}")
    # keep intervals between consecutive roots where the discriminant is negative
    bulks = []
    for lo, hi in zip(real[:-1], real[1:]):
        if hi - lo < 1e-14 * scale:
            continue
        if disc(0.5 * (lo + hi)) < 0.0:
            bulks.append((float(lo), float(hi)))
    if not bulks:
        raise EdgeDetectionError(f"no negative-discriminant interval among roots {real}")
    bulks = _merge_adjacent(bulks)
    _validate_edges(bulks, kappa_star, delta, disc)
    return tuple(bulks)


def _merge_adjacent(bulks):
    merged = [list(bulks[0])]
    for lo, hi in bulks[1:]:
        if lo <= merged[-1][1] + 1e-13 * max(1.0, abs(hi)):
            merged[-1][1] = hi
        else:
            merged.append([lo, hi])
    return [tuple(b) for b in merged]


def _validate_edges(bulks, kappa_star: float, delta: float, disc) -> None:
    """Probe the discriminant sign and the density just inside each edge.

    Inside the support the resolvent cubic has a complex-conjugate root pair
    (discriminant < 0); in gaps and beyond the extreme edges all three roots
    are real (discriminant > 0).  Sign probes are scale-free, unlike absolute
    density thresholds, which the finite imaginary inversion offset pollutes
    near tall, narrow bulks.
    """
    for i, (lo, hi) in enumerate(bulks):
        width = hi - lo
        step_in = 0.2 * width
        gap_below = lo - bulks[i - 1][1] if i > 0 else np.inf
        gap_above = bulks[i + 1][0] - hi if i + 1 < len(bulks) else np.inf
        probes_in = np.array([lo + step_in, hi - step_in])
        probes_out = np.array(
            [lo - min(1e-4, gap_below / 3.0, width), hi + min(1e-4, gap_above / 3.0, width)]
        )
        disc_in = disc(probes_in)
        disc_out = disc(probes_out)
        rho_in = _density_positive_branch(probes_in, kappa_star, delta)
        if not (np.all(disc_in < 0.0) and np.all(disc_out > 0.0) and np.all(rho_in > 0.0)):
            raise EdgeDetectionError(
                f"edge validation failed for bulk ({lo}, {hi}): "
                f"disc inside {disc_in}, disc outside {disc_out}, density inside {rho_in}"
            )


def bulk_supports(law: SpectralLaw) -> tuple[tuple[float, float], ...]:
    """Support intervals of the continuous part (1 or 2 disjoint bulks)."""
    return law.bulks


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def _integrate_panel(law: SpectralLaw, a: float, b: float, f, edge_sub: bool, rel_tol: float) -> float:
    """Gauss-Legendre over one panel, doubling nodes until stable.

    With edge_sub the panel is mapped through x = a + (b - a) sin^2(theta),
    removing the square-root vanishing of the density at true support edges.
    """
    prev = None
    diff = np.inf
    for n in (48, 96, 192, 384):
        t, w = _gauss_legendre(n)
        if edge_sub:
            theta = (t + 1.0) * (np.pi / 4.0)
            x = a + (b - a) * np.sin(theta) ** 2
            jac = (b - a) * np.sin(2.0 * theta) * (np.pi / 4.0)
        else:
            x = 0.5 * (a + b) + 0.5 * (b - a) * t
            jac = np.full_like(x, 0.5 * (b - a))
        vals = density(x, law)
        if f is not None:
            vals = vals * f(x)
        est = float(np.dot(w, vals * jac))
        if prev is not None:
            diff = abs(est - prev)
            if diff <= max(1e-14, rel_tol * abs(est)):
                return est, 0.0
        prev = est
    return prev, diff


def _integrate_adaptive(law: SpectralLaw, a: float, b: float, f, edge_lo: bool,
                        edge_hi: bool, rel_tol: float, depth: int) -> float:
    """Panel integral with bisection fallback for unresolved interior structure.

    A merged bulk can hide smoothed-out internal edges (e.g. the delta = 0
    support boundary washed over by a small delta) at interior points no
    fixed panel decomposition anticipates; bisecting the offending panel
    localizes the feature until plain Gauss-Legendre converges on each half.
    """
    est, resid = _integrate_panel(law, a, b, f, edge_lo or edge_hi, rel_tol)
    if resid <= max(1e-10, 1e-6 * abs(est)):
        return est
    if depth >= 24 or (b - a) <= 1e-13 * max(abs(a), abs(b), 1.0):
        raise QuadratureError(
            f"quadrature did not stabilize on panel ({a}, {b}) at depth {depth}: "
            f"last refinement changed by {resid:.3e}"
        )
    mid = 0.5 * (a + b)
    # edge regularization only stays meaningful on the half still touching it
    return (_integrate_adaptive(law, a, mid, f, edge_lo, False, rel_tol, depth + 1)
            + _integrate_adaptive(law, mid, b, f, False, edge_hi, rel_tol, depth + 1))


def integrate_density(law: SpectralLaw, lo: float, hi: float, f=None, rel_tol: float = 1e-12) -> float:
    """Integrate f(x) * density(x) over [lo, hi] intersected with the bulks.

    Each bulk is split into two edge panels of width ~6*delta (where the
    density develops structure on the noise scale) and one interior panel;
    edge panels use the sin^2 substitution that regularizes the edges, the
    interior relies on the endpoint clustering of Gauss-Legendre nodes and
    on adaptive bisection when a panel hides interior structure.
    """
    interior = _structural_cuts(law)
    total = 0.0
    for b_lo, b_hi in law.bulks:
        a, b = max(lo, b_lo), min(hi, b_hi)
        if a >= b:
            continue
        width = b_hi - b_lo
        w_edge = width if (law.delta == 0.0 or law.delta >= width / 6.0) else 6.0 * law.delta
        inner = [c for c in interior if a < c < b]
        cuts = sorted({a, b, *np.clip([b_lo + w_edge, b_hi - w_edge], a, b), *inner})
        for p_lo, p_hi in zip(cuts[:-1], cuts[1:]):
            if p_hi - p_lo <= 0.0:
                continue
            total += _integrate_adaptive(law, p_lo, p_hi, f, p_lo == b_lo,
                                         p_hi == b_hi, rel_tol, 0)
    return total


def _structural_cuts(law: SpectralLaw) -> tuple[float, ...]:
    """Interior points where a merged bulk hides washed-out spectral edges.

    Just past bulk merging the density keeps near-square-root kinks around
    the delta = 0 support boundaries (the Marchenko-Pastur edges and, for
    kappa_star < 1, the rim of the smeared zero-eigenvalue semicircle);
    cutting there lets each panel see at most one such feature.
    """
    if law.delta <= 0.0:
        return ()
    cuts = list(mp_edges(law.kappa_star))
    if law.kappa_star < 1.0:
        r = 2.0 * law.delta * math.sqrt(1.0 - law.kappa_star)
        cuts += [-r, r]
    return tuple(cuts)


def density_quadrature(
    law: SpectralLaw, n_per_panel: int = 256, cuts: tuple[float, ...] = ()
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-depth quadrature grid (x, w) with sum w_i f(x_i) ~ int f d(mu).

    Uses the same panel decomposition as integrate_density (edge panels with
    the sin^2 substitution) but at a fixed node count, returning nodes and
    weights that already include the density.  Extra interior cut points can
    be supplied to align panels with kinks of the integrand (e.g. a shrinkage
    threshold).  Atoms are not included.
    """
    xs, ws = [], []
    t, w = _gauss_legendre(n_per_panel)
    for b_lo, b_hi in law.bulks:
        width = b_hi - b_lo
        w_edge = width if (law.delta == 0.0 or law.delta >= width / 6.0) else 6.0 * law.delta
        inner = [c for c in cuts if b_lo < c < b_hi]
        points = sorted({b_lo, b_hi, *np.clip([b_lo + w_edge, b_hi - w_edge], b_lo, b_hi), *inner})
        for p_lo, p_hi in zip(points[:-1], points[1:]):
            if p_hi - p_lo <= 0.0:
                continue
            if p_lo == b_lo:
                theta = (t + 1.0) * (np.pi / 4.0)
                x = p_lo + (p_hi - p_lo) * np.sin(theta) ** 2
                jac = (p_hi - p_lo) * np.sin(2.0 * theta) * (np.pi / 4.0)
            elif p_hi == b_hi:
                theta = (t + 1.0) * (np.pi / 4.0)
                x = p_hi - (p_hi - p_lo) * np.sin(theta) ** 2
                jac = (p_hi - p_lo) * np.sin(2.0 * theta) * (np.pi / 4.0)
            else:
                x = 0.5 * (p_lo + p_hi) + 0.5 * (p_hi - p_lo) * t
                jac = np.full_like(x, 0.5 * (p_hi - p_lo))
            xs.append(x)
            ws.append(w * jac * density(x, law))
    return np.concatenate(xs), np.concatenate(ws)


def cdf(x: float, law: SpectralLaw) -> float:
    """Distribution function F(x) = mu((-inf, x]) including atoms."""
    total = sum(mass for loc, mass in law.atoms if loc <= x)
    if x >= law.support_top:
        return min(1.0, total + integrate_density(law, law.bulks[0][0] - 1.0, law.support_top))
    total += integrate_density(law, law.bulks[0][0] - 1.0, x)
    return float(np.clip(total, 0.0, 1.0))
