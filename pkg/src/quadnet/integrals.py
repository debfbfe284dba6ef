"""Truncated second moments of the noisy spectral law.

The central object is

    J(a, b) = int_b^inf  mu_a(x) (x - b)^2 dx,

where mu_a is the spectral law of spectral.spectral_law(kappa_star, a):
the rescaled Marchenko-Pastur law freely convolved with a semicircle of
radius 2a.  J and its partial derivatives J1 = dJ/da, J2 = dJ/db carry all
the spectrum dependence of the state-evolution equations: a plays the role
of the effective noise level and b the role of the eigenvalue shrinkage
threshold.

Evaluation strategy
-------------------
* Moderate a: per-bulk panel quadrature against the exact density, with
  edge panels resolving the square-root edge behaviour (spectral module).
* Small a (below ``SMALL_A_SWITCH``, with b safely below the bulk of the
  Marchenko-Pastur component): closed-form expansion.  The zero eigenvalues
  of the target (mass w = 1 - kappa_star, present for kappa_star < 1) smear
  into a mini semicircle bulk of radius 2a*sqrt(w); its contribution below b
  reduces to incomplete semicircle moments, and everything above b follows
  from the full-moment identity

      J(a, b) = Q* + a^2 - 2 b sqrt(kappa_star) + b^2 - I_below,

  with Q* = 1 + kappa_star the second moment of the noiseless law.

dJ/da is computed analytically from the free heat flow of the law: with
t = a^2 the density obeys d rho/dt = -d/dx (rho h), h = Re g on the real
axis, which after integrating by parts gives

    dJ/da = 4a int_b^inf (x - b) rho(x) h(x) dx.

The public ``J_partials`` instead uses plain centered finite differences
with step 1e-8 (the convention of the reference numerics this library
reproduces); the analytic route backs the fixed-point solver and the
cross-checks in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import spectral

# Below this noise level the mini-bulk (width ~ a) would need its own
# dedicated panels while its contribution is already captured to O(a^3)
# by the closed-form expansion, so the expansion takes over.
SMALL_A_SWITCH = 1e-4
# Margin (in units of a) kept between b and the Marchenko-Pastur lower edge
# for the expansion to be valid: b must not probe the main bulk.
EDGE_MARGIN = 3.0

__all__ = [
    "JEvaluation",
    "J",
    "J_partials",
    "semicircle_incomplete_moment",
    "tail_moments",
    "SMALL_A_SWITCH",
]


@dataclass(frozen=True)
class JEvaluation:
    """J together with its two partial derivatives.

    Attributes
    ----------
    value : float
        J(a, b) >= 0.
    d_a : float
        Partial derivative of J in the first argument.
    d_b : float
        Partial derivative in the second argument; J is nonincreasing
        in b, so d_b <= 0 (clamped against quadrature noise).
    fd_step : float
        Finite-difference step used for the partials, 0.0 when they
        come from the analytic quadrature route (the default).
    """

    value: float
    d_a: float
    d_b: float
    fd_step: float


def semicircle_incomplete_moment(k: int, x: float) -> float:
    """Incomplete moment M_k(x) = int_{-2}^x u^k sqrt(4-u^2)/(2 pi) du.

    Closed forms for the unit-variance (radius-2) semicircle, k in {0,1,2}:
    M_0(2) = 1, M_1(2) = 0, M_2(2) = 1.
    """
    if not -2.0 <= x <= 2.0:
        raise ValueError(f"argument must lie in [-2, 2], got {x}")
    if k == 0:
        return 0.5 + x * np.sqrt(4.0 - x * x) / (4.0 * np.pi) + np.arcsin(0.5 * x) / np.pi
    if k == 1:
        return -((4.0 - x * x) ** 1.5) / (6.0 * np.pi)
    if k == 2:
        return (
            2.0 * np.arcsin(0.5 * x)
            + np.pi
            - x * (2.0 - x * x) * np.sqrt(4.0 - x * x) / 4.0
        ) / (2.0 * np.pi)
    raise ValueError(f"moment order must be 0, 1 or 2, got {k}")


def _moments_clipped(c: float) -> tuple[float, float, float]:
    """(M_0, M_1, M_2) with the argument clipped to the semicircle support."""
    c = float(np.clip(c, -2.0, 2.0))
    return (
        semicircle_incomplete_moment(0, c),
        semicircle_incomplete_moment(1, c),
        semicircle_incomplete_moment(2, c),
    )


def _small_a_applicable(a: float, b: float, kappa_star: float) -> bool:
    """True when the closed-form expansion of J is valid at (a, b)."""
    if a >= SMALL_A_SWITCH:
        return False
    mp_lo, _ = spectral.mp_edges(kappa_star)
    return b <= mp_lo - EDGE_MARGIN * a


def _small_a_values(a: float, b: float, kappa_star: float) -> tuple[float, float, float]:
    """(J, dJ/da, dJ/db) from the mini-bulk expansion (see module docstring)."""
    q_star = 1.0 + kappa_star
    sk = np.sqrt(kappa_star)
    w = 1.0 - kappa_star
    if w <= 0.0:
        # no zero eigenvalues: nothing below b at all
        j = q_star + a * a - 2.0 * b * sk + b * b
        return j, 2.0 * a, -2.0 * (sk - b)
    scale = a * np.sqrt(w)
    m0, m1, m2 = _moments_clipped(b / scale if scale > 0.0 else np.inf * np.sign(b))
    i_below = w * w * a * a * m2 - 2.0 * a * b * w ** 1.5 * m1 + w * b * b * m0
    j = q_star + a * a - 2.0 * b * sk + b * b - i_below
    j1 = 2.0 * a - 2.0 * a * w * w * (m2 - (b / scale) * m1 if scale > 0.0 else m2)
    j2 = -2.0 * (sk - a * w ** 1.5 * m1 - b * (1.0 - w * m0))
    return j, j1, j2


def _quadrature_values(
    a: float, b: float, kappa_star: float, rel_tol: float
) -> tuple[float, float, float]:
    """(J, dJ/da, dJ/db) by panel quadrature against the exact density."""
    law = spectral.spectral_law(kappa_star, a)
    top = law.support_top
    if b >= top:
        return 0.0, 0.0, 0.0
    lo = b
    j = spectral.integrate_density(law, lo, top, f=lambda x: (x - b) ** 2, rel_tol=rel_tol)

    def _flow(x):
        g = spectral.stieltjes(x - 1j * spectral.INVERSION_OFFSET, law)
        return (x - b) * np.real(g)

    j1 = 4.0 * a * spectral.integrate_density(law, lo, top, f=_flow, rel_tol=rel_tol)
    j2 = -2.0 * spectral.integrate_density(law, lo, top, f=lambda x: x - b, rel_tol=rel_tol)
    return max(j, 0.0), j1, min(j2, 0.0)


@lru_cache(maxsize=1 << 18)
def _tail_moments_cached(
    a_key: str, b_key: str, k_key: str, rel_tol: float
) -> tuple[float, float, float]:
    a, b, kappa_star = float(a_key), float(b_key), float(k_key)
    if _small_a_applicable(a, b, kappa_star):
        return _small_a_values(a, b, kappa_star)
    return _quadrature_values(a, b, kappa_star, rel_tol)


@lru_cache(maxsize=1 << 18)
def _j_value_cached(a_key: str, b_key: str, k_key: str, rel_tol: float) -> float:
    a, b, kappa_star = float(a_key), float(b_key), float(k_key)
    if _small_a_applicable(a, b, kappa_star):
        return _small_a_values(a, b, kappa_star)[0]
    law = spectral.spectral_law(kappa_star, a)
    if b >= law.support_top:
        return 0.0
    j = spectral.integrate_density(
        law, b, law.support_top, f=lambda x: (x - b) ** 2, rel_tol=rel_tol
    )
    return max(j, 0.0)


def tail_moments(
    a: float, b: float, kappa_star: float, rel_tol: float = 1e-12
) -> tuple[float, float, float]:
    """(J, dJ/da, dJ/db) at (a, b); memoized on 12 significant digits."""
    if not a > 0.0:
        raise ValueError(f"noise parameter must be positive, got {a}")
    if kappa_star <= 0.0:
        raise ValueError(f"kappa_star must be positive, got {kappa_star}")
    return _tail_moments_cached(
        "%.12g" % a, "%.12g" % b, "%.12g" % kappa_star, float(rel_tol)
    )


def J(a: float, b: float, kappa_star: float, rel_tol: float = 1e-12) -> float:
    """Truncated second moment J(a, b) = int_b^inf mu_a(x)(x-b)^2 dx."""
    if not a > 0.0:
        raise ValueError(f"noise parameter must be positive, got {a}")
    if kappa_star <= 0.0:
        raise ValueError(f"kappa_star must be positive, got {kappa_star}")
    return _j_value_cached("%.12g" % a, "%.12g" % b, "%.12g" % kappa_star, float(rel_tol))


def J_partials(
    a: float, b: float, kappa_star: float, fd_step: float | None = None
) -> JEvaluation:
    """J with its partial derivatives.

    By default the partials come from the same quadrature as J itself:
    dJ/db = -2 int_b (x - b) dmu_a, and dJ/da through the semicircle
    free-convolution flow, dJ/da = 4a int_b (x - b) Re g_a(x) dmu_a(x).
    Both are exact identities and stay smooth where centered differences
    of J jitter (the quadrature panel layout changes with a near bulk
    mergers).  Passing fd_step switches to centered finite differences of
    that step, the cross-check route.
    """
    if fd_step is None:
        if not a > 0.0:
            raise ValueError(f"noise parameter must be positive, got a={a}")
        value, d_a, d_b = tail_moments(a, b, kappa_star)
        return JEvaluation(value=max(value, 0.0), d_a=d_a, d_b=min(d_b, 0.0), fd_step=0.0)
    if not a > 2.0 * fd_step:
        raise ValueError(
            f"noise parameter must exceed twice the difference step, got a={a}"
        )
    h = fd_step
    value = J(a, b, kappa_star)
    d_a = (J(a + h, b, kappa_star) - J(a - h, b, kappa_star)) / (2.0 * h)
    d_b = (J(a, b + h, kappa_star) - J(a, b - h, kappa_star)) / (2.0 * h)
    return JEvaluation(value=max(value, 0.0), d_a=d_a, d_b=min(d_b, 0.0), fd_step=h)
