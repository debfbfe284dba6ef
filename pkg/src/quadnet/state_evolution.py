"""State evolution of the regularized quadratic-network estimator.

The high-dimensional limit of the estimator

    S_hat = argmin_{S >= 0}  sum_mu (y_mu - Tr[Z_mu S])^2
            + d*lambda_tilde*Tr[S] + (tau*d/2)*||S||_F^2

is described by six coupled order parameters (m, q, Sigma, m_hat, q_hat,
Sigma_hat) whose fixed point reduces, through the change of variables

    delta = sqrt(q_hat)/m_hat        (effective noise level),
    eps   = 2/m_hat                  (effective shrinkage scale),

to two scalar equations built from the truncated moments J(delta, b) of the
noisy spectral law (integrals module).  All observables follow: the test
error 2*alpha*delta**2 - Delta/2, the training loss density, and the full
singular-value law of the minimizer, which is the eigenvalue law of the
noisy target pushed through eigenvalue shrinkage x -> ReLU(x - eps_hat)
with threshold eps_hat = lambda_tilde * eps.

Two modes are exposed:

* ``regularized``: lambda_tilde > 0 (or lambda_tilde = 0 above the
  interpolation threshold), finite eps.
* ``interpolator``: the lambda -> 0+ limit of the minimal-trace-norm
  interpolator, where eps diverges but eps_hat = lambda_tilde*eps stays
  finite; fixed points are reported in (delta, eps_hat).  In this mode the
  ``eps_bar`` field of the fixed point stores eps_hat itself.

A replicon (replica-symmetry stability) margin is attached to every fixed
point: 2*alpha minus a double integral of the squared difference quotient
of the shrinkage function over the spectral law; a positive margin
certifies local stability of the description.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from . import integrals, spectral

__all__ = [
    "ModelParams",
    "SEState",
    "SEFixedPoint",
    "Observables",
    "SEDivergenceError",
    "SEConvergenceError",
    "ModeError",
    "se_step",
    "solve_fixed_point",
    "solve_interpolator_limit",
    "sweep_alpha",
    "observables",
    "replicon_margin",
]

# Below this effective noise level J evaluations switch to the small-delta
# expansion (integrals module) instead of quadrature on a vanishing bulk.
SMALL_DELTA_SWITCH = integrals.SMALL_A_SWITCH


class SEDivergenceError(RuntimeError):
    """The effective-noise variance q_hat went negative: iteration diverged."""


class SEConvergenceError(RuntimeError):
    """Fixed-point iteration exhausted its iteration budget."""


class ModeError(ValueError):
    """Requested solution mode is inconsistent with the parameters."""


@dataclass(frozen=True)
class ModelParams:
    """Problem parameters of one learning task.

    Attributes
    ----------
    alpha : float
        Sample ratio n/d**2 (> 0).
    kappa_star : float
        Teacher width ratio m*/d (> 0).
    kappa : float
        Student width ratio m/d (>= 1; the theory depends on it only
        through lambda_tilde).
    lam : float
        L2 regularization strength lambda (>= 0).
    Delta : float
        Label noise variance (>= 0).
    tau : float
        Frobenius regularization strength (>= 0); 0 is the headline regime.
    """

    alpha: float
    kappa_star: float
    kappa: float = 1.0
    lam: float = 0.0
    Delta: float = 0.0
    tau: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.kappa_star <= 0:
            raise ValueError(f"kappa_star must be positive, got {self.kappa_star}")
        if self.kappa < 1:
            raise ValueError(f"kappa must be >= 1, got {self.kappa}")
        if self.lam < 0 or self.Delta < 0 or self.tau < 0:
            raise ValueError("lam, Delta and tau must be nonnegative")

    @property
    def lambda_tilde(self) -> float:
        """Effective trace-norm strength sqrt(kappa)*lambda."""
        return math.sqrt(self.kappa) * self.lam

    @property
    def Q_star(self) -> float:
        """Second moment 1 + kappa_star of the noiseless spectral law."""
        return 1.0 + self.kappa_star


@dataclass(frozen=True)
class SEState:
    """The six order parameters (overlaps and their conjugates)."""

    m: float
    q: float
    Sigma: float
    m_hat: float
    q_hat: float
    Sigma_hat: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.m, self.q, self.Sigma, self.m_hat, self.q_hat, self.Sigma_hat])


@dataclass(frozen=True)
class SEFixedPoint:
    """Converged (or flagged) solution of the state evolution.

    ``eps_bar`` holds eps = 2/m_hat in regularized mode and the finite
    product eps_hat = lambda_tilde*eps in interpolator mode.
    """

    delta_bar: float
    eps_bar: float
    state: SEState
    mode: str
    converged: bool
    residual: float
    replicon_margin: float


@dataclass(frozen=True)
class Observables:
    """Scalar observables plus the singular-value density of the minimizer."""

    test_error: float
    train_loss_density: float
    zero_mass: float
    sv_density: object  # callable x -> density of nonzero singular values


def _solve_outputs(m_hat: float, q_hat: float, p: ModelParams):
    """(m, q, Sigma) given the hat variables, via the J-based expressions."""
    if m_hat <= 0:
        raise SEDivergenceError(f"m_hat must be positive, got {m_hat}")
    if q_hat < 0:
        raise SEDivergenceError(f"q_hat went negative ({q_hat}): diverging noise")
    a = math.sqrt(q_hat) / m_hat
    b = 2.0 * p.lambda_tilde / m_hat
    denom = m_hat + 2.0 * p.tau
    a_eval = max(a, 1e-250)  # J needs a strictly positive noise argument
    jp = integrals.J_partials(a_eval, b, p.kappa_star)
    j, j1, j2 = jp.value, jp.d_a, jp.d_b
    m = (m_hat / denom) * (j - 0.5 * (a * j1 + b * j2))
    q = m_hat * m_hat * j / (denom * denom)
    sigma = j1 / (2.0 * a_eval * denom)
    return m, q, sigma


def se_step(s: SEState, p: ModelParams) -> SEState:
    """One synchronous update of the six state-evolution equations."""
    if s.Sigma <= -0.25:
        raise ValueError(f"Sigma must exceed -1/4, got {s.Sigma}")
    gap = s.Sigma + 0.25
    m_hat = 2.0 * p.alpha / gap
    sigma_hat = m_hat
    q_hat = 2.0 * p.alpha * (p.Q_star - 2.0 * s.m + s.q + 0.5 * p.Delta) / (gap * gap)
    if q_hat < 0:
        raise SEDivergenceError(f"q_hat went negative ({q_hat}): diverging noise")
    m, q, sigma = _solve_outputs(m_hat, q_hat, p)
    return SEState(m=m, q=q, Sigma=sigma, m_hat=m_hat, q_hat=q_hat, Sigma_hat=sigma_hat)


def _default_init(p: ModelParams) -> SEState:
    """Half-overlap initialization with hats filled by one forward pass."""
    seed = SEState(m=0.5 * p.Q_star, q=0.5 * p.Q_star, Sigma=1.0,
                   m_hat=1.0, q_hat=1.0, Sigma_hat=1.0)
    return se_step(seed, p)


def _reduced_residuals(log_de: np.ndarray, p: ModelParams) -> np.ndarray:
    """Residuals of the two-variable (delta, eps) reduction (any tau)."""
    delta, eps = np.exp(np.clip(log_de, -30.0, 30.0))
    m_hat = 2.0 / eps
    b = p.lambda_tilde * eps
    denom = m_hat + 2.0 * p.tau
    j, j1, j2 = integrals.tail_moments(delta, b, p.kappa_star)
    m = (m_hat / denom) * (j - 0.5 * (delta * j1 + b * j2))
    q = m_hat * m_hat * j / (denom * denom)
    sigma = j1 / (2.0 * delta * denom)
    r1 = m_hat * (sigma + 0.25) - 2.0 * p.alpha
    r2 = 2.0 * p.alpha * delta * delta - (p.Q_star - 2.0 * m + q + 0.5 * p.Delta)
    return np.array([r1, r2])


def _state_from_delta_eps(delta: float, eps: float, p: ModelParams) -> SEState:
    m_hat = 2.0 / eps
    q_hat = (delta * m_hat) ** 2
    m, q, sigma = _solve_outputs(m_hat, q_hat, p)
    return SEState(m=m, q=q, Sigma=sigma, m_hat=m_hat, q_hat=q_hat, Sigma_hat=m_hat)


def solve_fixed_point(
    p: ModelParams,
    init: SEState | None = None,
    damping: float = 0.5,
    tol: float = 1e-8,
    max_iter: int = 2000,
    polish: bool = True,
) -> SEFixedPoint:
    """Damped fixed-point iteration of se_step, then a root polish.

    The damped loop runs until the Euclidean distance between successive
    six-variable states falls below tol (damping is reduced geometrically
    to a floor of 1e-2 whenever the distance grows).  The returned residual
    is the max-norm of the two reduced fixed-point equations at the final
    point, after a quasi-Newton polish in (log delta, log eps).
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError(f"damping must lie in (0, 1], got {damping}")
    if tol > 1e-4:
        raise ValueError(f"tol must be at most 1e-4, got {tol}")
    s = init if init is not None else _default_init(p)
    gamma = damping
    prev_dist = np.inf
    dist = np.inf
    for _ in range(max_iter):
        nxt = se_step(s, p)
        vec, nvec = s.as_vector(), nxt.as_vector()
        dist = float(np.linalg.norm(nvec - vec))
        if dist > prev_dist:
            gamma = max(1e-2, 0.5 * gamma)
        else:
            gamma = min(damping, 1.1 * gamma)
        prev_dist = dist
        merged = (1.0 - gamma) * vec + gamma * nvec
        s = SEState(*merged)
        if dist < tol:
            break
    loop_converged = dist < tol

    delta = math.sqrt(max(s.q_hat, 0.0)) / s.m_hat
    eps = 2.0 / s.m_hat
    residual = float(np.max(np.abs(_reduced_residuals(np.log([delta, eps]), p))))
    if polish and delta > 0.0:
        sol = optimize.root(
            _reduced_residuals, np.log([delta, eps]), args=(p,), method="hybr",
            options={"xtol": 1e-13},
        )
        polished = float(np.max(np.abs(sol.fun)))
        if polished < residual:
            delta, eps = np.exp(sol.x)
            residual = polished
    if not loop_converged and residual >= 1e-9:
        # the loop stalled somewhere the root polish cannot rescue
        raise SEConvergenceError(
            f"no convergence after {max_iter} damped iterations "
            f"(distance {dist:.3e}, reduced residual {residual:.3e})"
        )
    state = _state_from_delta_eps(delta, eps, p)
    margin = _replicon_from_solution(delta, p.lambda_tilde * eps, p)
    return SEFixedPoint(
        delta_bar=float(delta),
        eps_bar=float(eps),
        state=state,
        mode="regularized",
        converged=True,
        residual=residual,
        replicon_margin=margin,
    )


def _ridgeless_positive_loss(p: ModelParams, delta_cusp: float, tol: float) -> SEFixedPoint:
    """lambda_tilde = 0 fixed point above the interpolation threshold.

    The damped six-variable loop is stiff here (eps_bar diverges as alpha
    approaches the threshold from above), so the reduced system is solved
    directly, warm-started at the cusp geometry over a ladder of eps scales.
    """
    inits = [(delta_cusp, e0) for e0 in (1.0, 8.0, 64.0, 512.0, 4096.0)]
    inits += [(0.5 * delta_cusp, 4.0), (2.0 * delta_cusp, 4.0)]
    best = None
    for d0, e0 in inits:
        try:
            sol = optimize.root(
                _reduced_residuals, np.log([d0, e0]), args=(p,), method="hybr",
                options={"xtol": 1e-13},
            )
        except (SEDivergenceError, spectral.EdgeDetectionError, spectral.QuadratureError):
            continue
        res = float(np.max(np.abs(sol.fun)))
        if best is None or res < best[1]:
            best = (np.exp(sol.x), res)
        if sol.success and res < tol:
            break
    if best is None or best[1] >= max(tol, 1e-8):
        achieved = "none" if best is None else f"{best[1]:.3e}"
        raise SEConvergenceError(
            f"ridgeless solve above the interpolation threshold failed at "
            f"alpha={p.alpha} (best residual {achieved})"
        )
    (delta, eps), residual = best
    state = _state_from_delta_eps(float(delta), float(eps), p)
    margin = _replicon_from_solution(float(delta), 0.0, p)
    return SEFixedPoint(
        delta_bar=float(delta),
        eps_bar=float(eps),
        state=state,
        mode="regularized",
        converged=True,
        residual=residual,
        replicon_margin=margin,
    )


def _interpolator_residuals(log_de: np.ndarray, p: ModelParams) -> np.ndarray:
    """Residuals of the lambda -> 0+ interpolator system in (delta, eps_hat).

    Both raw equations vanish identically as (delta, eps_hat) -> (0, 0)
    (the first is O(delta), the second O(delta^2) at Delta = 0), so the
    origin would attract the root finder at any alpha.  Dividing by delta
    and delta^2 removes that spurious root while leaving genuine ones
    unchanged.
    """
    delta, eps_hat = np.exp(np.clip(log_de, -30.0, 30.0))
    j, j1, j2 = integrals.tail_moments(delta, eps_hat, p.kappa_star)
    r1 = 4.0 * p.alpha * delta - j1
    r2 = p.Q_star + 0.5 * p.Delta + 2.0 * p.alpha * delta * delta - (j - eps_hat * j2)
    return np.array([r1 / delta, r2 / (delta * delta)])


def _interpolator_state(delta: float, eps_hat: float, p: ModelParams) -> SEState:
    j, j1, j2 = integrals.tail_moments(max(delta, 1e-250), eps_hat, p.kappa_star)
    m = j - 0.5 * (delta * j1 + eps_hat * j2)
    return SEState(m=m, q=j, Sigma=np.inf, m_hat=0.0, q_hat=0.0, Sigma_hat=0.0)


def _eps_hat_given_delta(delta: float, p: ModelParams) -> float | None:
    """Solve J - eps_hat*J2 = Q* + Delta/2 + 2*alpha*delta^2 for eps_hat.

    The left side equals int_{x > e} (x^2 - e^2) dmu_delta, strictly
    decreasing in e, so bisection is safe; returns None when even e = 0
    cannot reach the target.
    """
    target = p.Q_star + 0.5 * p.Delta + 2.0 * p.alpha * delta * delta

    def shortfall(e: float) -> float:
        j, _, j2 = integrals.tail_moments(delta, e, p.kappa_star)
        return (j - e * j2) - target

    if shortfall(0.0) < 0.0:
        return None
    hi = 1.0
    top = spectral.mp_edges(p.kappa_star)[1] + 2.0 * delta + 1.0
    while shortfall(hi) > 0.0:
        hi *= 2.0
        if hi > 4.0 * top:
            return None
    return optimize.brentq(shortfall, 0.0, hi, xtol=1e-14, rtol=8.9e-16)


def solve_interpolator_limit(
    p: ModelParams,
    init: tuple[float, float] | None = None,
    tol: float = 1e-10,
    allow_fallback: bool = True,
) -> SEFixedPoint:
    """Fixed point of the lambda -> 0+ minimal-trace-norm interpolator.

    Solves the rescaled two-variable system in (delta, eps_hat).  For
    Delta = 0 and alpha at or above the strong-recovery threshold the
    solution collapses to (0, 0) with zero test error.  For Delta > 0 and
    alpha above the interpolation threshold no interpolator exists; with
    allow_fallback the lambda_tilde = 0 regularized system is solved
    instead (mode "regularized"), otherwise a ModeError is raised.
    """
    if p.lambda_tilde != 0.0:
        raise ModeError(
            f"interpolator mode requires lambda = 0, got lambda={p.lam}"
        )
    from . import thresholds  # deferred: thresholds itself builds on this module

    if p.Delta == 0.0:
        alpha_strong = thresholds.strong_recovery_threshold(p.kappa_star).alpha_value
        if p.alpha >= alpha_strong - 1e-12:
            state = SEState(m=p.Q_star, q=p.Q_star, Sigma=np.inf,
                            m_hat=0.0, q_hat=0.0, Sigma_hat=0.0)
            margin = _replicon_from_solution(0.0, 0.0, p)
            return SEFixedPoint(
                delta_bar=0.0, eps_bar=0.0, state=state, mode="interpolator",
                converged=True, residual=0.0, replicon_margin=margin,
            )
    else:
        inter = thresholds.interpolation_threshold(p.kappa_star, p.Delta)
        if p.alpha > inter.alpha_value:
            if not allow_fallback:
                raise ModeError(
                    f"no interpolator exists at alpha={p.alpha} > "
                    f"alpha_inter={inter.alpha_value} for Delta={p.Delta}"
                )
            return _ridgeless_positive_loss(p, inter.aux["delta_bar"], tol)

    inits = []
    if init is not None:
        inits.append(init)
    if p.alpha < 0.5:
        d0 = math.sqrt(0.5 * p.Delta / (1.0 - 2.0 * p.alpha)) if p.Delta > 0 else 0.0
        if d0 > 0:
            inits.append((d0, 2.0 * d0))
    d1 = math.sqrt((p.Q_star + 0.5 * p.Delta) / (2.0 * p.alpha))
    inits += [(d1, 2.0 * d1), (0.5, 1.0), (1.0, 0.5)]

    best = None
    for d0, e0 in inits:
        if not (d0 > 0 and e0 > 0):
            continue
        try:
            sol = optimize.root(
                _interpolator_residuals, np.log([d0, e0]), args=(p,), method="hybr",
                options={"xtol": 1e-13},
            )
        except (spectral.QuadratureError, spectral.EdgeDetectionError):
            continue  # this search path wandered somewhere the law cannot be resolved
        res = float(np.max(np.abs(sol.fun)))
        if sol.success and res < tol:
            best = (np.exp(sol.x), res)
            break
        if best is None or res < best[1]:
            best = (np.exp(sol.x), res)

    if best is None:
        raise SEConvergenceError(
            "interpolator system could not be evaluated from any initialization"
        )
    (delta, eps_hat), residual = best
    if residual >= tol:
        # alternating relaxation: eps_hat from the second equation, then
        # delta from the first by bisection on 4*alpha*delta - J1
        delta = max(delta, 1e-3)
        try:
            delta, eps_hat, residual = _interpolator_relaxation(delta, eps_hat, p, tol)
        except (spectral.QuadratureError, spectral.EdgeDetectionError):
            pass
    if residual >= tol:
        raise SEConvergenceError(
            f"interpolator system did not converge (residual {residual:.3e})"
        )
    state = _interpolator_state(delta, eps_hat, p)
    margin = _replicon_from_solution(delta, eps_hat, p)
    return SEFixedPoint(
        delta_bar=float(delta),
        eps_bar=float(eps_hat),
        state=state,
        mode="interpolator",
        converged=True,
        residual=residual,
        replicon_margin=margin,
    )


def _interpolator_relaxation(
    delta: float, eps_hat: float, p: ModelParams, tol: float
) -> tuple[float, float, float]:
    """Alternating relaxation refinement for the interpolator system."""
    residual = math.inf
    for _ in range(200):
        e = _eps_hat_given_delta(delta, p)
        if e is None:
            delta *= 2.0
            continue
        eps_hat = e

        def r1(d: float) -> float:
            _, j1, _ = integrals.tail_moments(d, eps_hat, p.kappa_star)
            return 4.0 * p.alpha * d - j1

        lo, hi = delta, delta
        while r1(lo) > 0.0 and lo > 1e-14:
            lo *= 0.5
        while r1(hi) < 0.0 and hi < 1e6:
            hi *= 2.0
        new_delta = optimize.brentq(r1, lo, hi, xtol=1e-15, rtol=8.9e-16)
        moved = abs(new_delta - delta)
        delta = new_delta
        residual = float(np.max(np.abs(_interpolator_residuals(np.log([delta, eps_hat]), p))))
        if residual < tol or moved < 1e-14:
            break
    sol = optimize.root(
        _interpolator_residuals, np.log([delta, eps_hat]), args=(p,), method="hybr",
        options={"xtol": 1e-13},
    )
    if sol.success:
        res = float(np.max(np.abs(sol.fun)))
        if res < residual:
            delta, eps_hat = np.exp(sol.x)
            residual = res
    return float(delta), float(eps_hat), float(residual)


def sweep_alpha(
    p: ModelParams,
    alpha_grid,
    mode: str = "regularized",
    damping: float = 0.5,
    tol: float = 1e-8,
) -> list[SEFixedPoint]:
    """Continuation sweep over a sorted alpha grid.

    The sweep is anchored at the grid point closest to half the
    strong-recovery threshold and continues outward in both directions,
    warm-starting each solve from its converged neighbor.  Failed points
    are flagged (converged=False) and the sweep continues.
    """
    alphas = list(alpha_grid)
    if alphas != sorted(alphas):
        raise ValueError("alpha grid must be sorted ascending")
    if mode not in ("regularized", "interpolator"):
        raise ValueError(f"unknown mode {mode!r}")
    from . import thresholds

    anchor_alpha = 0.5 * thresholds.strong_recovery_threshold(p.kappa_star).alpha_value
    anchor = int(np.argmin(np.abs(np.array(alphas) - anchor_alpha)))

    results: list[SEFixedPoint | None] = [None] * len(alphas)

    def _solve(alpha: float, warm: SEFixedPoint | None) -> SEFixedPoint:
        pp = replace(p, alpha=alpha)
        if mode == "interpolator":
            init = None
            if warm is not None and warm.converged and warm.delta_bar > 0 and warm.eps_bar > 0:
                init = (warm.delta_bar, warm.eps_bar)
            return solve_interpolator_limit(pp, init=init)
        init = warm.state if warm is not None and warm.converged else None
        if init is not None and not init.m_hat > 0:
            init = None  # interpolator-collapsed neighbors cannot seed this mode
        return solve_fixed_point(pp, init=init, damping=damping, tol=tol)

    def _flagged(alpha: float) -> SEFixedPoint:
        nan_state = SEState(*([math.nan] * 6))
        return SEFixedPoint(
            delta_bar=math.nan, eps_bar=math.nan, state=nan_state, mode=mode,
            converged=False, residual=math.inf, replicon_margin=math.nan,
        )

    for indices in (range(anchor, len(alphas)), range(anchor - 1, -1, -1)):
        warm = None
        for i in indices:
            if results[i] is not None:
                warm = results[i]
                continue
            try:
                results[i] = _solve(alphas[i], warm)
                warm = results[i]
            except (SEDivergenceError, SEConvergenceError, spectral.QuadratureError,
                    spectral.EdgeDetectionError):
                results[i] = _flagged(alphas[i])
    return results


def _small_delta_cdf(x: float, kappa_star: float, delta: float) -> float:
    """F_delta(x) for 0 < delta below the quadrature switch.

    The zero eigenvalues (mass w = 1 - kappa_star) smear into a semicircle
    of radius 2*delta*sqrt(w); the Marchenko-Pastur component is taken at
    delta = 0 (its edge corrections are O(delta**2)).
    """
    w = max(1.0 - kappa_star, 0.0)
    total = 0.0
    if w > 0.0:
        c = float(np.clip(x / (delta * math.sqrt(w)), -2.0, 2.0))
        total += w * integrals.semicircle_incomplete_moment(0, c)
    law0 = spectral.spectral_law(kappa_star, 0.0)
    if x > law0.bulks[0][0]:
        total += spectral.integrate_density(law0, law0.bulks[0][0], min(x, law0.support_top))
    return min(total, 1.0)


def _small_delta_density(u, kappa_star: float, delta: float):
    """Continuous density of the law for 0 < delta below the switch."""
    u = np.asarray(u, dtype=float)
    w = max(1.0 - kappa_star, 0.0)
    law0 = spectral.spectral_law(kappa_star, 0.0)
    rho = np.asarray(spectral.density(u, law0), dtype=float).copy()
    if w > 0.0:
        s = delta * math.sqrt(w)
        inside = np.abs(u) < 2.0 * s
        rho = rho + np.where(inside, w * np.sqrt(np.maximum(4.0 * s * s - u * u, 0.0))
                             / (2.0 * np.pi * s * s), 0.0)
    return rho


def observables(fp: SEFixedPoint, p: ModelParams) -> Observables:
    """Test error, training loss density and minimizer singular-value law."""
    if not fp.converged:
        raise ValueError("observables require a converged fixed point")
    delta = fp.delta_bar
    if fp.mode == "interpolator":
        eps_hat = fp.eps_bar
        train = 0.0
    else:
        eps_hat = p.lambda_tilde * fp.eps_bar
        _, _, j2 = integrals.tail_moments(max(delta, 1e-250), eps_hat, p.kappa_star)
        train = delta**2 / (4.0 * fp.eps_bar**2) - 0.5 * p.lambda_tilde * j2
    test_error = 2.0 * p.alpha * delta * delta - 0.5 * p.Delta
    if test_error < 0.0 and test_error > -1e-9:
        test_error = 0.0

    if 0.0 < delta < SMALL_DELTA_SWITCH:
        zero_mass = _small_delta_cdf(eps_hat, p.kappa_star, delta)

        def sv_density(x, _d=delta):
            x = np.asarray(x, dtype=float)
            out = np.where(
                x > 0.0,
                2.0 * x * _small_delta_density(x * x + eps_hat, p.kappa_star, _d),
                0.0,
            )
            return out if out.ndim else float(out)

    else:
        law = spectral.spectral_law(p.kappa_star, delta)
        zero_mass = spectral.cdf(eps_hat, law)

        def sv_density(x):
            x = np.asarray(x, dtype=float)
            out = np.where(x > 0.0, 2.0 * x * spectral.density(x * x + eps_hat, law), 0.0)
            return out if out.ndim else float(out)

    return Observables(
        test_error=float(test_error),
        train_loss_density=float(train),
        zero_mass=float(zero_mass),
        sv_density=sv_density,
    )


def _small_delta_nodes(kappa_star: float, delta: float, n: int, cuts):
    """Quadrature nodes/weights for the two-component small-delta law."""
    law0 = spectral.spectral_law(kappa_star, 0.0)
    x, w = spectral.density_quadrature(law0, n, cuts=cuts)
    wmass = max(1.0 - kappa_star, 0.0)
    if wmass > 0.0:
        s = delta * math.sqrt(wmass)
        t, gw = np.polynomial.legendre.leggauss(n)
        pieces_x, pieces_w = [x], [w]
        lo = -2.0 * s
        for cut in sorted([c for c in cuts if -2.0 * s < c < 2.0 * s] + [2.0 * s]):
            theta = (t + 1.0) * (np.pi / 4.0)
            u = lo + (cut - lo) * np.sin(theta) ** 2
            jac = (cut - lo) * np.sin(2.0 * theta) * (np.pi / 4.0)
            rho = wmass * np.sqrt(np.maximum(4.0 * s * s - u * u, 0.0)) / (2.0 * np.pi * s * s)
            pieces_x.append(u)
            pieces_w.append(gw * jac * rho)
            lo = cut
        x = np.concatenate(pieces_x)
        w = np.concatenate(pieces_w)
    return x, w


def _replicon_from_solution(delta: float, eps_hat: float, p: ModelParams) -> float:
    """2*alpha minus the double integral of the squared shrinkage quotient."""
    if delta == 0.0:
        # delta = 0 law: rescaled MP bulk (all above 0) plus, for
        # kappa_star < 1, an atom at 0 of mass 1 - kappa_star
        if eps_hat <= 0.0:
            bulk = min(p.kappa_star, 1.0)
            atom = 1.0 - bulk
            d = bulk * bulk + 2.0 * atom * bulk
        else:
            law = spectral.spectral_law(p.kappa_star, 0.0)
            x, w = spectral.density_quadrature(law, 256, cuts=(eps_hat,))
            d = _double_integral(x, w, eps_hat, law.atoms)
        return 2.0 * p.alpha - d
    small = delta < SMALL_DELTA_SWITCH
    prev = None
    for n in (192, 384, 768):
        if small:
            x, w = _small_delta_nodes(p.kappa_star, delta, n, cuts=(eps_hat,))
            atoms = ()
        else:
            law = spectral.spectral_law(p.kappa_star, delta)
            x, w = spectral.density_quadrature(law, n, cuts=(eps_hat,))
            atoms = law.atoms
        d = _double_integral(x, w, eps_hat, atoms)
        if prev is not None and abs(d - prev) <= 1e-7 + 1e-6 * abs(d):
            return 2.0 * p.alpha - d
        prev = d
    raise spectral.QuadratureError(
        f"replicon double integral did not stabilize (last value {prev:.6e})"
    )


def _double_integral(x: np.ndarray, w: np.ndarray, eps_hat: float, atoms) -> float:
    """Integral of ((ReLU(x-e) - ReLU(y-e))/(x-y))^2 over the law squared."""
    shr = np.maximum(x - eps_hat, 0.0)
    dx = x[:, None] - x[None, :]
    num = shr[:, None] - shr[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(np.abs(dx) > 0.0, (num / np.where(dx == 0.0, 1.0, dx)) ** 2,
                     (x[:, None] > eps_hat).astype(float))
    d = float(w @ k @ w)
    for loc, mass in atoms:
        if mass == 0.0:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            column = np.where(
                x != loc,
                ((shr - max(loc - eps_hat, 0.0)) / np.where(x == loc, 1.0, x - loc)) ** 2,
                float(loc > eps_hat),
            )
        d += 2.0 * mass * float(w @ column)
        d += mass * mass * float(loc > eps_hat)
    return d


def replicon_margin(fp: SEFixedPoint, p: ModelParams) -> float:
    """Stability margin 2*alpha - D at a converged fixed point."""
    if not fp.converged:
        raise ValueError("replicon margin requires a converged fixed point")
    eps_hat = fp.eps_bar if fp.mode == "interpolator" else p.lambda_tilde * fp.eps_bar
    return _replicon_from_solution(fp.delta_bar, eps_hat, p)
