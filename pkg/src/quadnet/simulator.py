"""Finite-size experiments for the PSD matrix-sensing estimator.

Datasets, an approximate-message-passing solver (GAMP) with a spectral
input denoiser, an accelerated proximal-gradient solver for the convex
matrix program, and plain gradient descent on the two-layer quadratic
network — all producing empirical observables directly comparable with
the state-evolution predictions.

Conventions.  A sample is a sensing matrix Z (symmetric d x d); in
gaussian mode Z = (x x^T - I)/sqrt(d) is never materialized and all
contractions Tr[Z M] are computed from the input vectors.  Labels are
y = Tr[Z S*] + sqrt(Delta) xi with S* = W*^T W* / sqrt(m* d).  The
half-vectorization vec maps symmetric matrices isometrically to R^D,
D = d(d+1)/2, scaling off-diagonal entries by sqrt(2).
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .state_evolution import ModelParams

__all__ = [
    "Dataset",
    "GampState",
    "SimulationDivergenceError",
    "SolverExhaustionError",
    "generate_dataset",
    "quadratic_labels",
    "save_dataset",
    "load_dataset",
    "vec",
    "mat",
    "output_denoiser",
    "spectral_denoiser",
    "gamp_run",
    "prox_gradient_solve",
    "gd_train",
    "empirical_observables",
    "numerical_rank",
]

logger = logging.getLogger(__name__)

GOE_CHUNK = 512
RANK_RTOL = 1e-8   # singular values below this fraction of the largest count as zero
SQRT2 = math.sqrt(2.0)


class SimulationDivergenceError(RuntimeError):
    """An iterative solver's state blew up."""


class SolverExhaustionError(RuntimeError):
    """An iterative solver ran out of iterations before reaching tolerance."""


@dataclass(frozen=True)
class Dataset:
    """One draw of the teacher and its labeled samples.

    In gaussian mode ``inputs`` is the (n, d) array of input vectors; in
    goe mode it is the (n, d, d) stack of symmetric sensing matrices.
    """

    d: int
    n: int
    inputs: np.ndarray
    labels: np.ndarray
    target_weights: np.ndarray
    target_matrix: np.ndarray
    Delta: float
    seed: int
    mode: str

    @property
    def m_star(self) -> int:
        return self.target_weights.shape[0]


@dataclass(frozen=True)
class GampState:
    """Message-passing state after iteration t."""

    u: np.ndarray
    v: np.ndarray
    onsager_b: float
    onsager_d: float
    t: int


def quadratic_labels(inputs: np.ndarray, S: np.ndarray, mode: str) -> np.ndarray:
    """Noiseless labels Tr[Z^mu S] for either sensing mode."""
    if mode == "gaussian":
        x = inputs
        d = S.shape[0]
        return (((x @ S) * x).sum(axis=1) - float(np.trace(S))) / math.sqrt(d)
    if mode == "goe":
        return np.einsum("kab,ab->k", inputs, S, optimize=True)
    raise ValueError(f"unknown mode {mode!r}")


def generate_dataset(
    d: int, n: int, m_star: int, Delta: float, seed: int, mode: str = "gaussian"
) -> Dataset:
    """Draw the teacher, the samples, and the noisy labels.

    gaussian mode: x^mu ~ N(0, I_d) with the centered quadratic labels;
    goe mode: symmetric Z^mu with independent N(0, 1/d) off-diagonal and
    N(0, 2/d) diagonal entries (same second moments as (x x^T - I)/sqrt(d),
    which is what makes the two modes interchangeable at large d).
    """
    if d < 1 or n < 1 or m_star < 1:
        raise ValueError(f"d, n, m_star must be >= 1, got ({d}, {n}, {m_star})")
    if Delta < 0:
        raise ValueError(f"Delta must be nonnegative, got {Delta}")
    if mode not in ("gaussian", "goe"):
        raise ValueError(f"mode must be 'gaussian' or 'goe', got {mode!r}")
    rng = np.random.default_rng(seed)
    w_star = rng.standard_normal((m_star, d))
    s_star = w_star.T @ w_star / math.sqrt(m_star * d)
    if mode == "gaussian":
        inputs = rng.standard_normal((n, d))
    else:
        blocks = []
        for start in range(0, n, GOE_CHUNK):
            count = min(GOE_CHUNK, n - start)
            b = rng.standard_normal((count, d, d)) / math.sqrt(d)
            blocks.append((b + b.transpose(0, 2, 1)) / SQRT2)
        inputs = np.concatenate(blocks, axis=0)
    noise = rng.standard_normal(n)
    labels = quadratic_labels(inputs, s_star, mode) + math.sqrt(Delta) * noise
    return Dataset(
        d=d, n=n, inputs=inputs, labels=labels, target_weights=w_star,
        target_matrix=s_star, Delta=Delta, seed=seed, mode=mode,
    )


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write the arrays as an .npz container plus a .json parameter sidecar."""
    path = Path(path)
    if path.suffix == ".npz":
        path = path.with_suffix("")
    arrays = {
        "inputs": ds.inputs.astype("<f8"),
        "labels": ds.labels.astype("<f8"),
        "target_weights": ds.target_weights.astype("<f8"),
        "target_matrix": ds.target_matrix.astype("<f8"),
    }
    np.savez(path.with_suffix(".npz"), **arrays)
    params = {"d": ds.d, "n": ds.n, "m_star": ds.m_star, "Delta": ds.Delta,
              "seed": ds.seed, "mode": ds.mode}
    path.with_suffix(".json").write_text(json.dumps(params, indent=2) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    """Inverse of save_dataset."""
    path = Path(path)
    if path.suffix in (".npz", ".json"):
        path = path.with_suffix("")
    params = json.loads(path.with_suffix(".json").read_text())
    with np.load(path.with_suffix(".npz")) as data:
        return Dataset(
            d=int(params["d"]), n=int(params["n"]),
            inputs=data["inputs"], labels=data["labels"],
            target_weights=data["target_weights"],
            target_matrix=data["target_matrix"],
            Delta=float(params["Delta"]), seed=int(params["seed"]),
            mode=str(params["mode"]),
        )


# ---------------------------------------------------------------------------
# half-vectorization


def _sym_check(a: np.ndarray) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max()))
    if float(np.abs(a - a.T).max()) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")


def vec(a: np.ndarray) -> np.ndarray:
    """Isometric half-vectorization (off-diagonal entries scaled by sqrt 2)."""
    _sym_check(a)
    d = a.shape[0]
    iu, ju = np.triu_indices(d)
    v = a[iu, ju].copy()
    v[iu != ju] *= SQRT2
    return v


def mat(v: np.ndarray) -> np.ndarray:
    """Inverse of vec."""
    v = np.asarray(v)
    if v.ndim != 1:
        raise ValueError(f"expected a vector, got shape {v.shape}")
    d = int(round((math.sqrt(8 * v.size + 1) - 1) / 2))
    if d * (d + 1) != 2 * v.size:
        raise ValueError(f"length {v.size} is not a triangular number")
    iu, ju = np.triu_indices(d)
    w = v.copy()
    w[iu != ju] /= SQRT2
    a = np.zeros((d, d))
    a[iu, ju] = w
    a[ju, iu] = w
    return a


# ---------------------------------------------------------------------------
# sensing contractions (the vec-space design matrix is never materialized)


def _forward(ds: Dataset, m: np.ndarray) -> np.ndarray:
    """Tr[Z^mu m] for all samples."""
    return quadratic_labels(ds.inputs, m, ds.mode)


def _adjoint(ds: Dataset, g: np.ndarray) -> np.ndarray:
    """sum_mu g_mu Z^mu (symmetric d x d)."""
    if ds.mode == "gaussian":
        x = ds.inputs
        out = x.T @ (g[:, None] * x)
        out[np.diag_indices_from(out)] -= g.sum()
        return out / math.sqrt(ds.d)
    return np.einsum("k,kab->ab", g, ds.inputs, optimize=True)


# ---------------------------------------------------------------------------
# denoisers


def output_denoiser(r: float, s: float, b: float) -> float:
    """Square-loss output channel g(r, s, b) = (s - r)/(b + 1/4)."""
    if b <= -0.25:
        raise ValueError(f"channel variance must exceed -1/4, got {b}")
    return (s - r) / (b + 0.25)


def spectral_denoiser(
    r: np.ndarray, k: float, lambda_tilde: float, tau: float
) -> tuple[np.ndarray, float]:
    """Eigenvalue shrinkage denoiser and its normalized divergence.

    Reconstructs Gamma = mat(sqrt(2/d) r), shrinks each eigenvalue via
    f(x) = ReLU(x - 2 lambda_tilde)/(2 tau + k), and returns
    sqrt(d/2) vec(f(Gamma)) together with (1/D) * div, where the
    divergence of a spectral function is the sum of eigenvalue-wise
    derivatives plus all pairwise difference quotients.
    """
    if 2.0 * tau + k <= 0:
        raise ValueError(f"2*tau + k must be positive, got {2.0 * tau + k}")
    big_d = r.size
    d = int(round((math.sqrt(8 * big_d + 1) - 1) / 2))
    gamma = mat(math.sqrt(2.0 / d) * r)
    evals, evecs = np.linalg.eigh(gamma)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    denom = 2.0 * tau + k
    shrunk = np.maximum(evals - 2.0 * lambda_tilde, 0.0) / denom
    e = math.sqrt(d / 2.0) * vec((evecs * shrunk) @ evecs.T)

    deriv = (evals > 2.0 * lambda_tilde).astype(float) / denom
    diff_x = evals[:, None] - evals[None, :]
    diff_f = shrunk[:, None] - shrunk[None, :]
    scale = max(1.0, float(np.abs(evals).max()))
    degenerate = np.abs(diff_x) < 1e-12 * scale
    mid = 0.5 * (evals[:, None] + evals[None, :])
    limit = (mid > 2.0 * lambda_tilde).astype(float) / denom
    quotient = np.where(degenerate, limit, diff_f / np.where(degenerate, 1.0, diff_x))
    upper = np.triu_indices(d, k=1)
    divergence = (deriv.sum() + quotient[upper].sum()) / big_d
    return e, float(divergence)


# ---------------------------------------------------------------------------
# GAMP


def gamp_run(
    ds: Dataset,
    p: ModelParams,
    max_iter: int = 2000,
    tol: float = 1e-10,
    u0: np.ndarray | None = None,
    damping: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Approximate message passing for the convex matrix program.

    Returns the estimate S_hat and the trajectory array of per-iteration
    overlaps (m_t, q_t) = (<S_t, S*>_F / d, ||S_t||_F^2 / d).  The sensing
    rows are A^mu = vec(Z^mu)/sqrt(d+1); the output channel constant
    c_out = d/(4(d+1)) makes fixed points exact minimizers at finite d,
    for either sensing mode.

    ``damping`` mixes the new u into the old one; 1.0 is the pure
    iteration matched step-for-step by the state-evolution recursion.
    When the increment stops shrinking (a finite-size limit cycle,
    typical for gaussian-mode sensing), the factor is reduced
    automatically — fixed points are unaffected.
    """
    if ds.mode != "goe":
        warnings.warn(
            "gamp_run on gaussian-mode sensing relies on universality; "
            "finite-d behavior is asymptotically but not exactly matched",
            RuntimeWarning,
            stacklevel=2,
        )
    if p.lambda_tilde <= 0 and p.tau <= 0:
        raise ValueError("gamp_run needs lambda > 0 or tau > 0 for a unique target")
    d, n = ds.d, ds.n
    big_d = d * (d + 1) // 2
    root_dp1 = math.sqrt(d + 1.0)
    gamma_d = math.sqrt(2.0 * (d + 1.0) / d)
    c_out = d / (4.0 * (d + 1.0))
    alpha_d = n / big_d
    s = ds.labels / gamma_d
    s_star = ds.target_matrix

    if not 0.0 < damping <= 1.0:
        raise ValueError(f"damping must lie in (0, 1], got {damping}")
    u = np.zeros(big_d) if u0 is None else np.asarray(u0, dtype=float).copy()
    if u.size != big_d:
        raise ValueError(f"u0 must have length {big_d}, got {u.size}")
    g = np.zeros(n)
    k = alpha_d / (1.0 + c_out)
    gamma = damping
    best_du = math.inf
    stall = 0
    converged = False
    traj = []
    state = GampState(u=u, v=np.zeros(n), onsager_b=1.0, onsager_d=k, t=0)
    for t in range(1, max_iter + 1):
        w, b = spectral_denoiser(state.u, k, p.lambda_tilde, p.tau)
        m_w = mat(math.sqrt(2.0 / d) * w)
        v = _forward(ds, m_w) / gamma_d - b * g
        g = (s - v) / (b + c_out)
        k = alpha_d / (b + c_out)
        u_new = vec(_adjoint(ds, g)) / root_dp1 + k * w
        u_new = gamma * u_new + (1.0 - gamma) * state.u
        traj.append((float(np.tensordot(m_w, s_star) / d),
                     float(np.tensordot(m_w, m_w) / d)))
        if not np.all(np.isfinite(u_new)) or float(u_new @ u_new) / big_d > 1e9:
            raise SimulationDivergenceError(
                f"gamp state blew up at iteration {t} "
                f"(||u||^2/D = {float(u_new @ u_new) / big_d:.3e})"
            )
        du = float(np.linalg.norm(u_new - state.u)) / max(1.0, float(np.linalg.norm(state.u)))
        state = GampState(u=u_new, v=v, onsager_b=b, onsager_d=k, t=t)
        if du < tol:
            converged = True
            break
        if du < 0.98 * best_du:
            best_du = du
            stall = 0
        else:
            stall += 1
            if stall >= 50:
                gamma = max(0.2, 0.7 * gamma)
                best_du = du
                stall = 0
    if not converged:
        warnings.warn(
            f"gamp did not reach tol={tol} within {max_iter} iterations "
            f"(last increment {du:.3e}); returning the current iterate",
            RuntimeWarning,
            stacklevel=2,
        )
    w, _ = spectral_denoiser(state.u, k, p.lambda_tilde, p.tau)
    s_hat = mat(math.sqrt(2.0 / d) * w)
    return s_hat, np.array(traj)


# ---------------------------------------------------------------------------
# proximal gradient on the matrix program


def _objective(ds: Dataset, p: ModelParams, s: np.ndarray, res: np.ndarray) -> float:
    d = ds.d
    return float(
        res @ res
        + d * p.lambda_tilde * np.trace(s)
        + 0.5 * p.tau * d * float(np.tensordot(s, s))
    )


def _lipschitz(ds: Dataset, p: ModelParams) -> float:
    """Power iteration on M -> 2 sum_mu Tr[Z^mu M] Z^mu + tau d M."""
    rng = np.random.default_rng(12345)
    m = rng.standard_normal((ds.d, ds.d))
    m = m + m.T
    m /= np.linalg.norm(m)
    lam = 0.0
    for _ in range(40):
        nxt = 2.0 * _adjoint(ds, _forward(ds, m)) + p.tau * ds.d * m
        lam = float(np.tensordot(m, nxt))
        norm = float(np.linalg.norm(nxt))
        if norm == 0.0:
            return max(p.tau * ds.d, 1.0)
        m = nxt / norm
    return abs(lam)


def prox_gradient_solve(
    ds: Dataset, p: ModelParams, max_iter: int = 20000, tol: float = 1e-12
) -> np.ndarray:
    """Accelerated proximal gradient (with objective restart) for

        min_{S psd}  sum_mu (y_mu - Tr[Z^mu S])^2 + d*lambda_tilde*Tr S
                     + (tau d / 2) ||S||_F^2.

    The prox of the trace penalty plus the PSD indicator shifts every
    eigenvalue down by step * d * lambda_tilde and clips at zero.  Stops
    when the relative objective decrease stays below tol.
    """
    if p.lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {p.lam}")
    if p.lambda_tilde == 0 and p.tau == 0:
        raise ValueError("prox_gradient_solve needs lambda > 0 or tau > 0")
    d = ds.d
    step = 1.0 / (1.02 * _lipschitz(ds, p))
    shift = step * d * p.lambda_tilde

    def prox(m: np.ndarray) -> np.ndarray:
        evals, evecs = np.linalg.eigh(m)
        clipped = np.maximum(evals - shift, 0.0)
        return (evecs * clipped) @ evecs.T

    def grad(m: np.ndarray, res: np.ndarray) -> np.ndarray:
        return -2.0 * _adjoint(ds, res) + p.tau * d * m

    s = np.zeros((d, d))
    res_s = ds.labels - _forward(ds, s)
    obj_s = _objective(ds, p, s, res_s)
    y = s
    theta = 1.0
    stall = 0
    for _ in range(max_iter):
        res_y = ds.labels - _forward(ds, y)
        s_new = prox(y - step * grad(y, res_y))
        res_new = ds.labels - _forward(ds, s_new)
        obj_new = _objective(ds, p, s_new, res_new)
        if obj_new > obj_s:  # momentum overshoot: restart from the last iterate
            theta = 1.0
            y = s
            res_y = ds.labels - _forward(ds, y)
            s_new = prox(y - step * grad(y, res_y))
            res_new = ds.labels - _forward(ds, s_new)
            obj_new = _objective(ds, p, s_new, res_new)
        theta_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        y = s_new + ((theta - 1.0) / theta_new) * (s_new - s)
        decrease = obj_s - obj_new
        s, obj_s, theta = s_new, obj_new, theta_new
        if decrease <= tol * max(1.0, abs(obj_s)):
            stall += 1
            if stall >= 3:
                return s
        else:
            stall = 0
    raise SolverExhaustionError(
        f"proximal gradient did not reach tol={tol} within {max_iter} iterations"
    )


# ---------------------------------------------------------------------------
# gradient descent on the two-layer network


def gd_train(
    ds: Dataset,
    m: int,
    lam: float,
    eta: float = 20.0,
    T: int = 10000,
    init_std: float = 1e-3,
    seed: int = 0,
) -> np.ndarray:
    """Full-batch gradient descent on the quadratic network loss

        L(W) = sum_mu (y_mu - Tr[X(x_mu) S(W)])^2 + lam ||W||_F^2,
        S(W) = W^T W / sqrt(m d),

    run for T steps (with an early exit once the loss plateaus).  The
    step is eta/n times the gradient of L — i.e. eta is a per-sample
    learning rate, the convention under which the default eta = 20 is
    stable at every size (stationary points do not depend on the step
    scaling).  Returns the m x d weight matrix; the final gradient norm
    is logged as a convergence diagnostic.
    """
    if ds.mode != "gaussian":
        raise ValueError("gd_train requires a gaussian-mode dataset (network inputs)")
    if m < ds.d:
        raise ValueError(f"width m={m} must be at least d={ds.d}")
    if eta <= 0 or T < 1:
        raise ValueError("eta must be positive and T at least 1")
    d, n = ds.d, ds.n
    x, y = ds.inputs, ds.labels
    rng = np.random.default_rng(seed)
    w = init_std * rng.standard_normal((m, d))
    scale = 1.0 / math.sqrt(m * d)
    step = eta / n

    def predictions(wm: np.ndarray) -> np.ndarray:
        u = x @ wm.T
        return (np.einsum("ij,ij->i", u, u) - float(np.tensordot(wm, wm))) * (
            scale / math.sqrt(d)
        )

    loss0 = None
    plateau = 0
    prev_loss = np.inf
    grad_norm = np.nan
    for t in range(T):
        r = y - predictions(w)
        loss = float(r @ r) + lam * float(np.tensordot(w, w))
        if loss0 is None:
            loss0 = max(loss, 1.0)
        if not math.isfinite(loss) or loss > 100.0 * loss0:
            raise SimulationDivergenceError(
                f"gd loss blew up at step {t} (loss={loss:.3e}); reduce eta"
            )
        contracted = x.T @ (r[:, None] * x)
        contracted[np.diag_indices_from(contracted)] -= r.sum()
        grad = (-4.0 * scale / math.sqrt(d)) * (w @ contracted) + 2.0 * lam * w
        grad_norm = float(np.linalg.norm(grad))
        w = w - step * grad
        if abs(prev_loss - loss) <= 1e-13 * max(1.0, loss):
            plateau += 1
            if plateau >= 50:
                break
        else:
            plateau = 0
        prev_loss = loss
    logger.debug("gd_train finished: final gradient norm %.3e", grad_norm)
    return w


# ---------------------------------------------------------------------------
# observables


def empirical_observables(
    s_hat: np.ndarray, s_star: np.ndarray
) -> tuple[float, np.ndarray]:
    """Test error (1/d)||S_hat - S*||_F^2 and the singular-value sample.

    The singular values are the square roots of the clipped eigenvalues
    of S_hat (the scale in which the asymptotic singular-value density
    is stated), sorted decreasingly.
    """
    if s_hat.shape != s_star.shape:
        raise ValueError(f"shape mismatch: {s_hat.shape} vs {s_star.shape}")
    d = s_hat.shape[0]
    diff = s_hat - s_star
    test_error = float(np.tensordot(diff, diff)) / d
    evals = np.linalg.eigvalsh(0.5 * (s_hat + s_hat.T))
    top = max(float(evals.max(initial=0.0)), 0.0)
    # eigensolver roundoff (~eps*||S||) must be zeroed before the square
    # root, which would otherwise inflate it past the rank cutoff
    evals[evals < 1e-13 * top] = 0.0
    sv = np.sqrt(np.maximum(evals, 0.0))[::-1]
    return test_error, sv


def numerical_rank(s_hat: np.ndarray) -> int:
    """Number of singular values above RANK_RTOL times the largest."""
    _, sv = empirical_observables(s_hat, np.zeros_like(s_hat))
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > RANK_RTOL * sv[0]))
