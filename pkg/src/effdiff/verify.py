"""Mechanized structural checks on concrete model configurations.

Three families of diagnostics:

* Lyapunov drift: for the first-order system in (z, y, mu)

      dz = y dt
      dy = (F(z) mu - y)/tau dt + (sigma/tau) dW1
      dmu = -A mu dt + sqrt(Lambda) dW2

  and the quadratic function V = 1 + c_y |y|^2 + c_mu |mu|^2, the generator
  L V is exact arithmetic (first-order drift terms plus constant diffusion
  traces).  The check samples the state space and reports
  fitted_beta = max(L V + V): a finite fitted_beta certifies the drift bound
  L V <= -V + beta with beta = fitted_beta.  A caller-supplied beta (the
  textbook constant sigma^2 d/2 + tr(Lambda)/2 + 1 by default) is compared
  and reported via ``passes``; the two coefficient defaults are
  c_y = tau and c_mu = (tau^2 Fbar^2 + 1) / (2 lambda_1) with Fbar the sup of
  the matrix norm of F over the cell and lambda_1 the smallest eigenvalue
  of A.

* Centering: the long-run time average of the velocity F(x(t)) mu(t) along a
  single trajectory (geometric ergodicity makes burn-in bias exponentially
  small); a parity-invariant flow must average to zero.

* Symmetry: for d = 2, equality of the diagonal diffusivities and vanishing
  off-diagonals within 3 standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusivity import DiffusivityEstimate
from .dynamics import ModelKind, ModelParams, Stepper
from .flow import eval_F_batch
from .ou import sample_stationary


def sup_structure_norm(m: ModelParams, grid_per_axis: int = 128) -> float:
    """Supremum of the matrix 2-norm of F over a cell grid."""
    period = m.flow.period_array
    axes = [np.arange(grid_per_axis) * period[i] / grid_per_axis
            for i in range(m.dim_d)]
    grids = np.meshgrid(*axes, indexing="ij")
    Z = np.stack([g.ravel() for g in grids], axis=1)
    F = eval_F_batch(m.flow, Z)
    if m.dim_n == 1:
        norms = np.sqrt((F[:, :, 0] ** 2).sum(axis=1))
    else:
        norms = np.linalg.norm(F, ord=2, axis=(1, 2))
    return float(norms.max())


@dataclass(frozen=True)
class LyapunovSpec:
    """Coefficients of V = 1 + coeff_y |y|^2 + coeff_mu |mu|^2 and the drift
    constant beta to test against."""

    coeff_y: float
    coeff_mu: float
    beta: float

    def __post_init__(self):
        if self.coeff_y <= 0.0 or self.coeff_mu <= 0.0:
            raise ValueError("Lyapunov coefficients must be positive")

    @classmethod
    def from_model(cls, m: ModelParams, grid_per_axis: int = 128) -> "LyapunovSpec":
        if not m.kind.is_inertial or not m.kind.is_colored:
            raise ValueError("Lyapunov drift check applies to the colored inertial kind")
        fbar = sup_structure_norm(m, grid_per_axis)
        lam1 = float(np.linalg.eigvalsh(m.ou.A).min())
        d = m.dim_d
        return cls(
            coeff_y=m.tau,
            coeff_mu=(m.tau**2 * fbar**2 + 1.0) / (2.0 * lam1),
            beta=0.5 * m.sigma**2 * d + 0.5 * float(np.trace(m.ou.Lambda)) + 1.0,
        )


def lyapunov_V(spec: LyapunovSpec, Y: np.ndarray, MU: np.ndarray) -> np.ndarray:
    return 1.0 + spec.coeff_y * (Y**2).sum(axis=-1) + spec.coeff_mu * (MU**2).sum(axis=-1)


def lyapunov_generator(m: ModelParams, spec: LyapunovSpec, Z: np.ndarray,
                       Y: np.ndarray, MU: np.ndarray) -> np.ndarray:
    """Closed-form L V at a batch of states (exact for quadratic V)."""
    F = eval_F_batch(m.flow, Z)
    if m.dim_n == 1:
        drive = F[:, :, 0] * MU
    else:
        drive = np.einsum("pdn,pn->pd", F, MU)
    cy, cmu = spec.coeff_y, spec.coeff_mu
    tau, sigma = m.tau, m.sigma
    quad_y = (2.0 * cy / tau) * ((Y * drive).sum(axis=1) - (Y**2).sum(axis=1))
    quad_mu = -2.0 * cmu * np.einsum("pn,nk,pk->p", MU, m.ou.A, MU)
    trace_term = cy * m.dim_d * (sigma / tau) ** 2 + cmu * float(np.trace(m.ou.Lambda))
    return quad_y + quad_mu + trace_term


def _ball_points(rng: np.random.Generator, count: int, dim: int,
                 radius: float) -> np.ndarray:
    from scipy.special import ndtr

    # A single (count, dim + 1) draw per stream keeps sample prefixes stable
    # as count grows: direction from the first dim columns, radius from the
    # last one mapped through the normal CDF to a uniform variate.
    draws = rng.standard_normal((count, dim + 1))
    direction = draws[:, :dim]
    norm = np.linalg.norm(direction, axis=1, keepdims=True)
    norm[norm == 0.0] = 1.0
    r = radius * ndtr(draws[:, dim]) ** (1.0 / dim)
    return direction / norm * r[:, None]


@dataclass(frozen=True)
class LyapunovCheck:
    passes: bool
    max_violation: float
    fitted_beta: float
    beta: float
    samples: int
    radius: float


def lyapunov_drift_check(m: ModelParams, spec: LyapunovSpec | None = None,
                         samples: int = 10_000, radius: float = 10.0,
                         seed: int = 0) -> LyapunovCheck:
    """Sample L V <= -V + beta over cell x ball(radius) x ball(radius).

    The origin is always included (the constant diffusion terms peak there).
    ``fitted_beta`` = max(L V + V) over the samples is the empirically
    sufficient drift constant; ``passes`` compares it against ``spec.beta``.
    Doubling ``samples`` with the same seed extends the sample set, so
    ``max_violation`` never decreases.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if spec is None:
        spec = LyapunovSpec.from_model(m)
    d, n = m.dim_d, m.dim_n
    rng_z = np.random.Generator(np.random.Philox(key=(seed << 2) + 0))
    rng_y = np.random.Generator(np.random.Philox(key=(seed << 2) + 1))
    rng_mu = np.random.Generator(np.random.Philox(key=(seed << 2) + 2))
    Z = np.vstack([np.zeros((1, d)),
                   rng_z.random((samples, d)) * m.flow.period_array])
    Y = np.vstack([np.zeros((1, d)), _ball_points(rng_y, samples, d, radius)])
    MU = np.vstack([np.zeros((1, n)), _ball_points(rng_mu, samples, n, radius)])

    G = lyapunov_generator(m, spec, Z, Y, MU) + lyapunov_V(spec, Y, MU)
    fitted_beta = float(G.max())
    max_violation = fitted_beta - spec.beta
    return LyapunovCheck(
        passes=bool(max_violation <= 0.0),
        max_violation=max_violation,
        fitted_beta=fitted_beta,
        beta=spec.beta,
        samples=samples,
        radius=radius,
    )


def _fd_generator_apply(func, state: np.ndarray, drift: np.ndarray,
                        diffusion_cov: np.ndarray, h0: float = 1e-3) -> float:
    """Finite-difference application of a diffusion generator to ``func``."""
    dim = len(state)
    h = h0 * np.maximum(1.0, np.abs(state))
    grad = np.empty(dim)
    hess = np.zeros((dim, dim))
    f0 = func(state)
    for i in range(dim):
        ei = np.zeros(dim)
        ei[i] = h[i]
        fp, fm = func(state + ei), func(state - ei)
        grad[i] = (fp - fm) / (2.0 * h[i])
        hess[i, i] = (fp - 2.0 * f0 + fm) / h[i] ** 2
    for i in range(dim):
        for j in range(i + 1, dim):
            if diffusion_cov[i, j] == 0.0:
                continue
            ei = np.zeros(dim)
            ej = np.zeros(dim)
            ei[i] = h[i]
            ej[j] = h[j]
            hess[i, j] = hess[j, i] = (
                func(state + ei + ej) - func(state + ei - ej)
                - func(state - ei + ej) + func(state - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return float(drift @ grad + 0.5 * np.sum(diffusion_cov * hess))


def generator_fd_check(m: ModelParams, spec: LyapunovSpec | None = None,
                       points: int = 100, radius: float = 10.0,
                       seed: int = 1) -> float:
    """Max relative deviation of the closed-form L V from a finite-difference
    application of the generator, over random states."""
    if spec is None:
        spec = LyapunovSpec.from_model(m)
    d, n = m.dim_d, m.dim_n
    dim = 2 * d + n
    rng = np.random.default_rng(seed)

    diffusion_cov = np.zeros((dim, dim))
    diffusion_cov[d:2 * d, d:2 * d] = (m.sigma / m.tau) ** 2 * np.eye(d)
    diffusion_cov[2 * d:, 2 * d:] = m.ou.Lambda

    def V_of(state: np.ndarray) -> float:
        y = state[d:2 * d]
        mu = state[2 * d:]
        return 1.0 + spec.coeff_y * float(y @ y) + spec.coeff_mu * float(mu @ mu)

    worst = 0.0
    for _ in range(points):
        z = rng.random(d) * m.flow.period_array
        y = rng.uniform(-radius, radius, d)
        mu = rng.uniform(-radius, radius, n)
        state = np.concatenate([z, y, mu])
        F = eval_F_batch(m.flow, z[None, :])[0]
        drift = np.concatenate([y, (F @ mu - y) / m.tau, -(m.ou.A @ mu)])
        lv_fd = _fd_generator_apply(V_of, state, drift, diffusion_cov)
        lv_closed = float(lyapunov_generator(m, spec, z[None, :], y[None, :],
                                             mu[None, :])[0])
        rel = abs(lv_fd - lv_closed) / max(1.0, abs(lv_closed))
        worst = max(worst, rel)
    return worst


@dataclass(frozen=True)
class CenteringCheck:
    mean_velocity: np.ndarray
    stderr: np.ndarray
    centered: bool
    burn_in: float
    horizon: float


def centering_check(m: ModelParams, burn_in: float = 20.0, horizon: float = 200.0,
                    seed: int = 0, dt: float | None = None,
                    batches: int = 32) -> CenteringCheck:
    """Time-average of the velocity field along one ergodic trajectory.

    Requires the colored inertial kind with sigma > 0 (the ergodic case).
    Standard errors come from batch means over the post-burn-in stretch, so
    they shrink like 1/sqrt(horizon).
    """
    if m.kind is not ModelKind.COLORED_INERTIAL:
        raise ValueError("centering check requires the colored inertial kind")
    if not m.sigma > 0.0:
        raise ValueError("centering check requires sigma > 0")
    if dt is None:
        dt = m.dt_max
    d, n = m.dim_d, m.dim_n
    rng = np.random.default_rng(seed)
    stepper = Stepper(m, dt)
    X = (0.5 * m.flow.period_array)[None, :].copy()
    U = np.zeros((1, d))
    MU = sample_stationary(m.ou, rng.standard_normal(n))[None, :].copy()

    burn_steps = int(round(burn_in / dt))
    avg_steps = int(round(horizon / dt))
    batch_len = max(1, avg_steps // batches)
    batch_sums = np.zeros((batches, d))
    counts = np.zeros(batches)

    noise = rng.standard_normal((burn_steps + avg_steps, 1, d + n))
    for k in range(burn_steps):
        stepper.step(X, U, MU, noise[k])
    for k in range(avg_steps):
        F = eval_F_batch(m.flow, X)
        v = F[:, :, 0] * MU if n == 1 else np.einsum("pdn,pn->pd", F, MU)
        b = min(k // batch_len, batches - 1)
        batch_sums[b] += v[0]
        counts[b] += 1
        stepper.step(X, U, MU, noise[burn_steps + k])

    means = batch_sums / counts[:, None]
    mean_velocity = means.mean(axis=0)
    stderr = means.std(axis=0, ddof=1) / math.sqrt(batches)
    centered = bool(np.all(np.abs(mean_velocity) < 3.0 * stderr))
    return CenteringCheck(mean_velocity=mean_velocity, stderr=stderr,
                          centered=centered, burn_in=burn_in, horizon=horizon)


@dataclass(frozen=True)
class SymmetryCheck:
    diag_equal: bool
    offdiag_zero: bool
    diag_gap: float
    diag_tol: float
    offdiag_max: float


def symmetry_check(estimate: DiffusivityEstimate) -> SymmetryCheck:
    """Equal diagonals and vanishing off-diagonals within 3 standard errors."""
    K, se = estimate.K, estimate.stderr
    if K.shape != (2, 2):
        raise ValueError("symmetry check applies to d = 2")
    diag_gap = abs(K[0, 0] - K[1, 1])
    diag_tol = 3.0 * math.hypot(se[0, 0], se[1, 1])
    off_ok = (abs(K[0, 1]) <= 3.0 * se[0, 1]) and (abs(K[1, 0]) <= 3.0 * se[1, 0])
    return SymmetryCheck(
        diag_equal=bool(diag_gap <= diag_tol),
        offdiag_zero=bool(off_ok),
        diag_gap=diag_gap,
        diag_tol=diag_tol,
        offdiag_max=max(abs(K[0, 1]), abs(K[1, 0])),
    )
