"""Single-particle time stepping for the four transport models.

Models (d = spatial dimension, n = modulation dimension):

* colored inertial:  tau x'' = F(x) mu - x' + sigma xi,   mu an exact OU step
* white inertial:    tau x'' = F(x) A^{-1} sqrt(Lambda) zeta - x' + sigma xi
* colored tracer:    x' = F(x) mu + sigma xi
* white tracer:      dx = F(x) A^{-1} sqrt(Lambda) o dW + sigma dB
                     (Stratonovich, Heun predictor-corrector; Ito/Euler switch)

The x/u variables advance by explicit Euler-Maruyama with the structure
matrix frozen at the pre-step position; the modulation state always advances
by its exact transition.  Every scheme consumes exactly d + n standard
normal draws per step, in the fixed order (d particle draws, n modulation
draws), so trajectories are reproducible across refactors.

Positions are never wrapped in the stored state; wrapping happens only
inside flow evaluation, so displacements stay exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .flow import FlowField, eval_F, eval_F_batch, eval_F_gradient
from .ou import OUParams, inv_a_sqrt_lambda, sqrt_lambda, transition_matrices


class NumericalError(RuntimeError):
    """A trajectory produced a non-finite state."""


class ModelKind(str, Enum):
    COLORED_INERTIAL = "colored-inertial"
    WHITE_INERTIAL = "white-inertial"
    COLORED_TRACER = "colored-tracer"
    WHITE_TRACER = "white-tracer"

    @property
    def is_inertial(self) -> bool:
        return self in (ModelKind.COLORED_INERTIAL, ModelKind.WHITE_INERTIAL)

    @property
    def is_colored(self) -> bool:
        return self in (ModelKind.COLORED_INERTIAL, ModelKind.COLORED_TRACER)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """One fully specified particle dynamics.

    ``tau`` is the particle relaxation time (must be positive for inertial
    kinds; tracers carry tau = 0).  ``sigma`` is the molecular noise
    amplitude.  ``white_tracer_scheme`` selects "heun" (Stratonovich,
    default) or "euler" (Ito) for the white tracer.
    """

    tau: float
    sigma: float
    flow: FlowField
    ou: OUParams
    kind: ModelKind
    white_tracer_scheme: str = "heun"

    def __post_init__(self):
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind.is_inertial:
            if not self.tau > 0.0:
                raise ValueError("inertial kinds require tau > 0")
        else:
            object.__setattr__(self, "tau", 0.0)
        if self.sigma < 0.0:
            raise ValueError("sigma must be non-negative")
        if self.flow.dim_n != self.ou.dim:
            raise ValueError("flow.dim_n must match the modulation dimension")
        if self.white_tracer_scheme not in ("heun", "euler"):
            raise ValueError("white_tracer_scheme must be 'heun' or 'euler'")

    @property
    def dim_d(self) -> int:
        return self.flow.dim_d

    @property
    def dim_n(self) -> int:
        return self.ou.dim

    @property
    def dt_max(self) -> float:
        """Step-size guard; exceeding it degrades the frozen-coefficient coupling."""
        if self.kind is ModelKind.COLORED_INERTIAL:
            return min(self.tau, self.ou.delta) / 20.0
        if self.kind is ModelKind.WHITE_INERTIAL:
            return self.tau / 20.0
        if self.kind is ModelKind.COLORED_TRACER:
            return self.ou.delta / 20.0
        return math.inf

    @property
    def velocity_correlation_time(self) -> float:
        """Timescale over which the particle velocity decorrelates."""
        if self.kind is ModelKind.COLORED_INERTIAL:
            return max(self.tau, self.ou.delta)
        if self.kind is ModelKind.WHITE_INERTIAL:
            return self.tau
        if self.kind is ModelKind.COLORED_TRACER:
            return self.ou.delta
        return 0.0


@dataclass
class ParticleState:
    """Unwrapped position, velocity (inertial kinds only), modulation state."""

    x: np.ndarray
    u: np.ndarray | None
    mu: np.ndarray

    def require_finite(self):
        parts = [self.x, self.mu] + ([self.u] if self.u is not None else [])
        if not all(np.all(np.isfinite(p)) for p in parts):
            raise NumericalError(f"non-finite particle state: {self}")


def _velocity_batch(flow: FlowField, X: np.ndarray, MU: np.ndarray) -> np.ndarray:
    """v = F(x) mu for a batch; (N, d)."""
    F = eval_F_batch(flow, X)
    if flow.dim_n == 1:
        return F[:, :, 0] * MU
    return np.einsum("pdn,pn->pd", F, MU)


def white_structure_matrix(p: OUParams) -> np.ndarray:
    """Spatial noise structure A^{-1} sqrt(Lambda) of the white-noise field."""
    return inv_a_sqrt_lambda(p)


class Stepper:
    """Vectorized one-step advance for N particles of a fixed model and dt.

    ``step(X, U, MU, noise)`` mutates X (N, d), U (N, d) or None, MU (N, n)
    in place; ``noise`` is (N, d + n) standard normals laid out as the d
    particle draws followed by the n modulation draws.
    """

    def __init__(self, m: ModelParams, dt: float):
        if not dt > 0.0:
            raise ValueError("dt must be positive")
        self.m = m
        self.dt = dt
        self.d = m.dim_d
        self.n = m.dim_n
        sqdt = math.sqrt(dt)
        if m.kind.is_colored:
            self._E, self._S = transition_matrices(m.ou, dt)
        else:
            self._W = white_structure_matrix(m.ou)
        if m.kind is ModelKind.COLORED_INERTIAL:
            self._cnoise = (m.sigma / m.tau) * sqdt
        elif m.kind is ModelKind.WHITE_INERTIAL:
            self._cnoise = (m.sigma / m.tau) * sqdt
            self._cflow = sqdt / m.tau
        else:
            self._cnoise = m.sigma * sqdt
            self._cflow = sqdt

    def _advance_mu(self, MU: np.ndarray, gauss: np.ndarray):
        if self.n == 1:
            MU *= self._E[0, 0]
            MU += self._S[0, 0] * gauss
        else:
            MU[:] = MU @ self._E.T + gauss @ self._S.T

    def step(self, X: np.ndarray, U: np.ndarray | None, MU: np.ndarray,
             noise: np.ndarray):
        d, n, dt, m = self.d, self.n, self.dt, self.m
        gp = noise[:, :d]
        gm = noise[:, d:]
        if m.kind is ModelKind.COLORED_INERTIAL:
            drive = _velocity_batch(m.flow, X, MU)
            X += U * dt
            U += (dt / m.tau) * (drive - U) + self._cnoise * gp
            self._advance_mu(MU, gm)
        elif m.kind is ModelKind.WHITE_INERTIAL:
            F = eval_F_batch(m.flow, X)
            b = gm @ self._W.T
            if n == 1:
                drive = F[:, :, 0] * b
            else:
                drive = np.einsum("pdn,pn->pd", F, b)
            X += U * dt
            U += -(dt / m.tau) * U + self._cflow * drive + self._cnoise * gp
        elif m.kind is ModelKind.COLORED_TRACER:
            drive = _velocity_batch(m.flow, X, MU)
            X += drive * dt + self._cnoise * gp
            self._advance_mu(MU, gm)
        else:
            F = eval_F_batch(m.flow, X)
            b = gm @ self._W.T
            if n == 1:
                incr = self._cflow * F[:, :, 0] * b
            else:
                incr = self._cflow * np.einsum("pdn,pn->pd", F, b)
            molecular = self._cnoise * gp
            if m.white_tracer_scheme == "euler":
                X += incr + molecular
            else:
                Xp = X + incr + molecular
                Fp = eval_F_batch(m.flow, Xp)
                if n == 1:
                    incr_p = self._cflow * Fp[:, :, 0] * b
                else:
                    incr_p = self._cflow * np.einsum("pdn,pn->pd", Fp, b)
                X += 0.5 * (incr + incr_p) + molecular


def _step_single(state: ParticleState, dt: float, m: ModelParams,
                 draws: np.ndarray, expected_kind: ModelKind) -> ParticleState:
    if m.kind is not expected_kind:
        raise ValueError(f"model kind is {m.kind.value}, not {expected_kind.value}")
    state.require_finite()
    draws = np.asarray(draws, dtype=float)
    if draws.shape != (m.dim_d + m.dim_n,):
        raise ValueError(f"need {m.dim_d + m.dim_n} draws, got shape {draws.shape}")
    X = np.array(state.x, dtype=float)[None, :]
    U = None
    if m.kind.is_inertial:
        if state.u is None:
            raise ValueError("inertial kinds require a velocity")
        U = np.array(state.u, dtype=float)[None, :]
    MU = np.array(state.mu, dtype=float)[None, :]
    Stepper(m, dt).step(X, U, MU, draws[None, :])
    return ParticleState(x=X[0], u=None if U is None else U[0], mu=MU[0])


def colored_inertial_step(state, dt, m, draws) -> ParticleState:
    """Euler-Maruyama velocity/position update with an exact modulation step."""
    return _step_single(state, dt, m, draws, ModelKind.COLORED_INERTIAL)


def white_inertial_step(state, dt, m, draws) -> ParticleState:
    """Euler-Maruyama with multiplicative flow noise F(x) A^{-1} sqrt(Lambda)."""
    return _step_single(state, dt, m, draws, ModelKind.WHITE_INERTIAL)


def colored_tracer_step(state, dt, m, draws) -> ParticleState:
    """Overdamped update x' = x + F(x) mu dt + sigma sqrt(dt) N."""
    return _step_single(state, dt, m, draws, ModelKind.COLORED_TRACER)


def white_tracer_step(state, dt, m, draws) -> ParticleState:
    """Heun (Stratonovich) or Euler (Ito) step of the white-noise tracer."""
    return _step_single(state, dt, m, draws, ModelKind.WHITE_TRACER)


def step_particle(state: ParticleState, dt: float, m: ModelParams,
                  draws: np.ndarray) -> ParticleState:
    """Advance one particle of any model kind."""
    return _step_single(state, dt, m, draws, m.kind)


@dataclass(frozen=True)
class HypoellipticityCheck:
    rank: int
    full: bool
    dim: int


def check_hypoellipticity_rank(m: ModelParams, z: np.ndarray,
                               mu: np.ndarray | None = None) -> HypoellipticityCheck:
    """Span of the noise directions under repeated drift-Jacobian products.

    For the inertial system in the variables (z, y, mu) the drift Jacobian is

        J = [ 0       I       0     ]
            [ DF/tau  -I/tau  F/tau ]
            [ 0       0       -A    ]

    with (DF)_{kl} = d/dz_l sum_i F_{ki}(z) mu_i.  The noise directions are
    the velocity-block columns scaled by sigma/tau (when sigma > 0) and the
    modulation-block columns of sqrt(Lambda).  The returned rank is the
    dimension of span{B, JB, J^2 B, ...}; ``full`` is rank == 2d + n.
    """
    if not m.kind.is_inertial:
        raise ValueError("hypoellipticity check applies to inertial kinds")
    d, n = m.dim_d, m.dim_n
    z = np.asarray(z, dtype=float)
    mu = np.ones(n) if mu is None else np.asarray(mu, dtype=float)
    F = eval_F(m.flow, z)
    DF = np.einsum("kjl,j->kl", eval_F_gradient(m.flow, z), mu)

    dim = 2 * d + n
    J = np.zeros((dim, dim))
    J[:d, d:2 * d] = np.eye(d)
    J[d:2 * d, :d] = DF / m.tau
    J[d:2 * d, d:2 * d] = -np.eye(d) / m.tau
    J[d:2 * d, 2 * d:] = F / m.tau
    J[2 * d:, 2 * d:] = -m.ou.A

    cols = []
    if m.sigma > 0.0:
        noise_y = np.zeros((dim, d))
        noise_y[d:2 * d, :] = (m.sigma / m.tau) * np.eye(d)
        cols.append(noise_y)
    noise_mu = np.zeros((dim, n))
    noise_mu[2 * d:, :] = sqrt_lambda(m.ou)
    cols.append(noise_mu)
    B = np.hstack(cols)

    blocks = [B]
    V = B
    for _ in range(dim - 1):
        V = J @ V
        blocks.append(V)
    rank = int(np.linalg.matrix_rank(np.hstack(blocks)))
    return HypoellipticityCheck(rank=rank, full=rank == dim, dim=dim)
