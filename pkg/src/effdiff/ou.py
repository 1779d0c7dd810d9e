"""Exact simulation and closed-form moments of the modulation process.

The modulation mu(t) in R^n solves

    d mu = -(A/delta) mu dt + (sqrt(Lambda)/delta) dW,

with A symmetric positive definite, Lambda symmetric positive semi-definite,
and delta > 0 the correlation-time parameter.  A and Lambda must commute;
they are simultaneously diagonalized once at construction, so every step is
an exact draw from the Gaussian transition law at any dt (no discretization
error in mu).

Closed forms used throughout:

    E(dt)   = exp(-A dt / delta)
    C_inf   solves A C + C A = Lambda / delta   (diagonal: L_ii / (2 a_i delta))
    mu'     = E(dt) mu + S(dt) g,   S S^T = C_inf (I - E(dt)^2),  g ~ N(0, I)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_COMMUTE_RTOL = 1e-10


def _as_spd_matrix(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = np.diag(arr)
    elif arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be a square matrix, scalar, or diagonal vector")
    if not np.allclose(arr, arr.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(arr).max())):
        raise ValueError(f"{name} must be symmetric")
    return arr


@dataclass(frozen=True, eq=False)
class OUParams:
    """Parameters (A, Lambda, delta) of the modulation process.

    Scalars and 1-D arrays are promoted to (diagonal) matrices.  A must be
    positive definite and commute with Lambda; Lambda must be positive
    semi-definite.
    """

    A: np.ndarray
    Lambda: np.ndarray
    delta: float

    def __post_init__(self):
        A = _as_spd_matrix(self.A, "A")
        Lam = _as_spd_matrix(self.Lambda, "Lambda")
        if A.shape != Lam.shape:
            raise ValueError("A and Lambda must have the same shape")
        if not self.delta > 0.0:
            raise ValueError("delta must be positive")
        evals, evecs = np.linalg.eigh(A)
        if evals.min() <= 0.0:
            raise ValueError("A must be positive definite")
        lam_diag = evecs.T @ Lam @ evecs
        scale = max(1.0, float(np.abs(A).max()) * float(np.abs(Lam).max()))
        if np.abs(lam_diag - np.diag(np.diag(lam_diag))).max() > _COMMUTE_RTOL * scale:
            raise ValueError("A and Lambda must commute (simultaneously diagonalizable)")
        lam_eigs = np.diag(lam_diag).copy()
        if lam_eigs.min() < -_COMMUTE_RTOL * scale:
            raise ValueError("Lambda must be positive semi-definite")
        np.clip(lam_eigs, 0.0, None, out=lam_eigs)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Lambda", Lam)
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "_basis", evecs)
        object.__setattr__(self, "_a_eigs", evals)
        object.__setattr__(self, "_lam_eigs", lam_eigs)

    @classmethod
    def scalar(cls, alpha: float, lam: float, delta: float) -> "OUParams":
        """One-dimensional process d mu = -(alpha/delta) mu dt + (lam/delta) dW.

        The noise amplitude lam enters the covariance intensity as
        Lambda = lam**2.
        """
        return cls(A=np.array([[float(alpha)]]), Lambda=np.array([[float(lam) ** 2]]),
                   delta=delta)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def _from_eigs(self, diag: np.ndarray) -> np.ndarray:
        Q = self._basis
        return (Q * diag) @ Q.T


def stationary_covariance(p: OUParams) -> np.ndarray:
    """Stationary covariance C_inf solving A C + C A = Lambda / delta."""
    return p._from_eigs(p._lam_eigs / (2.0 * p._a_eigs * p.delta))


def transition_matrices(p: OUParams, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact one-step maps (E, S): mu' = E mu + S g with g standard normal.

    E = exp(-A dt/delta); S S^T is the conditional covariance
    C_inf (I - E^2).
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    decay = np.exp(-p._a_eigs * dt / p.delta)
    var = p._lam_eigs / (2.0 * p._a_eigs * p.delta) * (1.0 - decay**2)
    return p._from_eigs(decay), p._from_eigs(np.sqrt(var))


def ou_exact_step(mu: np.ndarray, dt: float, p: OUParams, gauss: np.ndarray) -> np.ndarray:
    """One exact transition of the modulation state."""
    E, S = transition_matrices(p, dt)
    return E @ np.asarray(mu, dtype=float) + S @ np.asarray(gauss, dtype=float)


def ou_exact_step_batch(MU: np.ndarray, E: np.ndarray, S: np.ndarray,
                        gauss: np.ndarray) -> np.ndarray:
    """Vectorized exact step for (N, n) states with precomputed (E, S)."""
    return MU @ E.T + gauss @ S.T


def stationary_sqrt(p: OUParams) -> np.ndarray:
    """Symmetric square root of the stationary covariance."""
    return p._from_eigs(np.sqrt(p._lam_eigs / (2.0 * p._a_eigs * p.delta)))


def sqrt_lambda(p: OUParams) -> np.ndarray:
    """Symmetric square root of the noise intensity Lambda."""
    return p._from_eigs(np.sqrt(p._lam_eigs))


def inv_a_sqrt_lambda(p: OUParams) -> np.ndarray:
    """A^{-1} sqrt(Lambda): the spatial noise scale of the white-noise field."""
    return p._from_eigs(np.sqrt(p._lam_eigs) / p._a_eigs)


def sample_stationary(p: OUParams, gauss: np.ndarray) -> np.ndarray:
    """Draw from the mean-zero stationary law given standard normals."""
    return stationary_sqrt(p) @ np.asarray(gauss, dtype=float)
