"""Effective-diffusivity estimation from ensemble displacement statistics.

The estimator is the Lagrangian definition: at each checkpoint t the matrix
K(t) = <(x - <x>) (x - <x>)^T> / (2 t) is formed, and the estimate is an
inverse-variance-weighted plateau average of K(t) over the final window of
checkpoints.  A single endpoint estimate is noisier and carries O(1/t)
transients from the zero initial velocity and flow correlations; the window
average suppresses both.

Error model: per-checkpoint standard errors come from the across-particle
variance of the centered displacement products (particles are iid by
construction).  Checkpoints inside the window are correlated because they
share the same paths; the window-average error uses the Brownian-displacement
correlation rho(t, t') = min/max, with checkpoints closer than one velocity-
correlation time treated as fully correlated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import EnsembleStats


@dataclass(frozen=True)
class DriftEstimate:
    """Mean transport velocity <x(t_hi)> / t_hi with standard errors."""

    V: np.ndarray
    stderr: np.ndarray
    significant: bool
    t: float


@dataclass(frozen=True)
class DiffusivityEstimate:
    """Effective diffusivity with uncertainty, drift, and fit diagnostics.

    ``K`` is the raw (possibly non-symmetric) estimate, ``K_sym`` its
    symmetric part (K + K^T)/2; ``stderr`` is entrywise.  ``slope_diag`` is
    the least-squares slope of K_11(t) over the window normalized by K_11 —
    near zero when the estimate has reached its plateau.  ``drift_V`` is
    reported and flagged (``drift_significant``) when it exceeds 3 standard
    errors, which signals a flow without the zero-mean-velocity symmetry.
    """

    K: np.ndarray
    K_sym: np.ndarray
    stderr: np.ndarray
    drift_V: np.ndarray
    drift_stderr: np.ndarray
    drift_significant: bool
    window: tuple[float, float]
    slope_diag: float
    n_window: int

    def to_dict(self) -> dict:
        return {
            "K": self.K.tolist(),
            "K_sym": self.K_sym.tolist(),
            "stderr": self.stderr.tolist(),
            "drift_V": self.drift_V.tolist(),
            "drift_stderr": self.drift_stderr.tolist(),
            "drift_significant": self.drift_significant,
            "window": list(self.window),
            "slope_diag": self.slope_diag,
            "n_window": self.n_window,
        }


def estimate_drift(stats: EnsembleStats) -> DriftEstimate:
    """Mean velocity from the last checkpoint; flags a violated centering."""
    if len(stats.times) < 2:
        raise ValueError("need at least 2 checkpoints to estimate drift")
    if stats.count < 2:
        raise ValueError("need at least 2 particles")
    t_hi = float(stats.times[-1])
    mean = stats.mean()[-1]
    var = np.diagonal(stats.centered_covariance()[-1])
    se = np.sqrt(var / stats.count) / t_hi
    V = mean / t_hi
    significant = bool(np.any(np.abs(V) > 3.0 * np.where(se > 0.0, se, np.inf)))
    return DriftEstimate(V=V, stderr=se, significant=significant, t=t_hi)


def _window_correlation(times: np.ndarray, t_corr: float) -> np.ndarray:
    """Correlation model between K(t) estimates sharing the same paths."""
    t = np.asarray(times, dtype=float)
    lo = np.minimum.outer(t, t)
    hi = np.maximum.outer(t, t)
    rho = lo / hi
    rho[np.abs(np.subtract.outer(t, t)) <= t_corr] = 1.0
    return rho


def estimate_K(stats: EnsembleStats, window_fraction: float | None = None) -> DiffusivityEstimate:
    """Plateau-averaged effective diffusivity over the final checkpoint window.

    Parameters
    ----------
    stats : EnsembleStats
    window_fraction : float in (0, 1], optional
        Fraction of checkpoints (last by time) averaged; defaults to 0.5.
        The window must contain at least 4 checkpoints.
    """
    f = 0.5 if window_fraction is None else float(window_fraction)
    if not 0.0 < f <= 1.0:
        raise ValueError("window_fraction must be in (0, 1]")
    if stats.count < 2:
        raise ValueError("need at least 2 particles")
    C = len(stats.times)
    n_win = int(np.ceil(f * C))
    if n_win < 4:
        raise ValueError(f"window too small: {n_win} checkpoints (need >= 4)")

    t = stats.times[C - n_win:]
    cov = stats.centered_covariance()[C - n_win:]
    cov_se = stats.centered_covariance_stderr()[C - n_win:]
    Kt = cov / (2.0 * t[:, None, None])
    SEt = cov_se / (2.0 * t[:, None, None])

    d = stats.dim
    rho = _window_correlation(t, stats.t_corr)
    K = np.empty((d, d))
    stderr = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            s = SEt[:, i, j]
            k = Kt[:, i, j]
            if np.all(s > 0.0):
                w = 1.0 / s**2
            else:
                w = np.ones_like(s)
            w = w / w.sum()
            K[i, j] = float(w @ k)
            stderr[i, j] = float(np.sqrt((w * s) @ rho @ (w * s)))

    # Stationarity-of-estimate diagnostic: residual trend of K_11 over the window.
    k11 = Kt[:, 0, 0]
    slope = float(np.polyfit(t, k11, 1)[0]) if n_win >= 2 else 0.0
    slope_diag = slope / K[0, 0] if K[0, 0] != 0.0 else 0.0

    drift = estimate_drift(stats)
    return DiffusivityEstimate(
        K=K,
        K_sym=0.5 * (K + K.T),
        stderr=stderr,
        drift_V=drift.V,
        drift_stderr=drift.stderr,
        drift_significant=drift.significant,
        window=(float(t[0]), float(t[-1])),
        slope_diag=slope_diag,
        n_window=n_win,
    )
