"""Shared synthetic-data builders for estimator tests."""

import numpy as np

from effdiff.ensemble import EnsembleStats


def brownian_stats(D: float, times, particles: int, seed: int,
                   dim: int = 2) -> EnsembleStats:
    """Exact Brownian displacement statistics with diffusivity D per axis.

    Independent of every stepping kernel: increments are drawn directly from
    the transition law N(0, 2 D dt I), so this is a proper oracle for the
    estimator (variance of displacement = 2 D t).
    """
    times = np.asarray(times, dtype=float)
    rng = np.random.default_rng(seed)
    dts = np.diff(np.concatenate([[0.0], times]))
    increments = rng.standard_normal((len(times), particles, dim))
    increments *= np.sqrt(2.0 * D * dts)[:, None, None]
    paths = np.cumsum(increments, axis=0)
    return EnsembleStats.from_positions(times, paths, t_corr=0.0)
