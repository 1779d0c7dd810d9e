"""Estimator identities on synthetic data and the free Langevin particle."""

import math

import numpy as np
import pytest
from conftest import brownian_stats

from effdiff.diffusivity import estimate_drift, estimate_K
from effdiff.dynamics import ModelKind, ModelParams
from effdiff.ensemble import EnsembleStats, RunConfig, run_ensemble
from effdiff.flow import Mode, from_coefficient_table, taylor_green
from effdiff.ou import OUParams

TIMES = np.geomspace(1.0, 100.0, 24)


def test_estimator_on_its_own_model():
    stats = brownian_stats(0.05, TIMES, particles=4000, seed=1)
    est = estimate_K(stats, 0.5)
    for i in range(2):
        for j in range(2):
            want = 0.05 if i == j else 0.0
            assert abs(est.K[i, j] - want) < 3 * est.stderr[i, j]
    # The error scale itself: se/K ~ sqrt(2/N) per checkpoint.
    assert est.stderr[0, 0] == pytest.approx(0.05 * math.sqrt(2.0 / 4000), rel=0.5)


def test_estimator_coverage_meta():
    # 100 seeded replications at small N: the 3-SE band must cover >= 99.
    passes = 0
    for seed in range(100):
        stats = brownian_stats(0.05, np.geomspace(1.0, 50.0, 16), particles=200,
                               seed=5000 + seed)
        est = estimate_K(stats, 0.5)
        ok = all(abs(est.K[i, j] - (0.05 if i == j else 0.0)) < 3 * est.stderr[i, j]
                 for i in range(2) for j in range(2))
        passes += ok
    assert passes >= 99


def test_estimator_bias_vanishes_with_ensemble_size():
    # The replication-averaged estimate approaches D as N grows.
    times = np.geomspace(1.0, 50.0, 16)
    means = {}
    for N in (50, 800):
        ks = [estimate_K(brownian_stats(0.05, times, particles=N, seed=300 + r),
                         0.5).K[0, 0] for r in range(40)]
        means[N] = np.mean(ks)
    assert abs(means[800] - 0.05) < abs(means[50] - 0.05) + 0.002
    assert abs(means[800] - 0.05) < 0.05 * 0.05 * math.sqrt(2.0 / (800 * 40)) * 4 + 0.0005


def test_free_langevin_diffusivity():
    model = ModelParams(tau=1.3895, sigma=0.3162, flow=taylor_green(amplitude=0.0),
                        ou=OUParams.scalar(1.0, 1.0, 1.0),
                        kind=ModelKind.COLORED_INERTIAL)
    cfg = RunConfig(model=model, particles=512, dt=0.01, t_final=100.0,
                    checkpoints=np.geomspace(10.0, 100.0, 32), seed=20)
    est = estimate_K(run_ensemble(cfg), 0.5)
    for axis in (0, 1):
        assert abs(est.K[axis, axis] - 0.05) < 3 * est.stderr[axis, axis]


def test_window_insensitivity():
    stats = brownian_stats(0.05, TIMES, particles=2000, seed=3)
    a = estimate_K(stats, 0.3)
    b = estimate_K(stats, 0.6)
    tol = 2.0 * math.hypot(a.stderr[0, 0], b.stderr[0, 0])
    assert abs(a.K[0, 0] - b.K[0, 0]) < tol


def test_time_scaling_coherence():
    # times -> 2t and displacements -> sqrt(2) x leave K(t) = M / 2t invariant.
    rng = np.random.default_rng(4)
    X = np.cumsum(rng.standard_normal((len(TIMES), 500, 2)), axis=0)
    a = estimate_K(EnsembleStats.from_positions(TIMES, X), 0.5)
    b = estimate_K(EnsembleStats.from_positions(2.0 * TIMES, math.sqrt(2.0) * X), 0.5)
    assert np.allclose(a.K, b.K, rtol=1e-12)
    assert np.allclose(a.stderr, b.stderr, rtol=1e-12)


def test_symmetrization_idempotent_and_psd():
    stats = brownian_stats(0.03, TIMES, particles=1000, seed=5)
    est = estimate_K(stats, 0.5)
    sym_once = 0.5 * (est.K + est.K.T)
    assert np.array_equal(est.K_sym, sym_once)
    assert np.array_equal(0.5 * (est.K_sym + est.K_sym.T), est.K_sym)
    eigs = np.linalg.eigvalsh(est.K_sym)
    assert eigs.min() >= -3.0 * est.stderr.max()


def test_slope_diagnostic_near_zero_on_plateau():
    stats = brownian_stats(0.05, TIMES, particles=3000, seed=6)
    est = estimate_K(stats, 0.5)
    assert abs(est.slope_diag) < 0.02


def test_drift_zero_for_brownian():
    stats = brownian_stats(0.05, TIMES, particles=2000, seed=7)
    drift = estimate_drift(stats)
    assert not drift.significant
    assert np.all(np.abs(drift.V) < 3 * drift.stderr)


def test_drift_deterministic_transport_oracle():
    # Constant flow c with the modulation pinned at 1 (Lambda = 0, huge delta
    # makes the exact modulation step the identity): V = c exactly.
    c = (0.3, -0.2)
    flow = from_coefficient_table(
        {(0, 0): [Mode((0, 0), c[0], 0.5 * math.pi)],
         (1, 0): [Mode((0, 0), c[1], 0.5 * math.pi)]},
        dim_d=2, dim_n=1, period=(2 * math.pi, 2 * math.pi))
    model = ModelParams(tau=0.0, sigma=0.0, flow=flow,
                        ou=OUParams(A=1.0, Lambda=0.0, delta=1e120),
                        kind=ModelKind.COLORED_TRACER)
    cfg = RunConfig(model=model, particles=4, dt=0.01, t_final=10.0,
                    checkpoints=np.array([5.0, 10.0]), seed=0, mu_init="ones")
    stats = run_ensemble(cfg)
    drift = estimate_drift(stats)
    assert np.allclose(drift.V, c, rtol=1e-12)
    assert np.allclose(drift.stderr, 0.0, atol=1e-12)


def test_drift_flagged_when_centering_violated():
    rng = np.random.default_rng(8)
    X = np.cumsum(rng.standard_normal((len(TIMES), 500, 2)), axis=0)
    X[:, :, 0] += 0.5 * TIMES[:, None]   # superimposed mean transport
    drift = estimate_drift(EnsembleStats.from_positions(TIMES, X))
    assert drift.significant
    assert drift.V[0] == pytest.approx(0.5, abs=0.05)


def test_window_and_count_guards():
    stats = brownian_stats(0.05, TIMES, particles=100, seed=9)
    with pytest.raises(ValueError):
        estimate_K(stats, 0.05)      # fewer than 4 checkpoints in the window
    with pytest.raises(ValueError):
        estimate_K(stats, 1.5)
    rng = np.random.default_rng(10)
    single = EnsembleStats.from_positions(TIMES, rng.standard_normal((len(TIMES), 1, 2)))
    with pytest.raises(ValueError):
        estimate_K(single, 0.5)


def test_zero_variance_window_average():
    X = np.zeros((8, 4, 2))
    stats = EnsembleStats.from_positions(np.linspace(1.0, 8.0, 8), X)
    est = estimate_K(stats, 1.0)
    assert np.all(est.K == 0.0)
    assert np.all(est.stderr == 0.0)
