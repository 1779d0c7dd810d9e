"""Deterministic parallel ensemble simulation with checkpoint statistics.

Reproducibility contract
------------------------
* Particle i draws from a dedicated counter-based stream: a Philox generator
  keyed by (master_seed << 64) | i.  Streams are consumed in a fixed layout:
  n initialization draws (the stationary modulation draw), then d + n draws
  per step.
* Particles are grouped into fixed blocks of ``BLOCK_SIZE`` regardless of the
  worker count.  Block partial sums are reduced in block order with
  compensated (Kahan) summation, so (seed, config) -> bit-identical
  EnsembleStats for any number of workers.

Only running moment sums per checkpoint are retained (powers of the
unwrapped displacements x(t) - x(0) up to fourth order, needed for the
diffusivity estimator's delta-method errors), never full trajectories;
``simulate_trajectories`` exists as a small-ensemble debugging aid.
Accumulating displacements rather than raw positions keeps the spread of a
lattice start out of the centered second moment, which would otherwise bias
K(t) by an O(1/t) constant; for a point start the two are identical.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from .dynamics import ModelParams, NumericalError, Stepper
from .ou import stationary_sqrt

BLOCK_SIZE = 256
NOISE_CHUNK = 256
DEFAULT_CHECKPOINT_COUNT = 64

_MASK64 = (1 << 64) - 1


def particle_key(seed: int, index: int) -> int:
    """128-bit Philox key for one particle's independent substream."""
    return ((seed & _MASK64) << 64) | (index & _MASK64)


def particle_generator(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=particle_key(seed, index)))


def default_checkpoints(t_final: float, dt: float,
                        count: int = DEFAULT_CHECKPOINT_COUNT) -> np.ndarray:
    """Geometrically spaced checkpoint times ending at t_final."""
    t_min = max(dt, t_final / 512.0)
    return np.geomspace(t_min, t_final, count)


@dataclass
class RunConfig:
    """One ensemble run: model, size, step, horizon, checkpoints, seed."""

    model: ModelParams
    particles: int = 3000
    dt: float = 1e-3
    t_final: float = 10.0
    checkpoints: np.ndarray | None = None
    seed: int = 0
    start: str = "lattice"              # "lattice" | "point"
    start_point: tuple[float, ...] | None = None
    mu_init: str = "stationary"         # "stationary" | "ones" (debug hook)
    window_fraction: float = 0.5
    dump_trajectories: bool = False

    def validate(self):
        if self.particles < 2:
            raise ValueError("particles must be >= 2")
        if not 0.0 < self.dt <= self.t_final:
            raise ValueError("need 0 < dt <= t_final")
        if self.start not in ("lattice", "point"):
            raise ValueError("start must be 'lattice' or 'point'")
        if self.start == "point" and self.start_point is not None:
            if len(self.start_point) != self.model.dim_d:
                raise ValueError("start_point must have dim_d components")
        if self.mu_init not in ("stationary", "ones"):
            raise ValueError("mu_init must be 'stationary' or 'ones'")
        if not 0.0 < self.window_fraction <= 1.0:
            raise ValueError("window_fraction must be in (0, 1]")
        if self.checkpoints is not None:
            t = np.asarray(self.checkpoints, dtype=float)
            if t.ndim != 1 or len(t) == 0:
                raise ValueError("checkpoints must be a non-empty 1-D sequence")
            if np.any(np.diff(t) <= 0.0):
                raise ValueError("checkpoints must be strictly increasing")
            if t[0] <= 0.0 or t[-1] > self.t_final * (1.0 + 1e-12):
                raise ValueError("checkpoints must lie in (0, t_final]")
        self.checkpoint_grid()

    def checkpoint_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Checkpoint times snapped to the step grid: (times, step indices)."""
        t = self.checkpoints
        if t is None:
            t = default_checkpoints(self.t_final, self.dt)
        steps = np.unique(np.rint(np.asarray(t, dtype=float) / self.dt).astype(np.int64))
        steps = steps[steps >= 1]
        if len(steps) == 0:
            raise ValueError("no checkpoints remain after snapping to the step grid")
        return steps * self.dt, steps


def step_guard_warnings(cfg: RunConfig) -> list[str]:
    """Step-size guard violations, recorded in run metadata (not fatal)."""
    dt_max = cfg.model.dt_max
    if cfg.dt > dt_max:
        return [f"dt={cfg.dt:g} exceeds the stability guard dt_max={dt_max:g} "
                f"for kind {cfg.model.kind.value}"]
    return []


def lattice_positions(indices: np.ndarray, particles: int, period: np.ndarray) -> np.ndarray:
    """Half-offset lattice over one cell, addressed by global particle index."""
    d = len(period)
    side = int(math.ceil(particles ** (1.0 / d) - 1e-9))
    pos = np.empty((len(indices), d))
    rem = np.asarray(indices, dtype=np.int64)
    for axis in range(d):
        pos[:, axis] = ((rem % side) + 0.5) * period[axis] / side
        rem = rem // side
    return pos


def _initial_positions(cfg: RunConfig, lo: int, hi: int) -> np.ndarray:
    period = cfg.model.flow.period_array
    if cfg.start == "point":
        point = (np.asarray(cfg.start_point, dtype=float)
                 if cfg.start_point is not None else 0.5 * period)
        return np.tile(point, (hi - lo, 1))
    return lattice_positions(np.arange(lo, hi), cfg.particles, period)


def _moment_sums(X: np.ndarray) -> tuple[np.ndarray, ...]:
    S2 = X.T @ X
    return (
        X.sum(axis=0),
        0.5 * (S2 + S2.T),
        np.einsum("pi,pj,pk->ijk", X, X, X),
        np.einsum("pi,pj,pk,pl->ijkl", X, X, X, X),
    )


def _simulate_block(cfg: RunConfig, lo: int, hi: int,
                    record_positions: bool = False) -> dict:
    """Simulate particles [lo, hi) and accumulate checkpoint moment sums."""
    m = cfg.model
    d, n = m.dim_d, m.dim_n
    B = hi - lo
    times, cp_steps = cfg.checkpoint_grid()
    C = len(cp_steps)
    stepper = Stepper(m, cfg.dt)

    gens = [particle_generator(cfg.seed, i) for i in range(lo, hi)]
    X = _initial_positions(cfg, lo, hi)
    X0 = X.copy()
    U = np.zeros((B, d)) if m.kind.is_inertial else None
    init_draws = np.empty((B, n))
    for b, g in enumerate(gens):
        g.standard_normal(out=init_draws[b])
    if cfg.mu_init == "ones":
        MU = np.ones((B, n))
    else:
        MU = init_draws @ stationary_sqrt(m.ou).T

    out = {
        "count": B,
        "sum_x": np.empty((C, d)),
        "sum_xx": np.empty((C, d, d)),
        "sum_x3": np.empty((C, d, d, d)),
        "sum_x4": np.empty((C, d, d, d, d)),
        "sum_usq": np.zeros(C),
    }
    positions = np.empty((C, B, d)) if record_positions else None

    def check_finite(step_index: int):
        bad = ~np.isfinite(X).all(axis=1)
        if U is not None:
            bad |= ~np.isfinite(U).all(axis=1)
        bad |= ~np.isfinite(MU).all(axis=1)
        if bad.any():
            particle = lo + int(np.argmax(bad))
            raise NumericalError(
                f"non-finite state for particle {particle} detected at step "
                f"{step_index} (kind={m.kind.value}, tau={m.tau:g}, "
                f"sigma={m.sigma:g}, delta={m.ou.delta:g}, dt={cfg.dt:g})")

    buf = np.empty((B, NOISE_CHUNK, d + n))
    step = 0
    cp_idx = 0
    last = int(cp_steps[-1])
    while step < last:
        L = min(NOISE_CHUNK, last - step)
        for b, g in enumerate(gens):
            g.standard_normal(out=buf[b, :L])
        tnoise = np.ascontiguousarray(buf[:, :L].transpose(1, 0, 2))
        for k in range(L):
            stepper.step(X, U, MU, tnoise[k])
            step += 1
            if cp_idx < C and step == cp_steps[cp_idx]:
                check_finite(step)
                s1, s2, s3, s4 = _moment_sums(X - X0)
                out["sum_x"][cp_idx] = s1
                out["sum_xx"][cp_idx] = s2
                out["sum_x3"][cp_idx] = s3
                out["sum_x4"][cp_idx] = s4
                if U is not None:
                    out["sum_usq"][cp_idx] = float(np.sum(U * U))
                if positions is not None:
                    positions[cp_idx] = X
                cp_idx += 1
        check_finite(step)
    if positions is not None:
        out["positions"] = positions
    return out


def _block_worker(args):
    cfg, lo, hi = args
    return _simulate_block(cfg, lo, hi)


_SUM_FIELDS = ("sum_x", "sum_xx", "sum_x3", "sum_x4", "sum_usq")


@dataclass(eq=False)
class EnsembleStats:
    """Per-checkpoint moment sums of the unwrapped particle displacements.

    Carries raw power sums up to fourth order; centered moments and their
    standard errors are computed at read time.  ``t_corr`` is the model's
    velocity-correlation time, used by the diffusivity estimator to group
    correlated checkpoints.
    """

    times: np.ndarray
    steps: np.ndarray
    dim: int
    count: int
    has_velocity: bool
    t_corr: float
    sum_x: np.ndarray
    sum_xx: np.ndarray
    sum_x3: np.ndarray
    sum_x4: np.ndarray
    sum_usq: np.ndarray

    # -- derived moments ---------------------------------------------------

    def mean(self) -> np.ndarray:
        """Ensemble mean position per checkpoint, (C, d)."""
        return self.sum_x / self.count

    def centered_covariance(self) -> np.ndarray:
        """Unbiased centered second moment per checkpoint, (C, d, d)."""
        if self.count < 2:
            raise ValueError("need at least 2 particles for centered moments")
        N = self.count
        m = self.mean()
        raw = self.sum_xx / N
        cov = raw - np.einsum("ci,cj->cij", m, m)
        return cov * (N / (N - 1.0))

    def centered_covariance_stderr(self) -> np.ndarray:
        """Delta-method standard error of the centered second moment.

        Per entry (i, j) this is the across-particle standard deviation of
        the centered displacement products d_i d_j divided by sqrt(N).
        """
        if self.count < 2:
            raise ValueError("need at least 2 particles for moment errors")
        N = self.count
        d = self.dim
        m = self.mean()
        M2 = self.sum_xx / N
        M3 = self.sum_x3 / N
        M4 = self.sum_x4 / N
        se = np.empty((len(self.times), d, d))
        for i in range(d):
            for j in range(d):
                c2 = M2[:, i, j] - m[:, i] * m[:, j]
                q = (M4[:, i, i, j, j]
                     - 2.0 * m[:, j] * M3[:, i, i, j]
                     - 2.0 * m[:, i] * M3[:, i, j, j]
                     + m[:, j] ** 2 * M2[:, i, i]
                     + m[:, i] ** 2 * M2[:, j, j]
                     + 4.0 * m[:, i] * m[:, j] * M2[:, i, j]
                     - 3.0 * m[:, i] ** 2 * m[:, j] ** 2)
                se[:, i, j] = np.sqrt(np.clip(q - c2**2, 0.0, None) / N)
        return se

    def mean_square_velocity(self) -> np.ndarray:
        """Diagnostic <|u|^2> per checkpoint (zeros for tracer kinds)."""
        return self.sum_usq / self.count

    # -- serialization -----------------------------------------------------

    def to_json(self) -> str:
        payload = {
            "schema": "effdiff-ensemble-stats-v1",
            "times": self.times.tolist(),
            "steps": self.steps.tolist(),
            "dim": self.dim,
            "count": self.count,
            "has_velocity": self.has_velocity,
            "t_corr": self.t_corr,
        }
        for name in _SUM_FIELDS:
            payload[name] = getattr(self, name).tolist()
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EnsembleStats":
        data = json.loads(text)
        if data.get("schema") != "effdiff-ensemble-stats-v1":
            raise ValueError("not an ensemble-stats document")
        return cls(
            times=np.asarray(data["times"], dtype=float),
            steps=np.asarray(data["steps"], dtype=np.int64),
            dim=int(data["dim"]),
            count=int(data["count"]),
            has_velocity=bool(data["has_velocity"]),
            t_corr=float(data["t_corr"]),
            **{name: np.asarray(data[name], dtype=float) for name in _SUM_FIELDS},
        )

    @classmethod
    def from_positions(cls, times: np.ndarray, X: np.ndarray,
                       t_corr: float = 0.0,
                       usq: np.ndarray | None = None,
                       steps: np.ndarray | None = None) -> "EnsembleStats":
        """Build stats from explicit checkpoint positions X of shape (C, N, d)."""
        X = np.asarray(X, dtype=float)
        C, N, d = X.shape
        times = np.asarray(times, dtype=float)
        sums = {name: [] for name in _SUM_FIELDS[:-1]}
        for c in range(C):
            s1, s2, s3, s4 = _moment_sums(X[c])
            sums["sum_x"].append(s1)
            sums["sum_xx"].append(s2)
            sums["sum_x3"].append(s3)
            sums["sum_x4"].append(s4)
        return cls(
            times=times,
            steps=np.arange(1, C + 1, dtype=np.int64) if steps is None else steps,
            dim=d,
            count=N,
            has_velocity=usq is not None,
            t_corr=t_corr,
            sum_x=np.array(sums["sum_x"]),
            sum_xx=np.array(sums["sum_xx"]),
            sum_x3=np.array(sums["sum_x3"]),
            sum_x4=np.array(sums["sum_x4"]),
            sum_usq=np.zeros(C) if usq is None else np.asarray(usq, dtype=float),
        )


def merge(a: EnsembleStats, b: EnsembleStats) -> EnsembleStats:
    """Componentwise sum of two stats over identical checkpoint grids."""
    if (a.dim != b.dim or a.has_velocity != b.has_velocity
            or a.t_corr != b.t_corr
            or not np.array_equal(a.times, b.times)
            or not np.array_equal(a.steps, b.steps)):
        raise ValueError("cannot merge stats with mismatched checkpoint grids")
    return EnsembleStats(
        times=a.times.copy(),
        steps=a.steps.copy(),
        dim=a.dim,
        count=a.count + b.count,
        has_velocity=a.has_velocity,
        t_corr=a.t_corr,
        **{name: getattr(a, name) + getattr(b, name) for name in _SUM_FIELDS},
    )


def empty_stats(template: EnsembleStats) -> EnsembleStats:
    """Identity element for merge on the same checkpoint grid."""
    return EnsembleStats(
        times=template.times.copy(),
        steps=template.steps.copy(),
        dim=template.dim,
        count=0,
        has_velocity=template.has_velocity,
        t_corr=template.t_corr,
        **{name: np.zeros_like(getattr(template, name)) for name in _SUM_FIELDS},
    )


def _kahan_add(total: np.ndarray, comp: np.ndarray, value: np.ndarray):
    y = value - comp
    t = total + y
    comp[:] = (t - total) - y
    total[:] = t


def run_ensemble(cfg: RunConfig, workers: int = 1) -> EnsembleStats:
    """Simulate the configured ensemble and return checkpoint statistics.

    The result is a pure function of (cfg, seed): running with any
    ``workers`` count yields byte-identical statistics (fixed particle
    blocks, canonical reduction order).
    """
    cfg.validate()
    m = cfg.model
    times, steps = cfg.checkpoint_grid()
    blocks = [(lo, min(lo + BLOCK_SIZE, cfg.particles))
              for lo in range(0, cfg.particles, BLOCK_SIZE)]

    if workers <= 1:
        parts = (_simulate_block(cfg, lo, hi) for lo, hi in blocks)
        totals = _reduce_blocks(parts, times, m)
    else:
        ctx = get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
            parts = ex.map(_block_worker, [(cfg, lo, hi) for lo, hi in blocks])
            totals = _reduce_blocks(parts, times, m)

    C, d = len(times), m.dim_d
    return EnsembleStats(
        times=times,
        steps=steps,
        dim=d,
        count=totals["count"],
        has_velocity=m.kind.is_inertial,
        t_corr=m.velocity_correlation_time,
        **{name: totals[name] for name in _SUM_FIELDS},
    )


def _reduce_blocks(parts, times, m: ModelParams) -> dict:
    C, d = len(times), m.dim_d
    shapes = {
        "sum_x": (C, d),
        "sum_xx": (C, d, d),
        "sum_x3": (C, d, d, d),
        "sum_x4": (C, d, d, d, d),
        "sum_usq": (C,),
    }
    totals = {name: np.zeros(shape) for name, shape in shapes.items()}
    comps = {name: np.zeros(shape) for name, shape in shapes.items()}
    count = 0
    for part in parts:
        count += part["count"]
        for name in _SUM_FIELDS:
            _kahan_add(totals[name], comps[name], part[name])
    totals["count"] = count
    return totals


def simulate_trajectories(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """Checkpoint positions (times, X[C, N, d]) for tiny debugging ensembles.

    Uses the same per-particle streams as run_ensemble, so the paths are the
    ones the statistics were accumulated from.  Limited to 16 particles.
    """
    cfg.validate()
    if cfg.particles > 16:
        raise ValueError("trajectory dumps are limited to 16 particles")
    part = _simulate_block(cfg, 0, cfg.particles, record_positions=True)
    times, _ = cfg.checkpoint_grid()
    return times, part["positions"]
