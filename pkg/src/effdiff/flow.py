"""Spatially periodic velocity-field structure matrices.

The velocity field is v(x, t) = F(x) mu(t), where F maps a point of the
periodic cell to a d x n matrix and mu(t) is the n-dimensional modulation
process.  Three constructions are supported:

* Taylor-Green: the classical cellular flow with stream function
  psi(x) = sin(x1) sin(x2) on the 2*pi-periodic cell (d=2, n=1).
* Stream-function Fourier: one stream function per modulation component,
  given as a sum of sinusoidal modes; column j of F is the skew gradient
  (-d psi_j/dx2, d psi_j/dx1), hence exactly divergence free.
* Coefficient table: every entry F[row, col] given directly as a sum of
  sinusoidal modes.  Used for compressible test fields and constant flows.

All evaluations wrap positions into [0, period) by floored modulo before any
trigonometry, so unwrapped particle positions of arbitrary magnitude lose no
accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


class FlowKind(str, Enum):
    TAYLOR_GREEN = "taylor-green"
    STREAM_FOURIER = "stream-fourier"
    COEFFICIENT_TABLE = "coefficient-table"


class Mode(NamedTuple):
    """One sinusoidal mode a * sin(2*pi k.(x/L) + phase).

    ``wavevector`` holds integer indices k (one per axis); the spatial
    frequency along axis i is 2*pi*k_i/period_i.
    """

    wavevector: tuple[int, ...]
    amplitude: float
    phase: float


@dataclass(frozen=True, eq=False)
class FlowField:
    """Immutable periodic structure matrix F: cell -> R^{d x n}.

    Parameters
    ----------
    kind : FlowKind
        Construction used for evaluation.
    dim_d, dim_n : int
        Spatial dimension and number of modulation components.
    period : tuple of float
        Cell lengths, one per axis, all strictly positive.
    amplitude : float
        Global scalar multiplier; amplitude 0 gives the free particle.
    stream_modes : tuple of mode tuples, optional
        For stream-function kinds: modes of psi_j, one tuple per modulation
        component j.
    table : tuple, optional
        For coefficient tables: ``table[row][col]`` is a tuple of modes for
        the entry F[row, col].
    """

    kind: FlowKind
    dim_d: int
    dim_n: int
    period: tuple[float, ...]
    amplitude: float = 1.0
    stream_modes: tuple[tuple[Mode, ...], ...] | None = None
    table: tuple[tuple[tuple[Mode, ...], ...], ...] | None = None

    def __post_init__(self):
        if self.dim_d < 1 or self.dim_n < 1:
            raise ValueError("dim_d and dim_n must be positive")
        if len(self.period) != self.dim_d:
            raise ValueError("period length must equal dim_d")
        if any(p <= 0.0 for p in self.period):
            raise ValueError("period components must be strictly positive")
        if self.kind is FlowKind.TAYLOR_GREEN:
            if self.dim_d != 2 or self.dim_n != 1:
                raise ValueError("Taylor-Green flow is d=2, n=1")
        elif self.kind is FlowKind.STREAM_FOURIER:
            if self.dim_d != 2:
                raise ValueError("stream-function flows require d=2")
            if self.stream_modes is None or len(self.stream_modes) != self.dim_n:
                raise ValueError("need one mode list per modulation component")
            _check_modes(self.stream_modes, self.dim_d)
        elif self.kind is FlowKind.COEFFICIENT_TABLE:
            if self.table is None or len(self.table) != self.dim_d:
                raise ValueError("coefficient table must have dim_d rows")
            for row in self.table:
                if len(row) != self.dim_n:
                    raise ValueError("coefficient table rows must have dim_n entries")
                _check_modes(row, self.dim_d)

    @property
    def period_array(self) -> np.ndarray:
        return np.asarray(self.period, dtype=float)

    def wrap(self, z: np.ndarray) -> np.ndarray:
        """Floored modulo of positions into [0, period)."""
        return np.mod(z, self.period_array)


def _check_modes(groups, dim_d: int) -> None:
    for group in groups:
        for mode in group:
            if len(mode.wavevector) != dim_d:
                raise ValueError("mode wavevector length must equal dim_d")


def taylor_green(amplitude: float = 1.0) -> FlowField:
    """Taylor-Green cellular flow, psi = sin(x1) sin(x2), period 2*pi."""
    return FlowField(
        kind=FlowKind.TAYLOR_GREEN,
        dim_d=2,
        dim_n=1,
        period=(TWO_PI, TWO_PI),
        amplitude=amplitude,
    )


def taylor_green_modes() -> tuple[tuple[Mode, ...], ...]:
    """Fourier-mode representation of the Taylor-Green stream function.

    sin(x1) sin(x2) = 0.5 sin(x1 - x2 + pi/2) - 0.5 sin(x1 + x2 + pi/2).
    """
    half_pi = 0.5 * math.pi
    return ((Mode((1, -1), 0.5, half_pi), Mode((1, 1), -0.5, half_pi)),)


def from_stream_modes(
    stream_modes: Sequence[Sequence[Mode]],
    period: Sequence[float] = (TWO_PI, TWO_PI),
    amplitude: float = 1.0,
) -> FlowField:
    """Divergence-free flow from stream-function Fourier modes."""
    groups = tuple(tuple(Mode(tuple(m[0]), float(m[1]), float(m[2])) for m in g) for g in stream_modes)
    return FlowField(
        kind=FlowKind.STREAM_FOURIER,
        dim_d=2,
        dim_n=len(groups),
        period=tuple(float(p) for p in period),
        amplitude=amplitude,
        stream_modes=groups,
    )


def from_coefficient_table(
    entries: dict[tuple[int, int], Sequence[Mode]],
    dim_d: int,
    dim_n: int,
    period: Sequence[float],
    amplitude: float = 1.0,
) -> FlowField:
    """Flow with every F entry given directly as a mode sum.

    ``entries`` maps (row, col) to a sequence of modes; missing entries are
    identically zero.  No divergence-free structure is implied.
    """
    table = []
    for r in range(dim_d):
        row = []
        for c in range(dim_n):
            modes = entries.get((r, c), ())
            row.append(tuple(Mode(tuple(m[0]), float(m[1]), float(m[2])) for m in modes))
        table.append(tuple(row))
    return FlowField(
        kind=FlowKind.COEFFICIENT_TABLE,
        dim_d=dim_d,
        dim_n=dim_n,
        period=tuple(float(p) for p in period),
        amplitude=amplitude,
        table=tuple(table),
    )


def _mode_frequencies(mode: Mode, period: np.ndarray) -> np.ndarray:
    return TWO_PI * np.asarray(mode.wavevector, dtype=float) / period


def eval_F_batch(flow: FlowField, Z: np.ndarray) -> np.ndarray:
    """Evaluate F at a batch of positions.

    Parameters
    ----------
    Z : ndarray, shape (N, d)
        Positions; wrapped internally.

    Returns
    -------
    ndarray, shape (N, d, n)
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != flow.dim_d:
        raise ValueError(f"positions must have shape (N, {flow.dim_d})")
    W = flow.wrap(Z)
    N = W.shape[0]
    out = np.zeros((N, flow.dim_d, flow.dim_n))

    if flow.kind is FlowKind.TAYLOR_GREEN:
        s1, c1 = np.sin(W[:, 0]), np.cos(W[:, 0])
        s2, c2 = np.sin(W[:, 1]), np.cos(W[:, 1])
        out[:, 0, 0] = -s1 * c2
        out[:, 1, 0] = c1 * s2
    elif flow.kind is FlowKind.STREAM_FOURIER:
        period = flow.period_array
        for j, modes in enumerate(flow.stream_modes):
            gx = np.zeros(N)
            gy = np.zeros(N)
            for mode in modes:
                kappa = _mode_frequencies(mode, period)
                cosarg = np.cos(W @ kappa + mode.phase)
                gx += mode.amplitude * kappa[0] * cosarg
                gy += mode.amplitude * kappa[1] * cosarg
            out[:, 0, j] = -gy
            out[:, 1, j] = gx
    else:
        period = flow.period_array
        for r in range(flow.dim_d):
            for c in range(flow.dim_n):
                for mode in flow.table[r][c]:
                    kappa = _mode_frequencies(mode, period)
                    out[:, r, c] += mode.amplitude * np.sin(W @ kappa + mode.phase)

    if flow.amplitude != 1.0:
        out *= flow.amplitude
    return out


def eval_F(flow: FlowField, z: np.ndarray) -> np.ndarray:
    """Evaluate F at a single position; returns a (d, n) matrix."""
    z = np.asarray(z, dtype=float)
    if z.shape != (flow.dim_d,):
        raise ValueError(f"position must have shape ({flow.dim_d},), got {z.shape}")
    return eval_F_batch(flow, z[None, :])[0]


def eval_F_gradient(flow: FlowField, z: np.ndarray) -> np.ndarray:
    """Analytic gradient dF[k, j]/dz[l] at one position, shape (d, n, d)."""
    z = np.asarray(z, dtype=float)
    if z.shape != (flow.dim_d,):
        raise ValueError(f"position must have shape ({flow.dim_d},), got {z.shape}")
    w = flow.wrap(z[None, :])[0]
    grad = np.zeros((flow.dim_d, flow.dim_n, flow.dim_d))

    if flow.kind is FlowKind.TAYLOR_GREEN:
        s1, c1 = math.sin(w[0]), math.cos(w[0])
        s2, c2 = math.sin(w[1]), math.cos(w[1])
        grad[0, 0, 0] = -c1 * c2
        grad[0, 0, 1] = s1 * s2
        grad[1, 0, 0] = -s1 * s2
        grad[1, 0, 1] = c1 * c2
    elif flow.kind is FlowKind.STREAM_FOURIER:
        period = flow.period_array
        for j, modes in enumerate(flow.stream_modes):
            for mode in modes:
                kappa = _mode_frequencies(mode, period)
                sinarg = math.sin(float(w @ kappa) + mode.phase)
                # F[0,j] = -a*k2*cos(arg), F[1,j] = a*k1*cos(arg)
                grad[0, j, :] += mode.amplitude * kappa[1] * sinarg * kappa
                grad[1, j, :] += -mode.amplitude * kappa[0] * sinarg * kappa
    else:
        period = flow.period_array
        for r in range(flow.dim_d):
            for c in range(flow.dim_n):
                for mode in flow.table[r][c]:
                    kappa = _mode_frequencies(mode, period)
                    cosarg = math.cos(float(w @ kappa) + mode.phase)
                    grad[r, c, :] += mode.amplitude * cosarg * kappa

    if flow.amplitude != 1.0:
        grad *= flow.amplitude
    return grad


@dataclass(frozen=True)
class ParityCheck:
    passes: bool
    max_violation: float
    samples: int
    tol: float


def check_parity(flow: FlowField, samples: int = 256, tol: float = 1e-12) -> ParityCheck:
    """Check the odd symmetry F(-z) = -F(z) at quasi-random cell points.

    Evaluates max over points of ||F(-z) + F(z)||_inf; passes iff the max
    does not exceed ``tol``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    from scipy.stats import qmc

    points = qmc.Halton(d=flow.dim_d, scramble=False).random(samples)
    Z = points * flow.period_array
    violation = eval_F_batch(flow, -Z) + eval_F_batch(flow, Z)
    max_violation = float(np.max(np.abs(violation))) if violation.size else 0.0
    return ParityCheck(passes=max_violation <= tol, max_violation=max_violation,
                       samples=samples, tol=tol)


# Central finite-difference stencils for the first derivative, by order.
_STENCILS = {
    2: ((-1, -0.5), (1, 0.5)),
    4: ((-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)),
}


def divergence_field(flow: FlowField, grid_per_axis: int = 64, order: int = 4) -> np.ndarray:
    """Finite-difference divergence of every column of F on a cell grid.

    Returns an array of shape (grid_per_axis**d, n): the divergence of column
    j at every grid point, computed with a central stencil of the given order
    and step period/grid_per_axis.
    """
    if grid_per_axis < 4:
        raise ValueError("grid_per_axis must be >= 4")
    if order not in _STENCILS:
        raise ValueError(f"order must be one of {sorted(_STENCILS)}")
    period = flow.period_array
    h = period / grid_per_axis
    axes = [np.arange(grid_per_axis) * h[i] for i in range(flow.dim_d)]
    grids = np.meshgrid(*axes, indexing="ij")
    Z = np.stack([g.ravel() for g in grids], axis=1)

    div = np.zeros((Z.shape[0], flow.dim_n))
    for i in range(flow.dim_d):
        shift = np.zeros(flow.dim_d)
        for offset, weight in _STENCILS[order]:
            shift[:] = 0.0
            shift[i] = offset * h[i]
            div += (weight / h[i]) * eval_F_batch(flow, Z + shift)[:, i, :]
    return div


def check_divergence_free(flow: FlowField, grid_per_axis: int = 64, order: int = 4) -> float:
    """Max |div F_col| over a cell grid and all columns."""
    return float(np.max(np.abs(divergence_field(flow, grid_per_axis, order))))
