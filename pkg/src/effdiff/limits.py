"""Parametric sweep drivers and the rapid-decorrelation limit study.

Sweeps scan one axis (tau, sigma, alpha, lambda, delta) over a value grid,
optionally pairing each point with the counterpart model (colored <-> white)
for comparison curves.  Every grid point reuses the sweep's master seed, so
particle i sees identical driving noise at every axis value: curves are
smooth in the axis variable (common random numbers) and a rerun of the same
spec reproduces the table bit for bit.

The rapid-decorrelation study runs the colored model over a decreasing list
of correlation times delta plus the white model once, and fits the rate p in
|K_col(delta) - K_white| ~ delta^p using only statistically resolved points
(a log-log fit through points indistinguishable from zero is meaningless).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .diffusivity import DiffusivityEstimate, estimate_K
from .dynamics import ModelKind, ModelParams, NumericalError
from .ensemble import RunConfig, run_ensemble, step_guard_warnings
from .ou import OUParams

SWEEP_AXES = ("tau", "sigma", "alpha", "lambda", "delta")

_COUNTERPART = {
    ModelKind.COLORED_INERTIAL: ModelKind.WHITE_INERTIAL,
    ModelKind.WHITE_INERTIAL: ModelKind.COLORED_INERTIAL,
    ModelKind.COLORED_TRACER: ModelKind.WHITE_TRACER,
    ModelKind.WHITE_TRACER: ModelKind.COLORED_TRACER,
}


def counterpart_kind(kind: ModelKind) -> ModelKind:
    return _COUNTERPART[kind]


def apply_axis_value(model: ModelParams, axis: str, value: float) -> ModelParams:
    """Return a model with one swept parameter replaced coherently."""
    if axis == "tau":
        if not model.kind.is_inertial:
            raise ValueError("tau sweeps require an inertial kind")
        return replace(model, tau=float(value))
    if axis == "sigma":
        return replace(model, sigma=float(value))
    n = model.ou.dim
    if axis == "alpha":
        ou = OUParams(A=float(value) * np.eye(n), Lambda=model.ou.Lambda,
                      delta=model.ou.delta)
    elif axis == "lambda":
        ou = OUParams(A=model.ou.A, Lambda=float(value) ** 2 * np.eye(n),
                      delta=model.ou.delta)
    elif axis == "delta":
        ou = OUParams(A=model.ou.A, Lambda=model.ou.Lambda, delta=float(value))
    else:
        raise ValueError(f"unknown sweep axis {axis!r} (choose from {SWEEP_AXES})")
    return replace(model, ou=ou)


@dataclass(frozen=True)
class SweepSpec:
    """A base run plus one axis of values; optionally paired model kinds."""

    base: RunConfig
    axis: str
    values: tuple[float, ...]
    paired_models: bool = False

    def validate(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"axis must be one of {SWEEP_AXES}")
        if len(self.values) == 0:
            raise ValueError("sweep needs at least one axis value")
        if any(v <= 0.0 for v in self.values):
            raise ValueError("axis values must be positive")
        self.base.validate()


@dataclass(frozen=True)
class SweepPoint:
    axis: str
    value: float
    kind: ModelKind
    estimate: DiffusivityEstimate | None
    free_reference: float           # sigma^2 / 2 at this grid point
    warnings: tuple[str, ...]
    error: str | None = None


def _run_point(cfg: RunConfig, workers: int) -> tuple[DiffusivityEstimate, tuple[str, ...]]:
    stats = run_ensemble(cfg, workers=workers)
    return estimate_K(stats, cfg.window_fraction), tuple(step_guard_warnings(cfg))


def run_sweep(spec: SweepSpec, workers: int = 1) -> list[SweepPoint]:
    """One ensemble per grid point (and per paired kind); failures annotated."""
    spec.validate()
    points: list[SweepPoint] = []
    for value in spec.values:
        model = apply_axis_value(spec.base.model, spec.axis, value)
        kinds = [model.kind]
        if spec.paired_models:
            kinds.append(counterpart_kind(model.kind))
        for kind in kinds:
            point_model = model if kind is model.kind else replace(model, kind=kind)
            cfg = replace(spec.base, model=point_model)
            free_ref = 0.5 * point_model.sigma**2
            try:
                est, warns = _run_point(cfg, workers)
                points.append(SweepPoint(spec.axis, float(value), kind, est,
                                         free_ref, warns))
            except NumericalError as exc:
                points.append(SweepPoint(spec.axis, float(value), kind, None,
                                         free_ref, (), error=str(exc)))
    return points


def scalar_diffusivity(est: DiffusivityEstimate) -> tuple[float, float]:
    """Average of the diagonal entries and its standard error."""
    k = 0.5 * (est.K[0, 0] + est.K[1, 1])
    se = 0.5 * math.hypot(est.stderr[0, 0], est.stderr[1, 1])
    return k, se


@dataclass(frozen=True)
class WhiteNoiseLimitStudy:
    deltas: tuple[float, ...]
    colored: tuple[DiffusivityEstimate, ...]
    white: DiffusivityEstimate
    diffs: np.ndarray               # |K_col(delta) - K_white| (scalar K)
    diff_stderr: np.ndarray         # combined standard errors
    resolved: np.ndarray            # |diff| > 3 combined SE
    rate: float | None              # fitted p in |diff| ~ delta^p, if resolved
    rate_stderr: float | None
    warnings: tuple[str, ...]

    @property
    def rate_resolved(self) -> bool:
        return self.rate is not None

    def nonincreasing_within_errors(self, n_sigma: float = 3.0) -> bool:
        """Is |diff| non-increasing as delta decreases, within error bars?"""
        for i in range(len(self.deltas) - 1):
            slack = n_sigma * math.hypot(self.diff_stderr[i], self.diff_stderr[i + 1])
            if self.diffs[i + 1] > self.diffs[i] + slack:
                return False
        return True


def white_noise_limit_study(deltas, base: RunConfig,
                            workers: int = 1) -> WhiteNoiseLimitStudy:
    """Colored-model diffusivities over decreasing delta against the white model.

    ``base.dt`` must respect the guard dt <= min(deltas)/20 so that every
    colored run resolves its modulation; all runs share dt, horizon, and the
    master seed (common random numbers).
    """
    deltas = tuple(float(v) for v in deltas)
    if len(deltas) < 2 or any(v <= 0.0 for v in deltas):
        raise ValueError("need at least two positive deltas")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be strictly decreasing")
    if base.model.kind is not ModelKind.COLORED_INERTIAL:
        raise ValueError("the limit study starts from the colored inertial kind")
    if base.dt > min(deltas) / 20.0:
        raise ValueError(f"dt={base.dt:g} violates the guard dt <= min(delta)/20 "
                         f"= {min(deltas) / 20.0:g}")

    warnings: list[str] = []
    colored: list[DiffusivityEstimate] = []
    for delta in deltas:
        cfg = replace(base, model=apply_axis_value(base.model, "delta", delta))
        est, warns = _run_point(cfg, workers)
        colored.append(est)
        warnings.extend(warns)

    white_cfg = replace(base, model=replace(base.model, kind=ModelKind.WHITE_INERTIAL))
    white_est, warns = _run_point(white_cfg, workers)
    warnings.extend(warns)

    k_white, se_white = scalar_diffusivity(white_est)
    diffs = np.empty(len(deltas))
    diff_se = np.empty(len(deltas))
    for i, est in enumerate(colored):
        k, se = scalar_diffusivity(est)
        diffs[i] = abs(k - k_white)
        diff_se[i] = math.hypot(se, se_white)
    resolved = diffs > 3.0 * diff_se

    rate = rate_se = None
    if int(resolved.sum()) >= 2:
        x = np.log(np.asarray(deltas)[resolved])
        y = np.log(diffs[resolved])
        w = (diffs[resolved] / diff_se[resolved]) ** 2
        xbar = np.average(x, weights=w)
        ybar = np.average(y, weights=w)
        sxx = float(np.sum(w * (x - xbar) ** 2))
        if sxx > 0.0:
            rate = float(np.sum(w * (x - xbar) * (y - ybar)) / sxx)
            rate_se = float(1.0 / math.sqrt(sxx))

    return WhiteNoiseLimitStudy(
        deltas=deltas,
        colored=tuple(colored),
        white=white_est,
        diffs=diffs,
        diff_stderr=diff_se,
        resolved=resolved,
        rate=rate,
        rate_stderr=rate_se,
        warnings=tuple(warnings),
    )
