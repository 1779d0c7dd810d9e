"""Command-line driver: simulate | sweep | validate.

Override precedence is flag > environment > config file; environment
variables mirror the flags with the EFFDIFF_ prefix (EFFDIFF_SEED,
EFFDIFF_PARTICLES, EFFDIFF_DT, EFFDIFF_T_FINAL, EFFDIFF_WORKERS,
EFFDIFF_OUT_DIR, EFFDIFF_DESK_SCALE).

Exit codes: 0 success, 2 configuration error, 3 numerical failure.

All outputs are UTF-8, LF line endings, '.' decimal CSV plus JSON summaries.
Every file embeds the resolved configuration, seed, package version, and any
step-guard warnings (CSVs in a '#' comment preamble), so a run is
reproducible from its own outputs; wall-clock time is recorded in the JSON
summaries only, keeping reruns byte-identical.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    build_run_config,
    build_sweep,
    load_config,
    resolved_echo,
)
from .diffusivity import DiffusivityEstimate, estimate_K
from .dynamics import ModelKind, NumericalError, check_hypoellipticity_rank
from .ensemble import RunConfig, run_ensemble, simulate_trajectories, step_guard_warnings
from .flow import FlowKind, check_divergence_free, check_parity
from .limits import apply_axis_value, run_sweep, scalar_diffusivity, white_noise_limit_study
from .ou import stationary_covariance, transition_matrices
from .verify import (
    LyapunovSpec,
    centering_check,
    generator_fd_check,
    lyapunov_drift_check,
    symmetry_check,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_ENV_PREFIX = "EFFDIFF_"

ESTIMATE_COLUMNS = (
    "kind", "tau", "sigma", "alpha", "lambda", "delta", "amplitude",
    "particles", "dt", "t_final", "seed", "window_lo", "window_hi", "n_window",
    "K11", "K22", "K12", "K21", "se11", "se22", "se12", "se21",
    "Ksym11", "Ksym22", "Ksym12", "Ksym21",
    "V1", "V2", "seV1", "seV2", "slope_diag", "sigma2_over_2",
)

SWEEP_COLUMNS = ("axis", "value") + ESTIMATE_COLUMNS + ("error",)


def _fmt(value) -> str:
    if isinstance(value, float):          # includes numpy scalars
        return repr(float(value))
    return str(value)


def _estimate_row(cfg: RunConfig, est: DiffusivityEstimate | None) -> dict:
    m = cfg.model
    a_diag = np.diag(m.ou.A)
    l_diag = np.sqrt(np.diag(m.ou.Lambda))
    row = {
        "kind": m.kind.value,
        "tau": m.tau,
        "sigma": m.sigma,
        "alpha": ";".join(repr(float(a)) for a in a_diag) if len(a_diag) > 1 else float(a_diag[0]),
        "lambda": ";".join(repr(float(v)) for v in l_diag) if len(l_diag) > 1 else float(l_diag[0]),
        "delta": m.ou.delta,
        "amplitude": m.flow.amplitude,
        "particles": cfg.particles,
        "dt": cfg.dt,
        "t_final": cfg.t_final,
        "seed": cfg.seed,
        "sigma2_over_2": 0.5 * m.sigma**2,
    }
    if est is None or est.K.shape != (2, 2):
        # Failed point, or a flow outside the planar case the CSV encodes;
        # the JSON manifests carry the full matrices either way.
        for key in ESTIMATE_COLUMNS:
            row.setdefault(key, "")
        return row
    K, se = est.K, est.stderr
    row.update({
        "window_lo": est.window[0], "window_hi": est.window[1],
        "n_window": est.n_window,
        "K11": K[0, 0], "K22": K[1, 1], "K12": K[0, 1], "K21": K[1, 0],
        "se11": se[0, 0], "se22": se[1, 1], "se12": se[0, 1], "se21": se[1, 0],
        "Ksym11": est.K_sym[0, 0], "Ksym22": est.K_sym[1, 1],
        "Ksym12": est.K_sym[0, 1], "Ksym21": est.K_sym[1, 0],
        "V1": est.drift_V[0], "V2": est.drift_V[1],
        "seV1": est.drift_stderr[0], "seV2": est.drift_stderr[1],
        "slope_diag": est.slope_diag,
    })
    return row


def _write_csv(path: Path, columns, rows: list[dict], preamble: dict | None = None):
    """Frozen-column CSV with a '#' metadata preamble (gnuplot-compatible).

    The preamble carries the reproducibility metadata (version, seed, resolved
    config, warnings) but never the wall-clock, which would break the
    byte-identity of reruns; timing lives in the JSON summaries.
    """
    lines = []
    if preamble:
        for key, value in preamble.items():
            encoded = json.dumps(value, sort_keys=True) if not isinstance(value, str) else value
            lines.append(f"# {key} = {encoded}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(row.get(col, "")) for col in columns))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _csv_preamble(echo: dict, seed: int, warnings: list[str]) -> dict:
    return {"effdiff": __version__, "seed": seed, "warnings": warnings,
            "config": echo}


def _summary(command: str, echo: dict, seed: int, workers: int,
             wallclock: float, warnings: list[str], payload: dict) -> dict:
    return {
        "command": command,
        "version": __version__,
        "wallclock_seconds": wallclock,
        "seed": seed,
        "workers": workers,
        "warnings": warnings,
        "config": echo,
        **payload,
    }


def _write_json(path: Path, data: dict):
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


# -- subcommands ---------------------------------------------------------------

def cmd_simulate(raw: dict, cfg: RunConfig, out_dir: Path, workers: int,
                 desk_scale: bool) -> int:
    t0 = time.perf_counter()
    warnings = step_guard_warnings(cfg)
    stats = run_ensemble(cfg, workers=workers)
    est = estimate_K(stats, cfg.window_fraction)
    wall = time.perf_counter() - t0

    payload = {"estimate": est.to_dict(),
               "free_reference": 0.5 * cfg.model.sigma**2}
    if cfg.model.dim_d == 2:
        sym = symmetry_check(est)
        payload["symmetry"] = {
            "diag_equal": sym.diag_equal, "offdiag_zero": sym.offdiag_zero,
            "diag_gap": sym.diag_gap, "diag_tol": sym.diag_tol,
            "offdiag_max": sym.offdiag_max,
        }
    echo = resolved_echo(raw, cfg, desk_scale)
    _write_csv(out_dir / "estimate.csv", ESTIMATE_COLUMNS,
               [_estimate_row(cfg, est)],
               _csv_preamble(echo, cfg.seed, warnings))
    if raw.get("output", {}).get("write_stats", False):
        (out_dir / "ensemble_stats.json").write_text(stats.to_json() + "\n",
                                                     encoding="utf-8")
    if cfg.dump_trajectories:
        times, paths = simulate_trajectories(cfg)
        _write_json(out_dir / "trajectories.json",
                    {"times": times.tolist(), "positions": paths.tolist()})
    _write_json(out_dir / "summary.json",
                _summary("simulate", echo, cfg.seed, workers, wall,
                         warnings, payload))
    print(f"simulate: K11={est.K[0, 0]:.6g} (+-{est.stderr[0, 0]:.2g}) "
          f"K22={est.K[1, 1]:.6g} window=[{est.window[0]:.4g}, {est.window[1]:.4g}]")
    return EXIT_OK


def cmd_sweep(raw: dict, cfg: RunConfig, out_dir: Path, workers: int,
              desk_scale: bool) -> int:
    mode, spec, deltas = build_sweep(raw, cfg)
    echo = resolved_echo(raw, cfg, desk_scale)
    t0 = time.perf_counter()
    if mode == "sweep":
        points = run_sweep(spec, workers=workers)
        rows = []
        manifest = []
        warnings: list[str] = []
        for pt in points:
            point_model = apply_axis_value(cfg.model, pt.axis, pt.value)
            if pt.kind is not point_model.kind:
                point_model = replace(point_model, kind=pt.kind)
            point_cfg = replace(cfg, model=point_model)
            row = _estimate_row(point_cfg, pt.estimate)
            row["axis"] = pt.axis
            row["value"] = pt.value
            row["error"] = pt.error or ""
            rows.append(row)
            warnings.extend(pt.warnings)
            manifest.append({
                "axis": pt.axis, "value": pt.value, "kind": pt.kind.value,
                "estimate": None if pt.estimate is None else pt.estimate.to_dict(),
                "free_reference": pt.free_reference,
                "error": pt.error,
            })
        wall = time.perf_counter() - t0
        _write_csv(out_dir / "sweep.csv", SWEEP_COLUMNS, rows,
                   _csv_preamble(echo, cfg.seed, sorted(set(warnings))))
        _write_json(out_dir / "sweep.json",
                    _summary("sweep", echo, cfg.seed, workers, wall,
                             sorted(set(warnings)), {"points": manifest}))
        print(f"sweep: {len(rows)} rows -> {out_dir / 'sweep.csv'}")
        return EXIT_OK

    study = white_noise_limit_study(deltas, cfg, workers=workers)
    wall = time.perf_counter() - t0
    rows = []
    k_white, se_white = scalar_diffusivity(study.white)
    for i, delta in enumerate(study.deltas):
        k_col, se_col = scalar_diffusivity(study.colored[i])
        rows.append({
            "delta": delta, "K_colored": k_col, "se_colored": se_col,
            "K_white": k_white, "se_white": se_white,
            "abs_diff": float(study.diffs[i]),
            "diff_se": float(study.diff_stderr[i]),
            "resolved": bool(study.resolved[i]),
        })
    columns = ("delta", "K_colored", "se_colored", "K_white", "se_white",
               "abs_diff", "diff_se", "resolved")
    _write_csv(out_dir / "delta_study.csv", columns, rows,
               _csv_preamble(echo, cfg.seed, list(study.warnings)))
    payload = {
        "points": rows,
        "rate": study.rate,
        "rate_stderr": study.rate_stderr,
        "rate_resolved": study.rate_resolved,
        "nonincreasing_within_errors": study.nonincreasing_within_errors(),
        "white_estimate": study.white.to_dict(),
    }
    _write_json(out_dir / "delta_study.json",
                _summary("sweep", echo, cfg.seed, workers, wall,
                         list(study.warnings), payload))
    rate_text = "unresolved" if study.rate is None else f"{study.rate:.3f}"
    print(f"delta-study: rate={rate_text} -> {out_dir / 'delta_study.json'}")
    return EXIT_OK


def cmd_validate(raw: dict, cfg: RunConfig, out_dir: Path, workers: int,
                 desk_scale: bool) -> int:
    t0 = time.perf_counter()
    m = cfg.model
    hard_pass = True
    report: dict = {}

    parity = check_parity(m.flow, samples=256, tol=1e-12)
    report["parity"] = {"passes": parity.passes,
                        "max_violation": parity.max_violation, "hard": False}

    div64 = check_divergence_free(m.flow, 64)
    div128 = check_divergence_free(m.flow, 128)
    if m.flow.kind in (FlowKind.TAYLOR_GREEN, FlowKind.STREAM_FOURIER):
        # Analytically divergence-free: the residual must be rounding noise or
        # shrink at the stencil's fourth order under grid refinement.
        div_ok = div128 <= max(1e-10, div64 / 8.0)
        hard_pass &= div_ok
        report["divergence_free"] = {"passes": div_ok, "max_div_grid64": div64,
                                     "max_div_grid128": div128, "hard": True}
    else:
        report["divergence_free"] = {"passes": None, "max_div_grid64": div64,
                                     "max_div_grid128": div128, "hard": False}

    if m.kind.is_inertial:
        rng = np.random.default_rng(cfg.seed)
        ranks = []
        full = True
        for _ in range(100):
            z = rng.random(m.dim_d) * m.flow.period_array
            mu = rng.standard_normal(m.dim_n)
            check = check_hypoellipticity_rank(m, z, mu)
            ranks.append(check.rank)
            full &= check.full
        hard_pass &= full
        report["hypoellipticity"] = {"passes": full, "min_rank": min(ranks),
                                     "dim": 2 * m.dim_d + m.dim_n, "hard": True}

    # Exactness of the modulation sampler (deterministic identities).
    E1, S1 = transition_matrices(m.ou, 2.0 * cfg.dt)
    Eh, Sh = transition_matrices(m.ou, cfg.dt)
    comp_err = float(max(np.abs(E1 - Eh @ Eh).max(),
                         np.abs(S1 @ S1.T - (Sh @ Sh.T + Eh @ (Sh @ Sh.T) @ Eh.T)).max()))
    C = stationary_covariance(m.ou)
    stat_err = float(np.abs(Eh @ C @ Eh.T + Sh @ Sh.T - C).max())
    ou_ok = comp_err <= 1e-12 and stat_err <= 1e-12
    hard_pass &= ou_ok
    report["modulation_exactness"] = {"passes": ou_ok,
                                      "composition_error": comp_err,
                                      "stationarity_error": stat_err, "hard": True}

    if m.kind is ModelKind.COLORED_INERTIAL and m.sigma > 0.0:
        spec = LyapunovSpec.from_model(m)
        drift = lyapunov_drift_check(m, spec, samples=100_000, radius=1e3,
                                     seed=cfg.seed)
        finite = math.isfinite(drift.fitted_beta)
        hard_pass &= finite
        report["lyapunov_drift"] = {
            "passes": finite, "fitted_beta": drift.fitted_beta,
            "textbook_beta": spec.beta,
            "textbook_beta_holds": drift.passes,
            "coeff_y": spec.coeff_y, "coeff_mu": spec.coeff_mu, "hard": True,
        }
        fd_err = generator_fd_check(m, spec, points=100, radius=10.0, seed=cfg.seed)
        fd_ok = fd_err < 1e-6
        hard_pass &= fd_ok
        report["generator_oracle"] = {"passes": fd_ok,
                                      "max_relative_error": fd_err, "hard": True}
        centering = centering_check(m, burn_in=20.0, horizon=200.0, seed=cfg.seed)
        report["centering"] = {
            "centered": centering.centered,
            "mean_velocity": centering.mean_velocity.tolist(),
            "stderr": centering.stderr.tolist(), "hard": False,
        }

    warnings = step_guard_warnings(cfg)
    report["step_guard"] = {"warnings": warnings, "hard": False}
    wall = time.perf_counter() - t0
    echo = resolved_echo(raw, cfg, desk_scale)
    _write_json(out_dir / "validate.json",
                _summary("validate", echo, cfg.seed, workers, wall, warnings,
                         {"checks": report, "all_hard_pass": hard_pass}))
    for name, entry in report.items():
        status = entry.get("passes", entry.get("centered", "info"))
        print(f"validate: {name}: {status}")
    print(f"validate: all hard checks pass: {hard_pass}")
    return EXIT_OK if hard_pass else 1


# -- argument plumbing ----------------------------------------------------------

def _env_overrides() -> dict:
    out = {}
    mapping = {"SEED": ("seed", int), "PARTICLES": ("particles", int),
               "DT": ("dt", float), "T_FINAL": ("t_final", float)}
    for env_key, (name, cast) in mapping.items():
        value = os.environ.get(_ENV_PREFIX + env_key)
        if value is not None:
            try:
                out[name] = cast(value)
            except ValueError as exc:
                raise ConfigError(f"bad {_ENV_PREFIX}{env_key}={value!r}") from exc
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="effdiff",
        description="Effective diffusivity of inertial particles in "
                    "time-modulated periodic flows (Monte Carlo).")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("simulate", "one ensemble run plus estimate"),
                           ("sweep", "parameter sweep or delta study"),
                           ("validate", "structural checks for a config")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="TOML config path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--particles", type=int, default=None)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--t-final", type=float, default=None)
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: EFFDIFF_WORKERS or 1)")
        p.add_argument("--out-dir", default=None)
        p.add_argument("--desk-scale", action="store_true",
                       help="apply the [desk] overrides of the preset")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config)
        overrides = _env_overrides()
        for name in ("seed", "particles", "dt", "t_final"):
            value = getattr(args, name)
            if value is not None:
                overrides[name] = value
        desk = args.desk_scale or os.environ.get(_ENV_PREFIX + "DESK_SCALE") == "1"
        cfg = build_run_config(raw, overrides, desk_scale=desk)

        workers = args.workers
        if workers is None:
            workers = int(os.environ.get(_ENV_PREFIX + "WORKERS", "1"))
        out_dir = args.out_dir or os.environ.get(_ENV_PREFIX + "OUT_DIR") \
            or raw.get("output", {}).get("dir", "effdiff-out")
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)

        handler = {"simulate": cmd_simulate, "sweep": cmd_sweep,
                   "validate": cmd_validate}[args.command]
        return handler(raw, cfg, out_path, workers, desk)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
