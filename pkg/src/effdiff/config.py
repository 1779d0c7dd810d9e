"""TOML run configuration: fail-closed parsing and resolved echoes.

Sections mirror the library types: [flow], [ou], [model], [run], plus
[sweep] for parametric studies, [desk] for desk-scale overrides, and
[output].  Unknown sections or keys are rejected outright so a typo cannot
silently fall back to a default.  Every command output embeds the fully
resolved configuration (defaults applied, overrides folded in), from which
the run can be reproduced.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .dynamics import ModelKind, ModelParams
from .ensemble import RunConfig
from .flow import FlowField, Mode, from_coefficient_table, from_stream_modes, taylor_green
from .limits import SWEEP_AXES, SweepSpec
from .ou import OUParams


class ConfigError(ValueError):
    """Invalid or unknown configuration content (CLI exit code 2)."""


_SCHEMA = {
    "flow": {"kind", "amplitude", "period", "modes", "entries"},
    "ou": {"alpha", "lambda", "delta"},
    "model": {"kind", "tau", "sigma", "white_tracer_scheme"},
    "run": {"particles", "dt", "t_final", "seed", "checkpoints",
            "window_fraction", "start", "start_point", "mu_init",
            "dump_trajectories"},
    "desk": {"particles", "dt", "t_final", "checkpoints"},
    "sweep": {"mode", "axis", "values", "paired_models", "deltas"},
    "output": {"dir", "write_stats"},
}

_REQUIRED_SECTIONS = ("flow", "ou", "model", "run")


def presets_dir() -> Path:
    return Path(__file__).parent / "presets"


def list_presets() -> list[str]:
    return sorted(p.stem for p in presets_dir().glob("*.toml"))


def resolve_config_path(value: str | Path) -> Path:
    """A config path, or the name of a shipped preset."""
    path = Path(value)
    if path.exists():
        return path
    if path.suffix == "" and path.parent == Path("."):
        candidate = presets_dir() / f"{value}.toml"
        if candidate.exists():
            return candidate
        raise ConfigError(f"no such file and no preset named {value!r} "
                          f"(presets: {', '.join(list_presets())})")
    raise ConfigError(f"config file not found: {value}")


def load_config(path: str | Path) -> dict:
    """Parse a TOML file (or preset name) and validate the schema (fail closed)."""
    resolved = resolve_config_path(path)
    try:
        with open(resolved, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {resolved}: {exc}") from exc
    validate_schema(raw)
    return raw


def validate_schema(raw: dict) -> None:
    for section in raw:
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(raw[section], dict):
            raise ConfigError(f"section [{section}] must be a table")
        for key in raw[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
    for section in _REQUIRED_SECTIONS:
        if section not in raw:
            raise ConfigError(f"missing required config section [{section}]")


def _modes_from_list(items, where: str) -> list[Mode]:
    modes = []
    for item in items:
        try:
            modes.append(Mode(tuple(int(k) for k in item["k"]),
                              float(item["amplitude"]), float(item["phase"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad mode entry in {where}: {item!r}") from exc
    return modes


def build_flow(sec: dict) -> FlowField:
    kind = sec.get("kind")
    amplitude = float(sec.get("amplitude", 1.0))
    try:
        if kind == "taylor-green":
            for forbidden in ("period", "modes", "entries"):
                if forbidden in sec:
                    raise ConfigError(f"flow key {forbidden!r} is fixed for taylor-green")
            return taylor_green(amplitude=amplitude)
        if kind == "stream-fourier":
            if "modes" not in sec:
                raise ConfigError("stream-fourier flow needs a 'modes' list")
            period = sec.get("period", (2.0 * math.pi, 2.0 * math.pi))
            groups = [_modes_from_list(group, "[flow].modes")
                      for group in sec["modes"]]
            return from_stream_modes(groups, period=period, amplitude=amplitude)
        if kind == "coefficient-table":
            if "entries" not in sec or "period" not in sec:
                raise ConfigError("coefficient-table flow needs 'entries' and 'period'")
            period = sec["period"]
            entries: dict[tuple[int, int], list[Mode]] = {}
            rows, cols = 0, 0
            for item in sec["entries"]:
                key = (int(item["row"]), int(item["col"]))
                mode = _modes_from_list([item], "[flow].entries")[0]
                entries.setdefault(key, []).append(mode)
                rows = max(rows, key[0] + 1)
                cols = max(cols, key[1] + 1)
            return from_coefficient_table(entries, dim_d=max(rows, len(period)),
                                          dim_n=max(cols, 1), period=period,
                                          amplitude=amplitude)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [flow] section: {exc}") from exc
    raise ConfigError(f"unknown flow kind {kind!r}")


def build_ou(sec: dict) -> OUParams:
    alpha = sec.get("alpha", 1.0)
    lam = sec.get("lambda", 1.0)
    delta = float(sec.get("delta", 1.0))
    try:
        A = np.diag([float(a) for a in alpha]) if isinstance(alpha, list) else float(alpha)
        if isinstance(lam, list):
            Lam = np.diag([float(v) ** 2 for v in lam])
        else:
            Lam = float(lam) ** 2
        return OUParams(A=A, Lambda=Lam, delta=delta)
    except ValueError as exc:
        raise ConfigError(f"invalid [ou] section: {exc}") from exc


def build_model(raw: dict) -> ModelParams:
    flow = build_flow(raw["flow"])
    ou = build_ou(raw["ou"])
    sec = raw["model"]
    try:
        kind = ModelKind(sec["kind"])
    except (KeyError, ValueError):
        raise ConfigError(f"[model].kind must be one of "
                          f"{[k.value for k in ModelKind]}")
    try:
        return ModelParams(
            tau=float(sec.get("tau", 0.0)),
            sigma=float(sec["sigma"]),
            flow=flow,
            ou=ou,
            kind=kind,
            white_tracer_scheme=sec.get("white_tracer_scheme", "heun"),
        )
    except KeyError as exc:
        raise ConfigError(f"missing [model] key: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"invalid [model] section: {exc}") from exc


def _resolve_checkpoints(value, dt: float, t_final: float) -> np.ndarray | None:
    if value is None:
        return None
    if isinstance(value, dict):
        unknown = set(value) - {"count", "t_min"}
        if unknown:
            raise ConfigError(f"unknown checkpoint keys {sorted(unknown)}")
        count = int(value.get("count", 64))
        t_min = float(value.get("t_min", max(dt, t_final / 512.0)))
        if t_min >= t_final:
            # An override shrank the horizon below the preset's grid start.
            t_min = max(dt, t_final / 512.0)
        return np.geomspace(t_min, t_final, count)
    return np.asarray([float(t) for t in value], dtype=float)


def build_run_config(raw: dict, overrides: dict | None = None,
                     desk_scale: bool = False) -> RunConfig:
    """Assemble a validated RunConfig from parsed TOML plus CLI/env overrides."""
    overrides = overrides or {}
    model = build_model(raw)
    run = dict(raw["run"])
    if desk_scale:
        if "desk" not in raw:
            raise ConfigError("--desk-scale requested but the config has no [desk] section")
        run.update(raw["desk"])

    particles = int(overrides.get("particles", run.get("particles", 3000)))
    dt = float(overrides.get("dt", run.get("dt", 1e-3)))
    t_final = float(overrides.get("t_final", run.get("t_final", 10.0)))
    seed = int(overrides.get("seed", run.get("seed", 0)))
    try:
        checkpoints = _resolve_checkpoints(run.get("checkpoints"), dt, t_final)
        start_point = run.get("start_point")
        cfg = RunConfig(
            model=model,
            particles=particles,
            dt=dt,
            t_final=t_final,
            checkpoints=checkpoints,
            seed=seed,
            start=run.get("start", "lattice"),
            start_point=None if start_point is None else tuple(float(v) for v in start_point),
            mu_init=run.get("mu_init", "stationary"),
            window_fraction=float(run.get("window_fraction", 0.5)),
            dump_trajectories=bool(run.get("dump_trajectories", False)),
        )
        cfg.validate()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [run] section: {exc}") from exc
    return cfg


def build_sweep(raw: dict, cfg: RunConfig) -> tuple[str, SweepSpec | None, tuple[float, ...]]:
    """Parse [sweep]: returns (mode, sweep spec or None, study deltas)."""
    if "sweep" not in raw:
        raise ConfigError("the sweep command needs a [sweep] section")
    sec = raw["sweep"]
    mode = sec.get("mode", "sweep")
    if mode == "sweep":
        axis = sec.get("axis")
        if axis not in SWEEP_AXES:
            raise ConfigError(f"[sweep].axis must be one of {SWEEP_AXES}")
        values = tuple(float(v) for v in sec.get("values", ()))
        spec = SweepSpec(base=cfg, axis=axis, values=values,
                         paired_models=bool(sec.get("paired_models", False)))
        try:
            spec.validate()
        except ValueError as exc:
            raise ConfigError(f"invalid [sweep] section: {exc}") from exc
        return mode, spec, ()
    if mode == "delta-study":
        deltas = tuple(float(v) for v in sec.get("deltas", ()))
        if len(deltas) < 2:
            raise ConfigError("[sweep].deltas needs at least two decreasing values")
        return mode, None, deltas
    raise ConfigError(f"unknown [sweep].mode {mode!r}")


def resolved_echo(raw: dict, cfg: RunConfig, desk_scale: bool) -> dict:
    """Fully resolved configuration mirror embedded in every output."""
    times, _ = cfg.checkpoint_grid()
    m = cfg.model
    a_diag = np.diag(m.ou.A).tolist()
    lam_diag = np.sqrt(np.diag(m.ou.Lambda)).tolist()
    echo = {
        "flow": {
            "kind": m.flow.kind.value,
            "amplitude": m.flow.amplitude,
            "period": list(m.flow.period),
        },
        "ou": {
            "alpha": a_diag[0] if len(a_diag) == 1 else a_diag,
            "lambda": lam_diag[0] if len(lam_diag) == 1 else lam_diag,
            "delta": m.ou.delta,
            "note": "Lambda = lambda^2",
        },
        "model": {
            "kind": m.kind.value,
            "tau": m.tau,
            "sigma": m.sigma,
            "white_tracer_scheme": m.white_tracer_scheme,
        },
        "run": {
            "particles": cfg.particles,
            "dt": cfg.dt,
            "t_final": cfg.t_final,
            "seed": cfg.seed,
            "checkpoints": times.tolist(),
            "window_fraction": cfg.window_fraction,
            "start": cfg.start,
            "mu_init": cfg.mu_init,
        },
        "desk_scale": desk_scale,
    }
    if "sweep" in raw:
        echo["sweep"] = dict(raw["sweep"])
    return echo
