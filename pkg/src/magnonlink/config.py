"""Experiment configuration: a YAML document validated against the known
schema, with defaults applied and unknown keys rejected."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from magnonlink.model import EffectiveParams, FullModelParams, ModelError
from magnonlink.dynamics import TimeGrid
from magnonlink.opensys import BathSpec, OpenSystemError

KINDS = ("closed", "envelope", "control", "opensys", "validate")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ControlSettings:
    """Control-experiment knobs; t_sweep runs every integer T in the
    inclusive range instead of the single total_time."""

    total_time: float = 45.0
    dt: float = 0.05
    lambda_a: tuple[float, float] = (25.0, 25.0)
    j_target: float = 1e-4
    field_bounds: tuple[float, float] = (0.7, 1.3)
    max_iterations: int = 500
    guess: tuple[float, float] = (1.0, 1.0)
    t_sweep: tuple[int, int] | None = None

    @property
    def n_cells(self) -> int:
        return max(1, int(round(self.total_time / self.dt)))


@dataclass(frozen=True)
class OpenSystemSettings:
    substeps: int | None = None
    compare_markov: bool = True
    n_traj: int = 0          # > 0 adds a QSD cross-check run
    method: str = "auto"


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    model: EffectiveParams | None = None
    full_model: FullModelParams | None = None
    grid: TimeGrid | None = None
    sample_times: np.ndarray | None = None
    initial_state: str = "m1"
    bath: BathSpec | None = None
    control: ControlSettings | None = None
    opensys: OpenSystemSettings = field(default_factory=OpenSystemSettings)
    output_prefix: str = "run"
    seed: int = 0


def _require_mapping(node, context: str) -> dict:
    if not isinstance(node, dict):
        raise ConfigError(f"{context} must be a mapping, got {type(node).__name__}")
    return node


def _take(node: dict, context: str, required: tuple[str, ...], optional: dict):
    """Pop known keys with defaults; reject anything left over."""
    out = {}
    for key in required:
        if key not in node:
            raise ConfigError(f"missing required field {key!r} in {context}")
        out[key] = node.pop(key)
    for key, default in optional.items():
        out[key] = node.pop(key, default)
    if node:
        raise ConfigError(f"unknown keys in {context}: {sorted(node)}")
    return out


def _model_params(node) -> EffectiveParams:
    node = dict(_require_mapping(node, "model"))
    fields = _take(
        node, "model",
        required=("omega_a", "g_m", "g_c", "j_a"),
        optional={"omega_b": 1.0, "omega_m": 1.0},
    )
    return EffectiveParams(**{k: float(v) for k, v in fields.items()})


def _full_model_params(node) -> FullModelParams:
    node = dict(_require_mapping(node, "full_model"))
    required = ("omega_a_prime", "delta_1", "delta_2", "Omega", "g_mb", "g_cb", "g_ca", "j_a")
    fields = _take(node, "full_model", required, {"omega_b_prime": 1.0, "omega_m": 1.0})
    return FullModelParams(**{k: float(v) for k, v in fields.items()})


def _grid(node, default_n_steps: int = 2000) -> TimeGrid:
    node = dict(_require_mapping(node, "grid"))
    fields = _take(node, "grid", ("t_end",), {"t_start": 0.0, "n_steps": default_n_steps})
    return TimeGrid(float(fields["t_start"]), float(fields["t_end"]), int(fields["n_steps"]))


def _bath(node) -> BathSpec:
    node = dict(_require_mapping(node, "bath"))
    fields = _take(node, "bath", ("gamma",), {"lambda_a": 0.0, "lambda_b": 0.0, "markov": False})
    return BathSpec(
        float(fields["gamma"]), float(fields["lambda_a"]), float(fields["lambda_b"]),
        bool(fields["markov"]),
    )


def _control(node) -> ControlSettings:
    node = dict(_require_mapping(node, "control"))
    fields = _take(
        node, "control", (),
        {
            "total_time": 45.0, "dt": 0.05, "lambda_a": (25.0, 25.0),
            "j_target": 1e-4, "field_bounds": (0.7, 1.3), "max_iterations": 500,
            "guess": (1.0, 1.0), "t_sweep": None,
        },
    )
    lam = fields["lambda_a"]
    lam = (float(lam), float(lam)) if np.isscalar(lam) else (float(lam[0]), float(lam[1]))
    bounds = tuple(float(b) for b in fields["field_bounds"])
    guess = tuple(float(g) for g in fields["guess"])
    sweep = fields["t_sweep"]
    if sweep is not None:
        sweep = (int(sweep[0]), int(sweep[1]))
        if sweep[1] < sweep[0]:
            raise ConfigError("t_sweep upper bound below lower bound")
    return ControlSettings(
        total_time=float(fields["total_time"]),
        dt=float(fields["dt"]),
        lambda_a=lam,
        j_target=float(fields["j_target"]),
        field_bounds=bounds,
        max_iterations=int(fields["max_iterations"]),
        guess=guess,
        t_sweep=sweep,
    )


def _opensys_settings(node) -> OpenSystemSettings:
    node = dict(_require_mapping(node, "opensys"))
    fields = _take(
        node, "opensys", (),
        {"substeps": None, "compare_markov": True, "n_traj": 0, "method": "auto"},
    )
    substeps = fields["substeps"]
    return OpenSystemSettings(
        substeps=None if substeps is None else int(substeps),
        compare_markov=bool(fields["compare_markov"]),
        n_traj=int(fields["n_traj"]),
        method=str(fields["method"]),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate an experiment config document."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"cannot parse {path}{where}: {exc}") from exc
    return parse_config(raw)


def parse_config(raw) -> ExperimentConfig:
    raw = dict(_require_mapping(raw, "config"))
    fields = _take(
        raw, "config", ("kind",),
        {
            "model": None, "full_model": None, "grid": None, "sample_times": None,
            "initial_state": "m1", "bath": None, "control": None, "opensys": None,
            "output_prefix": "run", "seed": 0,
        },
    )
    kind = str(fields["kind"])
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")

    try:
        model = None if fields["model"] is None else _model_params(fields["model"])
        full_model = (
            None if fields["full_model"] is None else _full_model_params(fields["full_model"])
        )
        grid = None if fields["grid"] is None else _grid(fields["grid"])
        bath = None if fields["bath"] is None else _bath(fields["bath"])
        control = None if fields["control"] is None else _control(fields["control"])
        osys = (
            OpenSystemSettings()
            if fields["opensys"] is None
            else _opensys_settings(fields["opensys"])
        )
    except (ModelError, OpenSystemError) as exc:
        raise ConfigError(str(exc)) from exc

    sample_times = fields["sample_times"]
    if sample_times is not None:
        sample_times = np.asarray([float(t) for t in sample_times])
        if sample_times.ndim != 1 or sample_times.size == 0:
            raise ConfigError("sample_times must be a non-empty list of times")

    if kind in ("closed", "envelope", "opensys") and model is None:
        raise ConfigError(f"kind {kind!r} requires a model section")
    needs_grid = kind in ("closed", "envelope") or (kind == "opensys" and control is None)
    if needs_grid and grid is None and sample_times is None:
        raise ConfigError(f"kind {kind!r} requires a grid or sample_times")
    if kind == "control" and (model is None or control is None):
        raise ConfigError("kind 'control' requires model and control sections")
    if kind == "opensys" and bath is None:
        raise ConfigError("kind 'opensys' requires a bath section")

    return ExperimentConfig(
        kind=kind,
        model=model,
        full_model=full_model,
        grid=grid,
        sample_times=sample_times,
        initial_state=str(fields["initial_state"]),
        bath=bath,
        control=control,
        opensys=osys,
        output_prefix=str(fields["output_prefix"]),
        seed=int(fields["seed"]),
    )


def config_echo(config: ExperimentConfig) -> str:
    """One-line YAML echo embedded in table metadata, sufficient to re-run."""
    def clean(obj):
        if hasattr(obj, "__dataclass_fields__"):
            return {k: clean(getattr(obj, k)) for k in obj.__dataclass_fields__}
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, tuple):
            return list(obj)
        return obj

    return yaml.safe_dump(clean(config), default_flow_style=True, width=10**9).strip()
