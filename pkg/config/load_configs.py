import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import yaml

from models.materials import MaterialModel
from optimization.ncg import OptimizerConfig
from optimization.objective import ObjectiveParams
from solvers.state_solver import NewtonConfig
from utils.reporting import atomic_write_text

logger = logging.getLogger(__name__)

SCENARIOS = ("free", "constrained")
DUMP_MODES = ("none", "final", "all")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry (dotted path)."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass(frozen=True)
class MeshConfig:
    file: Optional[str] = None
    cells: Tuple[int, int, int] = (5, 3, 3)
    dims: Tuple[float, float, float] = (0.1, 0.02, 0.02)
    contact_fraction: float = 0.3
    design_depth: float = 0.4

    def __post_init__(self):
        if len(self.cells) != 3 or any(int(c) != c or c < 1 for c in self.cells):
            raise ValueError(f"cells must be three positive integers, got {self.cells}")
        if len(self.dims) != 3 or any(not d > 0.0 for d in self.dims):
            raise ValueError(f"dims must be three positive lengths, got {self.dims}")
        if not 0.0 < self.contact_fraction <= 0.5:
            raise ValueError(f"contact_fraction must lie in (0, 0.5], got {self.contact_fraction}")
        if not 0.0 < self.design_depth < 1.0:
            raise ValueError(f"design_depth must lie in (0, 1), got {self.design_depth}")


@dataclass(frozen=True)
class TimeConfig:
    T0: float = 0.0
    T1: float = 2.0
    steps: int = 100

    def __post_init__(self):
        if not self.T1 > self.T0:
            raise ValueError(f"T1 must exceed T0, got [{self.T0}, {self.T1}]")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")


@dataclass(frozen=True)
class ScalingConfig:
    L_ref: float = 0.1
    t_ref: Optional[float] = None
    theta_ref: float = 1500.0
    u_ref: Optional[float] = None

    def __post_init__(self):
        for name in ("L_ref", "t_ref", "theta_ref", "u_ref"):
            value = getattr(self, name)
            if value is not None and not value > 0.0:
                raise ValueError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class ProblemConfig:
    theta0: float = 290.0
    theta_l: float = 290.0

    def __post_init__(self):
        if not (self.theta0 > 0.0 and self.theta_l > 0.0):
            raise ValueError("temperatures must be positive (Kelvin)")


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs"
    dump_fields: str = "final"
    probes: Tuple[Tuple[float, float, float], ...] = ((0.05, 0.01, 0.02), (0.05, 0.01, 0.01))
    history: bool = True

    def __post_init__(self):
        if self.dump_fields not in DUMP_MODES:
            raise ValueError(f"dump_fields must be one of {DUMP_MODES}, got '{self.dump_fields}'")
        if any(len(p) != 3 for p in self.probes):
            raise ValueError("every probe needs three coordinates")


@dataclass(frozen=True)
class RunConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    materials: MaterialModel = field(default_factory=MaterialModel)
    time: TimeConfig = field(default_factory=TimeConfig)
    scaling: ScalingConfig = field(default_factory=ScalingConfig)
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    objective: ObjectiveParams = field(default_factory=ObjectiveParams)
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    scenario: str = "constrained"
    seed: int = 0
    log_level: str = "INFO"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got '{self.scenario}'")
        if self.log_level not in LOG_LEVELS:
            raise ValueError(f"log_level must be one of {LOG_LEVELS}, got '{self.log_level}'")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError(f"seed must be a nonnegative integer, got {self.seed}")
        theta_max = np.asarray(self.objective.theta_max, dtype=float)
        first = theta_max[0] if theta_max.ndim == 2 else theta_max
        floor = max(self.problem.theta0, self.problem.theta_l)
        if np.any(first < floor):
            raise ValueError(f"objective.theta_max must not lie below the initial and ambient temperatures ({floor} K)")


SECTIONS = {
    "mesh": MeshConfig,
    "materials": MaterialModel,
    "time": TimeConfig,
    "scaling": ScalingConfig,
    "problem": ProblemConfig,
    "objective": ObjectiveParams,
    "newton": NewtonConfig,
    "optimizer": OptimizerConfig,
    "output": OutputConfig,
}


def _coerce(value: Any, default: Any, key: str) -> Any:
    """Bring a YAML value into the shape of the field default.

    PyYAML reads exponents without a dot (``1e8``) as strings, so numeric
    fields accept numeric strings.
    """
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, f"expected a list, got {value!r}")
        inner = default[0] if default else 0.0
        return tuple(_coerce(v, inner, f"{key}[{i}]") for i, v in enumerate(value))
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        try:
            number = float(value)
        except ValueError:
            raise ConfigError(key, f"expected an integer, got {value!r}") from None
        if number != int(number):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(number)
    if isinstance(default, float) or key.endswith("_ref"):
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        try:
            return float(value)
        except ValueError:
            raise ConfigError(key, f"expected a number, got {value!r}") from None
    return value


def _build_section(cls, data: Any, prefix: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(prefix, f"expected a mapping, got {type(data).__name__}")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{prefix}.{unknown[0]}", "unknown key")
    kwargs = {name: _coerce(value, getattr(defaults, name), f"{prefix}.{name}") for name, value in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        word = str(e).split()[0] if str(e) else ""
        raise ConfigError(f"{prefix}.{word}" if word in names else prefix, str(e)) from e


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("", "configuration must be a mapping of sections")
    top_level = set(SECTIONS) | {"scenario", "seed", "log_level"}
    unknown = sorted(set(data) - top_level)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")

    sections = {name: _build_section(cls, data.get(name), name) for name, cls in SECTIONS.items()}
    defaults = RunConfig()
    scalars = {name: _coerce(data[name], getattr(defaults, name), name)
               for name in ("scenario", "seed", "log_level") if name in data}
    try:
        cfg = RunConfig(**sections, **scalars)
    except ValueError as e:
        raise ConfigError(str(e).split()[0], str(e)) from e

    if cfg.mesh.file is not None and not Path(cfg.mesh.file).is_file():
        raise ConfigError("mesh.file", f"mesh file '{cfg.mesh.file}' does not exist")
    return cfg


def load_config(config_path: Union[str, Path]) -> RunConfig:
    try:
        with open(config_path, "r") as file:
            data = yaml.safe_load(file)
    except OSError as e:
        raise ConfigError("", f"cannot read configuration '{config_path}': {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError("", f"malformed YAML in '{config_path}': {e}") from e

    try:
        cfg = config_from_dict(data or {})
    except ConfigError as e:
        logger.error(f"Error loading configuration: {e}")
        raise
    logger.info("Configuration loaded successfully")
    return cfg


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def dump_config(cfg: RunConfig) -> Dict[str, Any]:
    """Plain-data form of ``cfg``; ``config_from_dict(dump_config(cfg)) == cfg``."""
    out: Dict[str, Any] = {}
    for name in SECTIONS:
        section = getattr(cfg, name)
        out[name] = {f.name: _plain(getattr(section, f.name)) for f in dataclasses.fields(section)}
    out["scenario"] = cfg.scenario
    out["seed"] = cfg.seed
    out["log_level"] = cfg.log_level
    return out


def save_config(cfg: RunConfig, path: Union[str, Path]) -> Path:
    atomic_write_text(path, yaml.safe_dump(dump_config(cfg), sort_keys=False))
    return Path(path)


def with_overrides(cfg: RunConfig, **overrides: Any) -> RunConfig:
    """Apply CLI overrides; ``None`` values leave the configuration untouched."""
    out = cfg
    if overrides.get("out") is not None:
        out = dataclasses.replace(out, output=dataclasses.replace(out.output, directory=str(overrides["out"])))
    if overrides.get("dump_fields") is not None:
        try:
            out = dataclasses.replace(out, output=dataclasses.replace(out.output, dump_fields=overrides["dump_fields"]))
        except ValueError as e:
            raise ConfigError("output.dump_fields", str(e)) from e
    for name in ("scenario", "seed"):
        if overrides.get(name) is not None:
            try:
                out = dataclasses.replace(out, **{name: overrides[name]})
            except ValueError as e:
                raise ConfigError(name, str(e)) from e
    return out
