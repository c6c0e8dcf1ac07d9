"""
Configuration module for frax.

Defaults can be overridden from the ``[tool.frax]`` table of a
``pyproject.toml`` in the working directory, then by a run configuration
file with the sections ``[flow]``, ``[transport]`` and ``[output]``, and
finally by command-line flags.
"""

from __future__ import annotations

import copy
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

MODES = ("solve", "transport", "bench", "mesh")


def _load_toml(path: Path) -> Dict[str, Any]:
    try:
        import tomllib
    except ImportError:
        import tomli as tomllib  # type: ignore[no-redef]
    with open(path, "rb") as f:
        return tomllib.load(f)


class FraxConfig:
    """Layered configuration: defaults, pyproject.toml, run file, overrides."""

    # Default configuration values
    DEFAULT_CONFIG: Dict[str, Dict[str, Any]] = {
        "flow": {
            "benchmark": "",
            "level": 0,
            "max_level": 2,
            "reference_level": -1,
            "fitted": True,
            "subcase": "a",
            "mesh": "",
            "fractures": "",
            "geometry": "",
            "permeability": 1.0,
            "dirichlet": 0.0,
            "neumann": 0.0,
            "source": 0.0,
            "penalty": 1e6,
            "solver": "cholesky",
            "ordering": "rcm",
            "tolerance": 1e-10,
            "max_iterations": 20000,
            "preconditioner": "jacobi",
            "workers": 1,
        },
        "transport": {
            "enabled": True,
            "time_step": 5e-3,
            "final_time": 0.1,
            "porosity": 0.1,
            "fracture_porosity": 0.9,
            "initial": 0.0,
            "inflow": 1.0,
        },
        "output": {
            "directory": "frax-out",
            "vtk": True,
            "profiles": True,
            "samples": 200,
        },
    }

    def __init__(self, path: Optional[os.PathLike] = None, project_root: Optional[str] = None):
        self.project_root = project_root or os.getcwd()
        self._config = self._load_config(path)

    def _load_config(self, path: Optional[os.PathLike]) -> Dict[str, Dict[str, Any]]:
        """Load configuration from pyproject.toml and the run file."""
        config = copy.deepcopy(self.DEFAULT_CONFIG)

        pyproject_config = self._load_from_pyproject()
        if pyproject_config:
            self._merge(config, pyproject_config, "pyproject.toml [tool.frax]")

        if path is not None:
            self._merge(config, self._load_run_file(Path(path)), str(path))

        return config

    def _load_from_pyproject(self) -> Dict[str, Any]:
        """Load the [tool.frax] table; a missing or broken file is ignored."""
        pyproject_path = Path(self.project_root) / "pyproject.toml"
        if not pyproject_path.exists():
            return {}
        try:
            data = _load_toml(pyproject_path)
        except Exception:
            # If there's any error reading the file, continue with defaults
            logger.debug("ignoring unreadable %s", pyproject_path)
            return {}
        return data.get("tool", {}).get("frax", {})

    @staticmethod
    def _load_run_file(path: Path) -> Dict[str, Any]:
        if not path.exists():
            raise ConfigError(f"configuration file {path} does not exist")
        try:
            return _load_toml(path)
        except Exception as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc

    def _merge(self, config: Dict[str, Dict[str, Any]], update: Mapping[str, Any], source: str) -> None:
        for section, values in update.items():
            if section not in config:
                raise ConfigError(f"{source}: unknown section [{section}]")
            if not isinstance(values, Mapping):
                raise ConfigError(f"{source}: [{section}] must be a table")
            for key, value in values.items():
                if key not in config[section]:
                    raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
                config[section][key] = self._coerce(section, key, value, source)

    def _coerce(self, section: str, key: str, value: Any, source: str) -> Any:
        default = self.DEFAULT_CONFIG[section][key]
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{source}: [{section}] {key} must be true or false")
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{source}: [{section}] {key} must be an integer")
            return value
        if isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{source}: [{section}] {key} must be a number")
            return float(value)
        if not isinstance(value, str):
            raise ConfigError(f"{source}: [{section}] {key} must be a string")
        return value

    def override(self, section: str, key: str, value: Any) -> None:
        """Apply a command-line override."""
        if value is None:
            return
        self._merge(self._config, {section: {key: value}}, "command line")

    def get(self, section: str, key: str, default: Any = None) -> Any:
        """Get a configuration value."""
        return self._config.get(section, {}).get(key, default)

    def __getattr__(self, name: str) -> Any:
        """Allow accessing config sections as attributes."""
        if name.startswith("_"):
            raise AttributeError(name)
        if name in self._config:
            return dict(self._config[name])
        raise AttributeError(f"'{self.__class__.__name__}' object has no attribute '{name}'")

    @property
    def benchmark(self) -> str:
        """Get the benchmark id (empty for file-based problems)."""
        return self.get("flow", "benchmark", "")

    @property
    def level(self) -> int:
        """Get the refinement level."""
        return self.get("flow", "level", 0)

    @property
    def output_directory(self) -> Path:
        """Get the output directory."""
        return Path(self.get("output", "directory", "frax-out"))

    def run_config(self, mode: str) -> "RunConfig":
        return RunConfig.from_config(mode, self)


@dataclass(frozen=True)
class RunConfig:
    """Validated settings of one CLI run."""

    mode: str
    benchmark: str
    level: int
    max_level: int
    reference_level: int
    fitted: bool
    subcase: str
    mesh_path: Optional[Path]
    fractures_path: Optional[Path]
    geometry_path: Optional[Path]
    permeability: float
    dirichlet: float
    neumann: float
    source: float
    penalty: float
    solver: str
    ordering: str
    tolerance: float
    max_iterations: int
    preconditioner: str
    workers: int
    transport: bool
    time_step: float
    final_time: float
    porosity: float
    fracture_porosity: float
    initial: float
    inflow: float
    output_directory: Path
    write_vtk: bool
    write_profiles: bool
    samples: int

    @classmethod
    def from_config(cls, mode: str, config: FraxConfig) -> "RunConfig":
        flow, transport, output = config.flow, config.transport, config.output

        def optional_path(value: str) -> Optional[Path]:
            if not value:
                return None
            path = Path(value)
            if not path.exists():
                raise ConfigError(f"referenced file {path} does not exist")
            return path

        run = cls(
            mode=mode,
            benchmark=flow["benchmark"],
            level=flow["level"],
            max_level=flow["max_level"],
            reference_level=flow["reference_level"],
            fitted=flow["fitted"],
            subcase=flow["subcase"],
            mesh_path=optional_path(flow["mesh"]),
            fractures_path=optional_path(flow["fractures"]),
            geometry_path=optional_path(flow["geometry"]),
            permeability=flow["permeability"],
            dirichlet=flow["dirichlet"],
            neumann=flow["neumann"],
            source=flow["source"],
            penalty=flow["penalty"],
            solver=flow["solver"],
            ordering=flow["ordering"],
            tolerance=flow["tolerance"],
            max_iterations=flow["max_iterations"],
            preconditioner=flow["preconditioner"],
            workers=flow["workers"],
            transport=transport["enabled"],
            time_step=transport["time_step"],
            final_time=transport["final_time"],
            porosity=transport["porosity"],
            fracture_porosity=transport["fracture_porosity"],
            initial=transport["initial"],
            inflow=transport["inflow"],
            output_directory=Path(output["directory"]),
            write_vtk=output["vtk"],
            write_profiles=output["profiles"],
            samples=output["samples"],
        )
        run.validate()
        return run

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.level < 0 or self.max_level < 0:
            raise ConfigError("levels must not be negative")
        if self.reference_level >= 0 and self.reference_level <= self.max_level:
            raise ConfigError("reference_level must exceed max_level")
        if self.solver not in ("cholesky", "cg"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.ordering not in ("rcm", "amd"):
            raise ConfigError(f"unknown ordering {self.ordering!r}")
        if self.preconditioner not in ("jacobi", "none"):
            raise ConfigError(f"unknown preconditioner {self.preconditioner!r}")
        if self.subcase not in ("a", "b"):
            raise ConfigError(f"unknown subcase {self.subcase!r}")
        if not self.penalty > 0:
            raise ConfigError("penalty must be positive")
        if not self.time_step > 0 or self.final_time < self.time_step:
            raise ConfigError("need time_step > 0 and final_time >= time_step")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.samples < 2:
            raise ConfigError("samples must be at least 2")
        if not self.benchmark and self.mode != "bench" and self.mesh_path is None:
            raise ConfigError("either [flow] benchmark or [flow] mesh must be set")
        if self.mode == "bench" and not self.benchmark:
            raise ConfigError("bench mode needs [flow] benchmark")

    @property
    def effective_reference_level(self) -> int:
        return self.reference_level if self.reference_level >= 0 else self.max_level + 1
