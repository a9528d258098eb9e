"""
Typed configuration for identification runs and experiments.

Precedence is defaults < config file < CLI flags. Config files are YAML
(JSON is accepted as well); validation errors name the offending key and,
for files, the line it sits on.
"""
from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from core.errors import ConfigError

METHODS = ("tt", "ht", "cp", "lift")
SCHEMES = ("tt", "ht", "cp", "sparse", "file")
KINDS = ("single-fit", "convergence", "noise", "scaling", "compare")

DEFAULT_SCALING_GRID = [8, 16, 32, 64, 100]
FULL_SCALING_GRID = [8, 16, 32, 64, 100, 200, 400]


def _check(cond: bool, key: str, message: str):
    if not cond:
        raise ConfigError(f"{key}: {message}")


def _known(cls, data: dict, prefix: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}: unknown key")
    return dict(data)


def _coerce(value, kind, key: str):
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {kind.__name__}, got {value!r}") from None


@dataclass
class IdentConfig:
    tol: float = 1e-8
    trunc: float = 1e-10
    max_sweeps: int = 200
    min_sweeps: int = 1
    rank_adapt: bool = False
    seed: int = 0
    tt_ranks: list[int] | None = None
    ht_ranks: list[int] | int | None = None
    ht_tree: list | None = None
    cp_rank: int | None = None
    ht_update: str = "jacobi"
    max_time: float | None = None
    rcond: float = 1e-12

    def __post_init__(self):
        self.validate()

    def validate(self, prefix: str = "ident."):
        _check(self.tol > 0, prefix + "tol", "must be > 0")
        _check(self.trunc >= 0, prefix + "trunc", "must be >= 0")
        _check(int(self.max_sweeps) >= 1, prefix + "max_sweeps", "must be >= 1")
        _check(1 <= int(self.min_sweeps) <= int(self.max_sweeps), prefix + "min_sweeps", "must lie in 1..max_sweeps")
        _check(self.ht_update in ("jacobi", "sequential"), prefix + "ht_update", "must be 'jacobi' or 'sequential'")
        _check(self.max_time is None or self.max_time > 0, prefix + "max_time", "must be positive")
        _check(self.cp_rank is None or int(self.cp_rank) >= 1, prefix + "cp_rank", "must be >= 1")
        if self.tt_ranks is not None:
            _check(
                len(self.tt_ranks) >= 2 and self.tt_ranks[0] == 1 and self.tt_ranks[-1] == 1
                and min(self.tt_ranks) >= 1,
                prefix + "tt_ranks", "must be positive with r_0 = r_k = 1",
            )

    @classmethod
    def from_dict(cls, data: dict | None, prefix: str = "ident.") -> "IdentConfig":
        data = _known(cls, data or {}, prefix)
        for key, kind in (("tol", float), ("trunc", float), ("rcond", float)):
            if key in data:
                data[key] = _coerce(data[key], kind, prefix + key)
        for key in ("max_sweeps", "min_sweeps", "seed"):
            if key in data:
                data[key] = _coerce(data[key], int, prefix + key)
        if data.get("max_time") is not None:
            data["max_time"] = _coerce(data["max_time"], float, prefix + "max_time")
        try:
            return cls(**data)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{prefix.rstrip('.')}: {e}") from None

    def replace(self, **changes) -> "IdentConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class NoiseSpec:
    sigma: float = 0.0
    mode: str = "relative"
    seed: int | None = None

    def __post_init__(self):
        _check(self.sigma >= 0, "noise.sigma", "must be >= 0")
        _check(self.mode in ("relative", "absolute"), "noise.mode", "must be 'relative' or 'absolute'")

    @classmethod
    def from_dict(cls, data, prefix: str = "noise.") -> "NoiseSpec":
        if isinstance(data, (int, float)):
            return cls(sigma=float(data))
        data = _known(cls, data or {}, prefix)
        if "sigma" in data:
            data["sigma"] = _coerce(data["sigma"], float, prefix + "sigma")
        return cls(**data)


@dataclass
class DatasetSpec:
    num_trajectories: int = 30
    steps: int = 10
    tau: float = 0.01
    half_width: float = 0.5
    blowup: float = 1e3
    seed: int | None = None
    path: str | None = None

    def __post_init__(self):
        _check(self.num_trajectories >= 1, "dataset.num_trajectories", "must be >= 1")
        _check(self.steps >= 1, "dataset.steps", "must be >= 1")
        _check(self.tau > 0, "dataset.tau", "must be > 0")
        _check(self.half_width > 0, "dataset.half_width", "must be > 0")
        _check(self.blowup > 0, "dataset.blowup", "must be > 0")

    @classmethod
    def from_dict(cls, data, prefix: str = "dataset.") -> "DatasetSpec":
        data = _known(cls, data or {}, prefix)
        for key in ("num_trajectories", "steps"):
            if key in data:
                data[key] = _coerce(data[key], int, prefix + key)
        for key in ("tau", "half_width", "blowup"):
            if key in data:
                data[key] = _coerce(data[key], float, prefix + key)
        return cls(**data)


@dataclass
class ModelSpec:
    scheme: str = "tt"
    n: int = 4
    k: int = 3
    ranks: list[int] | int | None = None
    tree: list | None = None
    sparsity: float = 0.001
    path: str | None = None

    def __post_init__(self):
        _check(self.scheme in SCHEMES, "model.scheme", f"must be one of {', '.join(SCHEMES)}")
        if self.scheme == "file":
            _check(bool(self.path), "model.path", "required for the file scheme")
            return
        _check(self.n >= 1, "model.n", "must be >= 1")
        _check(self.k >= 2, "model.k", "must be >= 2")
        _check(0 < self.sparsity <= 1, "model.sparsity", "must lie in (0, 1]")
        if self.scheme == "tt" and self.ranks is not None:
            _check(isinstance(self.ranks, list), "model.ranks", "TT ranks must be a list r_0..r_k")
            _check(len(self.ranks) == self.k + 1, "model.ranks", f"TT needs {self.k + 1} ranks for k={self.k}")
            _check(self.ranks[0] == 1 and self.ranks[-1] == 1, "model.ranks", "TT ranks need r_0 = r_k = 1")
            for p in range(1, self.k):
                _check(
                    1 <= self.ranks[p] <= min(self.ranks[p - 1] * self.n, self.n * self.ranks[p + 1]),
                    "model.ranks", f"r_{p} = {self.ranks[p]} is not attainable with n={self.n}",
                )
        if self.scheme == "ht" and isinstance(self.ranks, list):
            _check(len(self.ranks) == 2 * self.k - 1, "model.ranks", f"HT needs {2 * self.k - 1} node ranks for k={self.k}")
            _check(self.ranks[0] == 1, "model.ranks", "HT root rank must be 1")
        if self.scheme == "cp" and self.ranks is not None:
            _check(isinstance(self.ranks, int) and self.ranks >= 1, "model.ranks", "CP rank must be a positive integer")

    @classmethod
    def from_dict(cls, data, prefix: str = "model.") -> "ModelSpec":
        data = _known(cls, data or {}, prefix)
        for key in ("n", "k"):
            if key in data:
                data[key] = _coerce(data[key], int, prefix + key)
        if "sparsity" in data:
            data["sparsity"] = _coerce(data["sparsity"], float, prefix + "sparsity")
        return cls(**data)


@dataclass
class ExperimentConfig:
    kind: str = "single-fit"
    model: ModelSpec = field(default_factory=ModelSpec)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    ident: IdentConfig = field(default_factory=IdentConfig)
    noise: list[NoiseSpec] = field(default_factory=lambda: [NoiseSpec(0.0)])
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    out_dir: str = "runs/latest"
    seed: int = 0
    seeds: int = 1
    parallel: int = 1
    timeout: float = 120.0
    scaling_grid: list[int] = field(default_factory=lambda: list(DEFAULT_SCALING_GRID))
    scaling_k: int = 7
    scaling_rank: int = 3
    scaling_sweeps: int = 3
    scaling_trajectories: int = 2
    scaling_steps: int = 10
    full_grid: bool = False
    max_entries: int = 20_000_000
    lifting_mem_cap: int = 256 * 1024 * 1024
    log_level: str = "INFO"

    def __post_init__(self):
        _check(self.kind in KINDS, "kind", f"must be one of {', '.join(KINDS)}")
        for m in self.methods:
            _check(m in METHODS, "methods", f"unknown method {m!r}")
        _check(self.seeds >= 1, "seeds", "must be >= 1")
        _check(self.parallel >= 1, "parallel", "must be >= 1")
        _check(self.timeout > 0, "timeout", "must be > 0")
        _check(self.scaling_k >= 2, "scaling_k", "must be >= 2")
        _check(all(int(n) >= 1 for n in self.scaling_grid), "scaling_grid", "sizes must be positive")

    @property
    def grid(self) -> list[int]:
        if not self.full_grid:
            return list(self.scaling_grid)
        return sorted(set(self.scaling_grid) | set(FULL_SCALING_GRID))

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        data = _known(cls, data or {}, "")
        if "model" in data:
            data["model"] = ModelSpec.from_dict(data["model"])
        if "dataset" in data:
            data["dataset"] = DatasetSpec.from_dict(data["dataset"])
        if "ident" in data:
            data["ident"] = IdentConfig.from_dict(data["ident"])
        if "noise" in data:
            noise = data["noise"]
            noise = noise if isinstance(noise, list) else [noise]
            data["noise"] = [NoiseSpec.from_dict(item, f"noise.{i}.") for i, item in enumerate(noise)]
        if isinstance(data.get("methods"), str):
            data["methods"] = [data["methods"]]
        for key in ("seed", "seeds", "parallel", "scaling_k", "scaling_rank", "scaling_sweeps", "scaling_trajectories", "scaling_steps", "max_entries", "lifting_mem_cap"):
            if key in data:
                data[key] = _coerce(data[key], int, key)
        if "timeout" in data:
            data["timeout"] = _coerce(data["timeout"], float, "timeout")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, seed=None, out=None, method=None, parallel=None, full_grid=None, log_level=None) -> "ExperimentConfig":
        """Apply CLI flags on top of the loaded configuration."""
        changes: dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = int(seed)
            changes["ident"] = self.ident.replace(seed=int(seed))
        if out is not None:
            changes["out_dir"] = str(out)
        if method is not None:
            changes["methods"] = list(METHODS) if method == "all" else [method]
        if parallel is not None:
            changes["parallel"] = int(parallel)
        if full_grid:
            changes["full_grid"] = True
        if log_level is not None:
            changes["log_level"] = log_level
        return dataclasses.replace(self, **changes)


def _key_lines(node, prefix=()) -> dict[tuple, int]:
    """Map key paths of a composed YAML document to 1-based line numbers."""
    lines: dict[tuple, int] = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = prefix + (str(key_node.value),)
            lines[path] = key_node.start_mark.line + 1
            lines.update(_key_lines(value_node, path))
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = prefix + (str(i),)
            lines[path] = item.start_mark.line + 1
            lines.update(_key_lines(item, path))
    return lines


def _line_for(message: str, lines: dict[tuple, int]) -> int | None:
    key = message.split(":", 1)[0].strip()
    parts = tuple(p for p in key.split(".") if p)
    while parts:
        if parts in lines:
            return lines[parts]
        parts = parts[:-1]
    return None


def load_config(path: str | Path | None = None) -> ExperimentConfig:
    """Load an experiment configuration; a missing path gives the defaults."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError("configuration file not found", path=str(path)) from None
    try:
        data = yaml.safe_load(text)
        lines = _key_lines(yaml.compose(text))
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {e}", line=mark.line + 1 if mark else None, path=str(path)) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=1, path=str(path))
    try:
        return ExperimentConfig.from_dict(data)
    except ConfigError as e:
        message = str(e)
        raise ConfigError(message, line=_line_for(message, lines), path=str(path)) from None
    except TypeError as e:
        raise ConfigError(str(e), path=str(path)) from None
