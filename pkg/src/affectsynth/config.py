"""TOML-backed configuration for the pipeline commands.

One document with [solver], [fit] and [pipeline] tables; anything not
present keeps its default, and CLI flags override file values.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .blendshape import SolverConfig
from .morphable import FitConfig


@dataclass(frozen=True)
class PipelineOptions:
    neutral_eps: float = 0.01
    preview_size: int = 256

    def __post_init__(self):
        if self.neutral_eps < 0:
            raise ValueError("neutral_eps must be >= 0")
        if self.preview_size <= 0:
            raise ValueError("preview_size must be positive")


@dataclass(frozen=True)
class AppConfig:
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(h=8))
    fit: FitConfig = field(default_factory=FitConfig)
    pipeline: PipelineOptions = field(default_factory=PipelineOptions)


def _build_section(cls, defaults, table: dict, path: Path):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ValueError(f"{path}: unknown {cls.__name__} keys {sorted(unknown)}")
    merged = dataclasses.asdict(defaults) if defaults is not None else {}
    merged.update(table)
    return cls(**merged)


def load_config(path: str | Path | None = None) -> AppConfig:
    """Configuration from a TOML file, or pure defaults when path is None."""
    if path is None:
        return AppConfig()
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    unknown = set(doc) - {"solver", "fit", "pipeline"}
    if unknown:
        raise ValueError(f"{path}: unknown sections {sorted(unknown)}")
    solver_table = dict(doc.get("solver", {}))
    solver_defaults = dataclasses.asdict(SolverConfig(h=8))
    solver_defaults.update(solver_table)
    return AppConfig(
        solver=SolverConfig(**solver_defaults),
        fit=_build_section(FitConfig, FitConfig(), dict(doc.get("fit", {})), path),
        pipeline=_build_section(
            PipelineOptions, PipelineOptions(), dict(doc.get("pipeline", {})), path
        ),
    )


def write_config(cfg: AppConfig, path: str | Path) -> None:
    """Emit the full configuration as a TOML document (every key listed)."""
    lines = []
    for section, obj in (("solver", cfg.solver), ("fit", cfg.fit), ("pipeline", cfg.pipeline)):
        lines.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, str):
                lines.append(f'{f.name} = "{value}"')
            elif isinstance(value, bool):
                lines.append(f"{f.name} = {str(value).lower()}")
            else:
                lines.append(f"{f.name} = {value}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")
