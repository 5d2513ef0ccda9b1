"""Experiment configuration: TOML file plus command-line overrides.

The file carries one table per concern; every value has a default, so an
empty file is valid.  ``parse_toml(serialize(cfg)) == cfg`` round-trips.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError
from .im import Hyperparams
from .synth import SynthConfig

OUT_DIR_ENV = "INFLUCAST_OUT"

ALPHA_GRID = [round(0.1 * i, 1) for i in range(11)]
LAMBDA_GRID = [0.001, 0.005, 0.01, 0.015, 0.02]
K_GRID = [10, 20, 30, 40]


@dataclass
class GridConfig:
    alpha: List[float] = field(default_factory=lambda: list(ALPHA_GRID))
    lam: List[float] = field(default_factory=lambda: list(LAMBDA_GRID))
    k: List[int] = field(default_factory=lambda: list(K_GRID))

    def cells(self):
        for a in self.alpha:
            for lam in self.lam:
                for k in self.k:
                    yield a, lam, k


@dataclass
class BaselineConfig:
    uniform_ps: List[float] = field(default_factory=lambda: [0.1, 0.01, 0.001])
    mf_rank: int = 0  # 0 means: reuse the trained model's k
    mf_reg: float = 0.01
    mf_iters: int = 500
    em_max_iters: int = 100
    em_tol: float = 1e-6


@dataclass
class ExperimentConfig:
    seed: int = 42
    out_dir: str = "runs/experiment"
    cascades: str = ""           # path to a JSONL log for real-data runs
    boundaries: List[int] = field(default_factory=list)
    min_pair_total: int = 0      # pruning off unless configured
    max_pair_per_message: int = 0  # 0 means unlimited
    min_support: int = 1
    test_cascades_factor: float = 0.0  # 0 means: keep the profile's default
    shuffle_swaps_factor: float = 10.0
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: Hyperparams = field(default_factory=Hyperparams)
    grid: GridConfig = field(default_factory=GridConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)

    def resolved_out_dir(self) -> Path:
        return Path(os.environ.get(OUT_DIR_ENV, self.out_dir))


_SECTION_KEY_ALIASES = {"lambda": "lam"}


def _apply(section: dict, target) -> None:
    for key, value in section.items():
        attr = _SECTION_KEY_ALIASES.get(key, key)
        if not hasattr(target, attr):
            raise ConfigError(f"unknown configuration key {key!r} for {type(target).__name__}")
        current = getattr(target, attr)
        if isinstance(current, tuple):
            value = tuple(value)
        setattr(target, attr, value)


def parse_toml(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    cfg = ExperimentConfig()
    sections = {"synth": cfg.synth, "train": cfg.train, "grid": cfg.grid,
                "baselines": cfg.baselines}
    for key, value in data.items():
        if key in sections:
            if not isinstance(value, dict):
                raise ConfigError(f"section [{key}] must be a table")
            _apply(value, sections[key])
        elif key == "experiment":
            _apply(value, cfg)
        else:
            raise ConfigError(f"unknown configuration section {key!r}")
    return cfg


def load_config(path: Optional[str]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    file = Path(path)
    if not file.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_toml(file.read_text())


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize {value!r} to TOML")


def serialize(cfg: ExperimentConfig) -> str:
    """Emit the configuration as TOML (the inverse of parse_toml)."""
    lines: List[str] = ["[experiment]"]
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in ("synth", "train", "grid", "baselines"):
            continue
        lines.append(f"{f.name} = {_toml_value(getattr(cfg, f.name))}")
    for section, obj in (("synth", cfg.synth), ("train", cfg.train),
                         ("grid", cfg.grid), ("baselines", cfg.baselines)):
        lines.append("")
        lines.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            name = "lambda" if f.name == "lam" else f.name
            lines.append(f"{name} = {_toml_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"
