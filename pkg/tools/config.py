#!/usr/bin/env python3
"""
config.py
---------
Experiment, logging and server configuration.

Experiment files are YAML (JSON is accepted, being YAML) with an ``experiment``
section and an optional ``logging`` section; a flat file of experiment keys is
read as the ``experiment`` section. Unknown keys are rejected.

Example::

    experiment:
      problem: martingale-g
      payoff: call
      k_list: [4, 16, 64]
      p_max: 4
      lambda: 0.0
      n_paths: 10000
      seed: 7
    logging:
      level: INFO
"""

from __future__ import annotations

import copy
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)


class ExperimentConfig(BaseModel):
    """One doubly-indexed experiment: a reference problem, a k-list and a p-range."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    problem: str = "martingale-g"
    k_list: List[int] = Field(default_factory=lambda: [4, 8, 16])
    p_max: int = Field(default=4, ge=3)
    T: float = Field(default=1.0, gt=0)
    lam: float = Field(default=0.0, alias="lambda")
    beta_hat: Optional[float] = Field(default=None, gt=0)
    A_bar: float = Field(default=1.0, gt=0)
    n_paths: int = Field(default=10000, ge=1)
    seed: int = Field(default=2024, ge=0)
    tol: float = Field(default=0.05, gt=0)
    convention: Literal["Y_left", "Y_right"] = "Y_left"
    payoff: str = "square"
    strike: float = 0.0
    xi: float = 1.0
    jump_intensity: float = Field(default=0.0, ge=0)
    marks: List[float] = Field(default_factory=lambda: [1.0])
    mark_weights: Optional[List[float]] = None
    jump_coefficient: float = 1.0
    diffusion_coefficient: float = 0.0
    exact_cutoff: int = Field(default=16, ge=1)
    j1_paths: int = Field(default=200, ge=1)
    block_size: int = Field(default=2000, ge=1)
    workers: int = Field(default=1, ge=1)
    ui_delta: float = Field(default=0.25, gt=0)
    deterministic: bool = False

    @field_validator("k_list")
    @classmethod
    def _k_list_increasing(cls, v: List[int]) -> List[int]:
        if len(v) < 3:
            raise ValueError("k_list needs at least three refinements for the Moore-Osgood checks")
        if any(k < 1 for k in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("k_list must be strictly increasing positive integers")
        return v

    @model_validator(mode="after")
    def _marks_match(self) -> "ExperimentConfig":
        if self.mark_weights is not None and len(self.mark_weights) != len(self.marks):
            raise ValueError("mark_weights needs one weight per mark")
        return self

    def problem_params(self) -> Dict[str, Any]:
        """Keyword arguments for ``references.reference_problem``."""
        return {
            "T": self.T,
            "lam": self.lam,
            "payoff": self.payoff,
            "strike": self.strike,
            "xi": self.xi,
            "jump_intensity": self.jump_intensity,
            "marks": tuple(self.marks),
            "mark_weights": tuple(self.mark_weights) if self.mark_weights else None,
            "a": self.jump_coefficient,
            "b": self.diffusion_coefficient,
            "deterministic": self.deterministic,
        }

    def to_document(self) -> Dict[str, Any]:
        return self.model_dump(by_alias=True)


class LoggingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    level: str = "INFO"
    file: Optional[str] = None


class ServerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    host: str = "127.0.0.1"
    port: int = 8000
    debug: bool = False
    reload: bool = False
    max_experiment_paths: int = 20000
    max_experiment_k: int = 256


class LabConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)


DEFAULT_CONFIG: Dict[str, Dict[str, Any]] = {
    "experiment": {},
    "logging": {"level": "INFO"},
}

DEFAULT_SERVER_CONFIG: Dict[str, Dict[str, Any]] = {
    "server": {
        "host": "127.0.0.1",
        "port": 8000,
        "debug": False,
        "reload": False,
        "max_experiment_paths": 20000,
        "max_experiment_k": 256,
    },
    "logging": {"level": "INFO"},
}


def _read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, "r") as f:
        raw = yaml.safe_load(f)
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw


def _merge(defaults: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        if key in merged and isinstance(value, dict) and isinstance(merged[key], dict):
            merged[key].update(value)
        else:
            merged[key] = value
    return merged


def parse_config(raw: Dict[str, Any]) -> LabConfig:
    """Validate a configuration mapping; flat experiment keys are accepted."""
    if raw and not ({"experiment", "logging"} & set(raw)):
        raw = {"experiment": raw}
    try:
        return LabConfig.model_validate(_merge(DEFAULT_CONFIG, raw))
    except ValidationError as exc:
        raise ConfigError(f"Invalid configuration: {exc}") from exc


def load_config(config_path: Optional[Union[str, Path]] = None) -> LabConfig:
    """Read and validate an experiment configuration; defaults when no path is given."""
    if config_path is None:
        return parse_config({})
    path = Path(config_path)
    if not path.exists():
        raise ConfigError(f"Configuration file not found: {path}")
    try:
        raw = _read_yaml(path)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    cfg = parse_config(raw)
    logger.info("Loaded configuration %s (problem=%s)", path, cfg.experiment.problem)
    return cfg


def load_server_config(config_path: Optional[str] = None) -> Dict[str, Any]:
    """Server settings merged into the defaults; an unreadable file only warns."""
    config = copy.deepcopy(DEFAULT_SERVER_CONFIG)
    if config_path and Path(config_path).exists():
        try:
            config = _merge(config, _read_yaml(config_path))
        except Exception as e:
            logger.warning(f"Failed to load config from {config_path}: {e}")
    try:
        ServerConfig.model_validate(config["server"])
    except ValidationError as exc:
        logger.warning(f"Ignoring invalid server settings in {config_path}: {exc}")
        config["server"] = copy.deepcopy(DEFAULT_SERVER_CONFIG["server"])
    return config


def configure_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """Root logging setup for entry points."""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    logging.getLogger().setLevel(getattr(logging, level.upper(), logging.INFO))
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(log_file)
        handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
        logging.getLogger().addHandler(handler)
