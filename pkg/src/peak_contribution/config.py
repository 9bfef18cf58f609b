# filepath: peak-contribution-module/src/peak_contribution/config.py
"""
Configuration settings for the peak contribution pipeline.

One dataclass per pipeline stage, gathered under ``PipelineConfig``. A config document is
TOML or JSON with one table per stage; the key names are the dataclass field names below.
"""

import dataclasses
import hashlib
import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from dotenv import load_dotenv

from .errors import ConfigError

SEASONS = ("spring", "summer", "autumn", "winter")
HOURS_PER_DAY = 24

ENV_SEED = "PEAK_SEED"
ENV_OUT_DIR = "PEAK_OUT_DIR"


def default_calendar() -> Dict[str, List[int]]:
    return {
        "spring": [3, 4, 5],
        "summer": [6, 7, 8],
        "autumn": [9, 10, 11],
        "winter": [12, 1, 2],
    }


@dataclass
class PathsConfig:
    out_dir: str = "out"
    readings: str = "sm_readings.csv"
    scada: str = "scada.csv"
    survey: str = "survey.csv"


@dataclass
class IngestConfig:
    z_threshold: float = 5.0


@dataclass
class SpectralConfig:
    phi: int = 7
    k_min: int = 2
    k_max: int = 15
    normalize_profiles: bool = True
    # "laplacian": k smallest of I - D^-1/2 W D^-1/2; "affinity": k largest of D^-1/2 W D^-1/2
    operator: str = "laplacian"
    dense_limit: int = 2000
    eig_tol: float = 1e-10
    residual_tol: float = 1e-8
    n_init: int = 10
    max_iter: int = 300
    kmeans_tol: float = 1e-6


@dataclass
class ClassifyConfig:
    ridge: float = 1e-3
    bias: bool = True
    coarse: bool = False
    k_folds: int = 5
    max_iter: int = 100
    tol: float = 1e-8
    # which feature vectors score the held-out folds: "survey" or "meter"
    eval_features: str = "survey"


@dataclass
class WcrConfig:
    split_ratio: float = 0.8
    clamp: bool = True
    # which feature vectors feed the classifier for held-out customers: "meter" or "survey"
    estimate_features: str = "meter"


@dataclass
class SynthConfig:
    n_customers: int = 400
    start: str = "2017-01-01"
    months: int = 12
    seed: int = 42
    archetypes: List[str] = field(default_factory=lambda: [
        "morning_peaker", "evening_peaker", "dual_peak", "flat", "midday_dip", "night_heavy",
    ])
    # empty means uniform over ``archetypes``
    archetype_weights: List[float] = field(default_factory=list)
    archetype_persistence: float = 0.75
    scale_median_kwh: float = 680.0
    scale_sigma: float = 0.45
    noise: float = 0.25
    day_noise: float = 0.10
    weather_noise: float = 0.15
    shape_jitter: float = 0.08
    weekend_factor: float = 1.08
    base_load_kw: float = 0.0
    label_noise: float = 0.55
    observable_fraction: float = 0.8

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("synth.seed must be an integer")
        if not self.archetypes:
            raise ConfigError("synth.archetypes must not be empty")
        if self.n_customers < 2 * len(self.archetypes):
            raise ConfigError(
                f"synth.n_customers={self.n_customers} is below twice the archetype count "
                f"({len(self.archetypes)})"
            )
        if self.months < 1:
            raise ConfigError("synth.months must be positive")
        if self.archetype_weights:
            if len(self.archetype_weights) != len(self.archetypes):
                raise ConfigError("synth.archetype_weights must align with synth.archetypes")
            if any(w < 0 for w in self.archetype_weights) or sum(self.archetype_weights) <= 0:
                raise ConfigError("synth.archetype_weights must be non-negative with a positive sum")
        for name in ("archetype_persistence", "label_noise"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"synth.{name} must lie in [0, 1]")
        if not 0.0 < self.observable_fraction < 1.0:
            raise ConfigError("synth.observable_fraction must lie in (0, 1)")
        for name in ("scale_sigma", "noise", "day_noise", "weather_noise", "shape_jitter", "base_load_kw"):
            if getattr(self, name) < 0:
                raise ConfigError(f"synth.{name} must be non-negative")
        if self.scale_median_kwh <= 0:
            raise ConfigError("synth.scale_median_kwh must be positive")


@dataclass
class BenchConfig:
    # "peak_hour": entropy of the daily peak-hour distribution; "consumption": of binned hourly load
    entropy_method: str = "peak_hour"
    entropy_bins: int = 10
    min_entropy_days: int = 7


@dataclass
class DrSimConfig:
    n_houses: int = 300
    fraction: float = 0.35
    elasticity: float = 0.21
    horizon_days: int = 28
    window_hours: int = 1
    # "YYYY-MM"; empty selects the month holding the largest feeder peak
    month: str = ""

    def validate(self) -> None:
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError("dr.fraction must lie in (0, 1]")
        if not 0.0 <= self.elasticity <= 1.0:
            raise ConfigError("dr.elasticity must lie in [0, 1]")
        if self.n_houses < 1 or self.horizon_days < 1:
            raise ConfigError("dr.n_houses and dr.horizon_days must be positive")
        if not 1 <= self.window_hours <= HOURS_PER_DAY:
            raise ConfigError("dr.window_hours must lie in [1, 24]")


@dataclass
class PipelineConfig:
    seed: int = 42
    paths: PathsConfig = field(default_factory=PathsConfig)
    calendar: Dict[str, List[int]] = field(default_factory=default_calendar)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)
    wcr: WcrConfig = field(default_factory=WcrConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    dr: DrSimConfig = field(default_factory=DrSimConfig)

    def validate(self) -> None:
        validate_calendar(self.calendar)
        if self.spectral.phi < 1:
            raise ConfigError("spectral.phi must be at least 1")
        if not 2 <= self.spectral.k_min <= self.spectral.k_max:
            raise ConfigError("spectral k range must satisfy 2 <= k_min <= k_max")
        if self.spectral.operator not in ("laplacian", "affinity"):
            raise ConfigError("spectral.operator must be 'laplacian' or 'affinity'")
        if self.classify.ridge <= 0:
            raise ConfigError("classify.ridge must be positive")
        if self.classify.k_folds < 2:
            raise ConfigError("classify.k_folds must be at least 2")
        if self.classify.eval_features not in ("survey", "meter"):
            raise ConfigError("classify.eval_features must be 'survey' or 'meter'")
        if self.wcr.estimate_features not in ("survey", "meter"):
            raise ConfigError("wcr.estimate_features must be 'survey' or 'meter'")
        if not 0.0 < self.wcr.split_ratio < 1.0:
            raise ConfigError("wcr.split_ratio must lie in (0, 1)")
        if self.bench.entropy_method not in ("peak_hour", "consumption"):
            raise ConfigError("bench.entropy_method must be 'peak_hour' or 'consumption'")
        self.synth.validate()
        self.dr.validate()

    @property
    def out_dir(self) -> Path:
        return Path(self.paths.out_dir)

    def resolve(self, name: str) -> Path:
        """Resolve an input path from ``paths`` against the output directory."""
        path = Path(getattr(self.paths, name))
        return path if path.is_absolute() else self.out_dir / path

    def season_of_month(self) -> Dict[int, str]:
        return {month: season for season, months in self.calendar.items() for month in months}


def validate_calendar(calendar: Dict[str, List[int]]) -> None:
    if set(calendar) != set(SEASONS):
        raise ConfigError(f"calendar must define exactly the seasons {SEASONS}")
    months = sorted(m for ms in calendar.values() for m in ms)
    if months != list(range(1, 13)):
        raise ConfigError("calendar must assign every month 1-12 to exactly one season")


def _build(cls, data: Any, section: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"section [{section}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        target = known[name].type
        if isinstance(target, type) and dataclasses.is_dataclass(target):
            kwargs[name] = _build(target, value, name)
        elif name == "calendar":
            kwargs[name] = {str(k): [int(m) for m in v] for k, v in value.items()}
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: Dict[str, Any]) -> PipelineConfig:
    config = _build(PipelineConfig, data, "root")
    config.validate()
    return config


def config_to_dict(config: PipelineConfig) -> Dict[str, Any]:
    return dataclasses.asdict(config)


def load_config(path: Optional[Union[str, Path]] = None) -> PipelineConfig:
    """Load a TOML or JSON config; ``None`` yields the defaults. Environment overrides apply."""
    if path is None:
        config = PipelineConfig()
        config.validate()
    else:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        if path.suffix == ".toml":
            with open(path, "rb") as f:
                data = tomllib.load(f)
        elif path.suffix == ".json":
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        else:
            raise ConfigError(f"unsupported config format: {path.suffix}")
        config = config_from_dict(data)
    return apply_env_overrides(config)


def apply_env_overrides(config: PipelineConfig) -> PipelineConfig:
    load_dotenv()
    seed = os.getenv(ENV_SEED)
    if seed:
        try:
            config.seed = int(seed)
        except ValueError as e:
            raise ConfigError(f"{ENV_SEED} must be an integer, got {seed!r}") from e
    out_dir = os.getenv(ENV_OUT_DIR)
    if out_dir:
        config.paths.out_dir = out_dir
    return config


def dump_config(config: PipelineConfig) -> str:
    return json.dumps(config_to_dict(config), sort_keys=True, indent=2)


def save_config(config: PipelineConfig, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_config(config) + "\n")


def config_hash(config: PipelineConfig) -> str:
    return hashlib.sha256(dump_config(config).encode("utf-8")).hexdigest()
